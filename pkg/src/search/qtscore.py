"""
Q-T スコア

探索空間から取り出したサブネットのうち、各レイテンシ制約を満たす上位 k 個の
精度代理指標の平均を制約ごとに求め、その（重み付き）和を探索空間の品質とする
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

from accmodel.lut import AccuracyLut, accuracy_proxy
from core.archspace import (Architecture, SearchSpace, enumerate_architectures, sample_architecture,
                            space_cardinality)
from core.precision import Precision
from costmodel.predictor import LatencyPredictor, predict_latency
from utils.errors import ConfigError
from utils.rng import make_rng

logger = logging.getLogger(__name__)

QT_REPORT_FORMAT = "qt-report"
QT_REPORT_VERSION = 1


def parse_constraints(text: str) -> Tuple[float, ...]:
    """"8,10,15" のような文字列をレイテンシ制約のタプルに変換"""
    try:
        values = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"レイテンシ制約の形式が不正です: {text!r}")
    if not values:
        raise ConfigError("レイテンシ制約が空です")
    return values


@dataclass
class QtConfig:
    """
    Q-T スコアの設定

    weights は制約ごとの重み（None なら全て 1）
    """
    constraints: Tuple[float, ...]
    num_samples: int = 5000
    top_k: int = 20
    seed: int = 0
    weights: Optional[Tuple[float, ...]] = None
    threads: int = 1
    precision: Precision = Precision.INT8

    def __post_init__(self):
        self.constraints = tuple(float(t) for t in self.constraints)
        if not self.constraints:
            raise ConfigError("レイテンシ制約が空です")
        if any(t <= 0 for t in self.constraints):
            raise ConfigError(f"レイテンシ制約は正である必要があります: {self.constraints}")
        if any(b <= a for a, b in zip(self.constraints, self.constraints[1:])):
            raise ConfigError(f"レイテンシ制約は狭義単調増加である必要があります: {self.constraints}")
        if self.top_k < 1:
            raise ConfigError("top_k は 1 以上である必要があります")
        if self.num_samples < self.top_k:
            raise ConfigError("num_samples は top_k 以上である必要があります")
        if self.weights is not None:
            self.weights = tuple(float(w) for w in self.weights)
            if len(self.weights) != len(self.constraints):
                raise ConfigError("weights の数が制約の数と一致しません")
            if any(w < 0 for w in self.weights):
                raise ConfigError("weights は非負である必要があります")
        if self.threads < 1:
            raise ConfigError("threads は 1 以上である必要があります")

    @property
    def t_max(self) -> float:
        return self.constraints[-1]

    @property
    def weight_vector(self) -> Tuple[float, ...]:
        return self.weights if self.weights is not None else (1.0,) * len(self.constraints)

    def to_dict(self) -> dict:
        return {"constraints": list(self.constraints), "num_samples": self.num_samples,
                "top_k": self.top_k, "seed": self.seed, "precision": self.precision.value,
                "weights": list(self.weight_vector), "threads": self.threads}


@dataclass(frozen=True)
class ScoredArchitecture:
    """レイテンシと代理精度を付けたアーキテクチャ"""
    arch: Architecture
    latency_ms: float
    proxy: float

    def rank_key(self):
        # 代理精度の降順、同点はレイテンシの昇順、さらにキー順
        return (-self.proxy, self.latency_ms, self.arch.key())

    def to_dict(self) -> dict:
        return {"key": self.arch.key(), "latency_ms": self.latency_ms, "proxy": self.proxy}


@dataclass
class ConstraintResult:
    """1つの制約に対する結果"""
    constraint: float
    score: float
    feasible_count: int
    top: List[ScoredArchitecture] = field(default_factory=list)


@dataclass
class QtReport:
    """Q-T スコアの結果"""
    space: str
    pool_size: int
    results: List[ConstraintResult]
    total: float

    @property
    def scores(self) -> List[float]:
        return [r.score for r in self.results]

    def to_dict(self) -> dict:
        return {
            "format": QT_REPORT_FORMAT,
            "version": QT_REPORT_VERSION,
            "space": self.space,
            "pool_size": self.pool_size,
            "total": self.total,
            "constraints": [
                {"latency_ms": r.constraint, "score": r.score, "feasible": r.feasible_count,
                 "top": [s.to_dict() for s in r.top]}
                for r in self.results
            ],
        }


def sample_pool(space: SearchSpace, num_samples: int, seed: int) -> List[Architecture]:
    """
    サンプルプールを作る

    num_samples が探索空間の大きさ以上なら全列挙、そうでなければ一様サンプリング。
    同じキーのアーキテクチャは最初の1つだけを残す
    """
    if num_samples >= space_cardinality(space):
        return list(enumerate_architectures(space))
    rng = make_rng(seed)
    pool = []
    seen = set()
    for _ in range(num_samples):
        arch = sample_architecture(space, rng)
        key = arch.key()
        if key not in seen:
            seen.add(key)
            pool.append(arch)
    return pool


def score_architectures(archs: Sequence[Architecture], lut: AccuracyLut, predictor: LatencyPredictor,
                        precision: Precision = Precision.INT8, threads: int = 1) -> List[ScoredArchitecture]:
    """
    アーキテクチャ列にレイテンシと代理精度を付ける

    threads > 1 でも結果の順序と値は逐次実行と同じ
    """
    def score(arch: Architecture) -> ScoredArchitecture:
        return ScoredArchitecture(arch, predict_latency(predictor, arch, precision),
                                  accuracy_proxy(lut, arch, precision))

    if threads > 1 and len(archs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            return list(executor.map(score, archs))
    return [score(a) for a in archs]


def rank_by_constraints(scored: Sequence[ScoredArchitecture], constraints: Sequence[float],
                        top_k: int, weights: Sequence[float]) -> Tuple[List[ConstraintResult], float]:
    """
    評価済みのプールから制約ごとのスコアと総スコアを求める

    すべての制約で同じプールを使うので、実行可能集合は制約の順に入れ子になる
    """
    ranked = sorted(scored, key=ScoredArchitecture.rank_key)
    results = []
    total = 0.0
    for t, w in zip(constraints, weights):
        feasible = [s for s in ranked if s.latency_ms <= t]
        top = feasible[:top_k]
        score = sum(s.proxy for s in top) / len(top) if top else 0.0
        results.append(ConstraintResult(t, score, len(feasible), top))
        total += w * score
    return results, total


def evaluate_qt(space: SearchSpace, lut: AccuracyLut, predictor: LatencyPredictor,
                cfg: QtConfig) -> QtReport:
    """
    探索空間の Q-T スコアを計算

    Args:
        space: 探索空間
        lut: 精度 LUT
        predictor: レイテンシ予測器
        cfg: Q-T 設定

    Returns:
        制約ごとのスコア、実行可能数、上位 k 個、総スコア
    """
    pool = sample_pool(space, cfg.num_samples, cfg.seed)
    scored = score_architectures(pool, lut, predictor, cfg.precision, cfg.threads)
    results, total = rank_by_constraints(scored, cfg.constraints, cfg.top_k, cfg.weight_vector)
    logger.debug("Q-T %s: %.6f (%s)", space.encoding, total,
                 ", ".join(f"{r.constraint:g}ms={r.score:.4f}/{r.feasible_count}" for r in results))
    return QtReport(space.encoding, len(pool), results, total)


def top_tier(space: SearchSpace, lut: AccuracyLut, predictor: LatencyPredictor, constraint: float,
             k: int = 20, seed: int = 0, num_samples: int = 5000) -> List[Architecture]:
    """制約 constraint の下での上位 k 個のアーキテクチャ（代理精度の降順）"""
    cfg = QtConfig((constraint,), num_samples=max(num_samples, k), top_k=k, seed=seed)
    report = evaluate_qt(space, lut, predictor, cfg)
    return [s.arch for s in report.results[0].top]
