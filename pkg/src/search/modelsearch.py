"""
探索空間内のモデル探索

1つの探索空間の中で、レイテンシ制約を満たし代理精度が最大のアーキテクチャを
進化探索（トーナメント選択・ステージ単位の一点交叉・遺伝子ごとの突然変異・エリート保存）で探す
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from accmodel.lut import AccuracyLut
from core.archspace import (Architecture, LayerConfig, SearchSpace, StageConfig, StemConfig,
                            describe_architecture, sample_architecture, space_cardinality)
from core.precision import Precision
from costmodel.predictor import LatencyPredictor, predict_latency
from search.qtscore import ScoredArchitecture, score_architectures
from utils.errors import ConfigError, InfeasibleConstraint
from utils.rng import make_rng

logger = logging.getLogger(__name__)

RESULT_FORMAT = "model-search"
RESULT_VERSION = 1

ParetoPoint = Tuple[float, float, str]


@dataclass
class ModelSearchConfig:
    """モデル探索の設定"""
    constraint: float
    budget: int = 5000
    population: int = 100
    tournament: int = 10
    mutation_rate: float = 0.1
    crossover: float = 0.5
    seed: int = 0
    threads: int = 1
    precision: Precision = Precision.INT8

    def __post_init__(self):
        if self.constraint <= 0:
            raise ConfigError(f"レイテンシ制約は正である必要があります: {self.constraint}")
        if self.population < 1:
            raise ConfigError("population は 1 以上である必要があります")
        if self.budget < self.population:
            raise ConfigError("budget は population 以上である必要があります")
        if not 1 <= self.tournament <= self.population:
            raise ConfigError("tournament は 1 以上 population 以下である必要があります")
        for name in ("mutation_rate", "crossover"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ConfigError(f"{name} は (0, 1] の範囲である必要があります: {value}")
        if self.threads < 1:
            raise ConfigError("threads は 1 以上である必要があります")

    def to_dict(self) -> dict:
        return {"constraint": self.constraint, "budget": self.budget,
                "population": self.population, "tournament": self.tournament,
                "mutation_rate": self.mutation_rate, "crossover": self.crossover,
                "seed": self.seed, "precision": self.precision.value}


@dataclass
class ModelSearchResult:
    """モデル探索の結果"""
    space: str
    best: ScoredArchitecture
    front: List[ParetoPoint]
    evaluations: int
    generations: int
    history: List[float] = field(default_factory=list)

    def to_dict(self, cfg: Optional[ModelSearchConfig] = None) -> dict:
        d = {
            "format": RESULT_FORMAT,
            "version": RESULT_VERSION,
            "space": self.space,
            "best": {
                "key": self.best.arch.key(),
                "latency_ms": self.best.latency_ms,
                "proxy": self.best.proxy,
                "architecture": describe_architecture(self.best.arch),
            },
            "pareto_front": [{"latency_ms": lat, "proxy": proxy, "key": key}
                             for lat, proxy, key in self.front],
            "evaluations": self.evaluations,
            "generations": self.generations,
            "history": self.history,
        }
        if cfg is not None:
            d["config"] = cfg.to_dict()
        return d


def pareto_front(points: Iterable[ParetoPoint]) -> List[ParetoPoint]:
    """
    非劣解（低レイテンシ・高代理精度）を抽出

    レイテンシの昇順に並べ、代理精度が直前の最大値を真に上回る点だけを残す

    Returns:
        レイテンシ昇順・代理精度狭義単調増加の点のリスト
    """
    ordered = sorted(points, key=lambda p: (p[0], -p[1], p[2]))
    front: List[ParetoPoint] = []
    for point in ordered:
        if not front or point[1] > front[-1][1]:
            front.append(point)
    return front


# ---------------------------------------------------------------------------
# 遺伝的操作
# ---------------------------------------------------------------------------

def _choice(rng: np.random.Generator, seq: Sequence):
    return seq[int(rng.integers(len(seq)))]


def _mutate_stage(stage: StageConfig, rng: np.random.Generator, rate: float, depths: Sequence[int],
                  kernels: Sequence[int], widths: Sequence[int],
                  expands: Sequence[float]) -> StageConfig:
    layers = list(stage.layers)
    if rng.random() < rate:
        depth = _choice(rng, depths)
        while len(layers) < depth:
            layers.append(LayerConfig(_choice(rng, kernels), _choice(rng, widths), _choice(rng, expands)))
        layers = layers[:depth]
    mutated = []
    for layer in layers:
        kernel = _choice(rng, kernels) if rng.random() < rate else layer.kernel
        width = _choice(rng, widths) if rng.random() < rate else layer.width
        expand = _choice(rng, expands) if rng.random() < rate else layer.expand
        mutated.append(LayerConfig(kernel, width, expand))
    return StageConfig(stage.block_type, stage.activation, stage.stride, tuple(mutated))


def mutate_architecture(arch: Architecture, space: SearchSpace, rng: np.random.Generator,
                        rate: float) -> Architecture:
    """各遺伝子（解像度、ステム、深さ、層ごとのカーネル・幅・拡張率）を確率 rate で再サンプリング"""
    hs = space.hyperspace
    stem = hs.stem
    resolution = _choice(rng, hs.resolutions) if rng.random() < rate else arch.resolution
    conv_width = _choice(rng, stem.conv_widths) if rng.random() < rate else arch.stem.conv_width
    stem_block = _mutate_stage(arch.stem.block, rng, rate, stem.block_depths,
                               stem.block_kernel_choices, stem.block_widths, stem.block_expand_ratios)
    stages = tuple(
        _mutate_stage(stage, rng, rate, rs.depths, rs.kernels, rs.widths, rs.expands)
        for stage, rs in zip(arch.stages, space.stages)
    )
    return Architecture(
        resolution=resolution,
        stem=StemConfig(conv_width, arch.stem.conv_kernel, arch.stem.conv_stride,
                        arch.stem.conv_activation, stem_block),
        stages=stages,
        head=arch.head,
        granularity=arch.granularity,
        space_encoding=arch.space_encoding,
    )


def crossover_architectures(a: Architecture, b: Architecture, rng: np.random.Generator) -> Architecture:
    """
    ステージ単位の一点交叉

    切断点より前（解像度・ステムを含む）を a から、以降のステージを b から取る
    """
    point = int(rng.integers(1, len(a.stages) + 1))
    return Architecture(
        resolution=a.resolution,
        stem=a.stem,
        stages=a.stages[:point] + b.stages[point:],
        head=a.head,
        granularity=a.granularity,
        space_encoding=a.space_encoding,
    )


# ---------------------------------------------------------------------------
# 探索
# ---------------------------------------------------------------------------

class ModelSearch:
    """
    レイテンシ制約付きの進化的モデル探索

    評価はアーキテクチャのキーでキャッシュし、budget は異なるアーキテクチャの評価数で数える
    """

    def __init__(self, space: SearchSpace, lut: AccuracyLut, predictor: LatencyPredictor,
                 cfg: ModelSearchConfig):
        self.space = space
        self.lut = lut
        self.predictor = predictor
        self.cfg = cfg
        self.rng = make_rng(cfg.seed)
        self.cardinality = space_cardinality(space)
        self._evaluated: Dict[str, ScoredArchitecture] = {}

    @property
    def evaluations(self) -> int:
        return len(self._evaluated)

    def _exhausted(self) -> bool:
        return self.evaluations >= self.cfg.budget or self.evaluations >= self.cardinality

    def _evaluate(self, archs: Sequence[Architecture]) -> List[ScoredArchitecture]:
        # 未評価のものだけを、残り予算の範囲でまとめて評価
        fresh: List[Architecture] = []
        keys = set()
        for arch in archs:
            key = arch.key()
            if key in self._evaluated or key in keys:
                continue
            if self.evaluations + len(fresh) >= self.cfg.budget:
                break
            fresh.append(arch)
            keys.add(key)
        for scored in score_architectures(fresh, self.lut, self.predictor, self.cfg.precision,
                                          self.cfg.threads):
            self._evaluated[scored.arch.key()] = scored
        return [self._evaluated[a.key()] for a in archs if a.key() in self._evaluated]

    def _feasible(self, scored: ScoredArchitecture) -> bool:
        return scored.latency_ms <= self.cfg.constraint

    def initialize(self) -> List[ScoredArchitecture]:
        """
        棄却サンプリングで実行可能な初期集団を作る

        Raises:
            InfeasibleConstraint: 100 × population 回引いても実行可能な個体がない
        """
        cfg = self.cfg
        population: Dict[str, Architecture] = {}
        draws = 0
        seen = set()
        while (len(population) < cfg.population and draws < 100 * cfg.population
               and len(seen) < self.cardinality):
            arch = sample_architecture(self.space, self.rng)
            draws += 1
            key = arch.key()
            if key in seen:
                continue
            seen.add(key)
            if predict_latency(self.predictor, arch, cfg.precision) <= cfg.constraint:
                population[key] = arch
        if not population:
            raise InfeasibleConstraint(
                f"{self.space.encoding}: {draws} 回のサンプリングで {cfg.constraint:g} ms 以下の"
                f"アーキテクチャが見つかりません")
        scored = self._evaluate(list(population.values()))
        logger.info("初期集団: %d 個体 (%d 回サンプリング)", len(scored), draws)
        return sorted(scored, key=ScoredArchitecture.rank_key)

    def _tournament(self, population: Sequence[ScoredArchitecture]) -> Architecture:
        size = min(self.cfg.tournament, len(population))
        picks = self.rng.choice(len(population), size=size, replace=False)
        return min((population[int(i)] for i in picks), key=ScoredArchitecture.rank_key).arch

    def run(self) -> ModelSearchResult:
        """探索を実行し、最良のアーキテクチャと非劣解を返す"""
        cfg = self.cfg
        population = self.initialize()
        history = [population[0].proxy]
        produced = 0
        generations = 0
        while not self._exhausted() and produced < 10 * cfg.budget:
            children = []
            for _ in range(cfg.population):
                first = self._tournament(population)
                if self.rng.random() < cfg.crossover:
                    child = crossover_architectures(first, self._tournament(population), self.rng)
                else:
                    child = first
                children.append(mutate_architecture(child, self.space, self.rng, cfg.mutation_rate))
            produced += len(children)

            scored = [s for s in self._evaluate(children) if self._feasible(s)]
            merged = {s.arch.key(): s for s in population}
            for s in scored:
                merged.setdefault(s.arch.key(), s)
            # エリート保存：上位 population 個を残す
            population = sorted(merged.values(), key=ScoredArchitecture.rank_key)[:cfg.population]
            history.append(population[0].proxy)
            generations += 1
            if generations % 10 == 0:
                logger.info("世代 %d: 最良 %.6f, 評価 %d/%d", generations, population[0].proxy,
                            self.evaluations, cfg.budget)

        feasible = [s for s in self._evaluated.values() if self._feasible(s)]
        best = min(feasible, key=ScoredArchitecture.rank_key)
        front = pareto_front((s.latency_ms, s.proxy, s.arch.key()) for s in feasible)
        logger.info("モデル探索完了: 最良 %.6f (%.3f ms), 評価 %d, 世代 %d", best.proxy,
                    best.latency_ms, self.evaluations, generations)
        return ModelSearchResult(self.space.encoding, best, front, self.evaluations, generations, history)


def search_models(space: SearchSpace, lut: AccuracyLut, predictor: LatencyPredictor,
                  cfg: ModelSearchConfig) -> ModelSearchResult:
    """探索空間内でレイテンシ制約付きのモデル探索を行う"""
    return ModelSearch(space, lut, predictor, cfg).run()
