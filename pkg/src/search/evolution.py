"""
探索空間の進化探索

エイジング進化（FIFO の集団）で探索空間を探す。各世代で親を1つ選び、
ブロック種別の突然変異と幅ウィンドウの突然変異で子を2つ作り、最も古い2個体を取り除く
"""

import hashlib
import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from accmodel.lut import AccuracyLut
from core.archspace import SearchSpace, decode_space, min_architecture, random_space
from core.hyperspace import Hyperspace
from costmodel.predictor import LatencyPredictor, predict_latency
from search.qtscore import QtConfig, evaluate_qt
from utils.errors import ConfigError
from utils.rng import make_rng

logger = logging.getLogger(__name__)

MODES = ("both", "block", "width")


@dataclass
class EvolutionConfig:
    """
    進化探索の設定

    mode が block / width のときは、もう一方の次元を base_space の値に固定する
    """
    qt: QtConfig
    total_spaces: int = 5000
    population: int = 500
    sample_size: int = 125
    seed: int = 0
    feasibility_retry_cap: int = 20
    mode: str = "both"
    base_space: Optional[str] = None

    def __post_init__(self):
        if self.population < 1 or self.sample_size < 1:
            raise ConfigError("population と sample_size は 1 以上である必要があります")
        if not self.sample_size <= self.population <= self.total_spaces:
            raise ConfigError(
                f"S <= P <= N である必要があります (S={self.sample_size}, P={self.population}, "
                f"N={self.total_spaces})")
        if self.total_spaces > self.population and self.population % 2:
            raise ConfigError("2個追加・2個削除のため population は偶数である必要があります")
        if self.feasibility_retry_cap < 0:
            raise ConfigError("feasibility_retry_cap は 0 以上である必要があります")
        if self.mode not in MODES:
            raise ConfigError(f"mode は {MODES} のいずれかです: {self.mode}")

    @property
    def iterations(self) -> int:
        return (self.total_spaces - self.population) // 2

    def to_dict(self) -> dict:
        return {"total_spaces": self.total_spaces, "population": self.population,
                "sample_size": self.sample_size, "seed": self.seed,
                "feasibility_retry_cap": self.feasibility_retry_cap, "mode": self.mode,
                "base_space": self.base_space, "qt": self.qt.to_dict()}


@dataclass
class Individual:
    """集団の1個体（born は生成順の通し番号）"""
    space: SearchSpace
    score: float
    born: int

    @property
    def encoding(self) -> str:
        return self.space.encoding


@dataclass(frozen=True)
class Mutation:
    """突然変異の結果。stage は変更したステージ（0 始まり）、noop は変更できなかった場合"""
    child: SearchSpace
    stage: Optional[int]
    noop: bool = False


@dataclass
class IterationRecord:
    """1世代分の記録"""
    iteration: int
    parent: str
    children: List[str]
    scores: List[float]
    best: float
    evaluations: int

    def to_dict(self) -> dict:
        return {"iteration": self.iteration, "parent": self.parent, "children": self.children,
                "scores": self.scores, "best": self.best, "evaluations": self.evaluations}


@dataclass
class EvolutionLog:
    """
    進化探索のログ

    records は世代ごとの記録（追記のみ）、history は評価した順の (エンコーディング, スコア)
    """
    records: List[IterationRecord] = field(default_factory=list)
    history: List[Tuple[str, float]] = field(default_factory=list)

    def append(self, record: IterationRecord):
        self.records.append(record)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in self.records)

    def digest(self) -> str:
        """ログ全体の SHA-256"""
        payload = self.to_jsonl() + json.dumps(self.history)
        return hashlib.sha256(payload.encode('utf-8')).hexdigest()


# ---------------------------------------------------------------------------
# 突然変異
# ---------------------------------------------------------------------------

def _choose_stage(rng: np.random.Generator, candidates: Sequence[int],
                  preferred: Optional[int]) -> Optional[int]:
    if not candidates:
        return None
    if preferred is not None and preferred in candidates:
        return preferred
    return candidates[int(rng.integers(len(candidates)))]


def mutate_block_type(parent: SearchSpace, rng: np.random.Generator,
                      stage: Optional[int] = None) -> Mutation:
    """
    1ステージのブロックIDを、別の合法な値に一様に置き換える

    指定ステージの候補が1つしかなければ別のステージを選び直す。
    どのステージも変更できなければ親のコピーを noop として返す
    """
    hs = parent.hyperspace
    candidates = [i for i, spec in enumerate(hs.stages) if len(spec.block_choices) > 1]
    stage = _choose_stage(rng, candidates, stage)
    if stage is None:
        return Mutation(parent, None, True)
    current = parent.block_ids[stage]
    choices = [b for b in hs.stages[stage].block_choices if b != current]
    new_id = choices[int(rng.integers(len(choices)))]
    return Mutation(parent.with_stage(stage, block_id=new_id), stage)


def mutate_width(parent: SearchSpace, rng: np.random.Generator,
                 stage: Optional[int] = None) -> Mutation:
    """1ステージの幅ウィンドウの開始位置を、別の合法な値に一様に置き換える"""
    hs = parent.hyperspace
    candidates = [i for i, spec in enumerate(hs.stages) if spec.window_count > 1]
    stage = _choose_stage(rng, candidates, stage)
    if stage is None:
        return Mutation(parent, None, True)
    current = parent.width_starts[stage]
    choices = [w for w in range(hs.stages[stage].window_count) if w != current]
    new_start = choices[int(rng.integers(len(choices)))]
    return Mutation(parent.with_stage(stage, width_start=new_start), stage)


def feasibility_screen(child: Mutation, predictor: LatencyPredictor, t_max: float, cap: int,
                       remutate: Callable[[], Mutation],
                       min_latency: Optional[Callable[[SearchSpace], float]] = None) -> Tuple[Mutation, int]:
    """
    最小アーキテクチャが制約の最大値を超える子を棄却して、突然変異をやり直す

    cap 回やり直しても実行可能にならなければ最後の子をそのまま受け入れる（スコア 0 で淘汰される）

    Returns:
        (受け入れた子, やり直した回数)
    """
    if math.isinf(t_max):
        return child, 0
    if min_latency is None:
        def min_latency(space: SearchSpace) -> float:
            return predict_latency(predictor, min_architecture(space))
    attempts = 0
    while attempts < cap and min_latency(child.child) > t_max:
        child = remutate()
        attempts += 1
    return child, attempts


# ---------------------------------------------------------------------------
# 進化探索
# ---------------------------------------------------------------------------

class SpaceEvolution:
    """
    探索空間のエイジング進化

    スコアはエンコーディングごとにキャッシュする（同じシードの Q-T は決定的）
    """

    def __init__(self, hs: Hyperspace, cfg: EvolutionConfig, lut: AccuracyLut,
                 predictor: LatencyPredictor):
        self.hs = hs
        self.cfg = cfg
        self.lut = lut
        self.predictor = predictor
        self.rng = make_rng(cfg.seed)
        self.log = EvolutionLog()
        self.base = decode_space(cfg.base_space, hs) if cfg.base_space else None
        self._scores: Dict[str, float] = {}
        self._min_latency: Dict[str, float] = {}
        self._born = 0
        self.best: Optional[Individual] = None

    @property
    def evaluations(self) -> int:
        return len(self.log.history)

    def score(self, space: SearchSpace) -> float:
        """探索空間の Q-T 総スコア（キャッシュ付き）"""
        enc = space.encoding
        if enc not in self._scores:
            self._scores[enc] = evaluate_qt(space, self.lut, self.predictor, self.cfg.qt).total
        value = self._scores[enc]
        self.log.history.append((enc, value))
        return value

    def min_latency(self, space: SearchSpace) -> float:
        enc = space.encoding
        if enc not in self._min_latency:
            self._min_latency[enc] = predict_latency(self.predictor, min_architecture(space),
                                                     self.cfg.qt.precision)
        return self._min_latency[enc]

    def _restrict(self, space: SearchSpace) -> SearchSpace:
        # アブレーション：探索しない次元を base_space に固定
        if self.base is None or self.cfg.mode == "both":
            return space
        if self.cfg.mode == "block":
            return SearchSpace(self.hs, space.block_ids, self.base.width_starts)
        return SearchSpace(self.hs, self.base.block_ids, space.width_starts)

    def _individual(self, space: SearchSpace) -> Individual:
        ind = Individual(space, self.score(space), self._born)
        self._born += 1
        # 同点は先に評価した方を残す
        if self.best is None or ind.score > self.best.score:
            self.best = ind
        return ind

    def initialize(self) -> deque:
        """P 個のランダムな探索空間で集団を初期化"""
        population = deque()
        for _ in range(self.cfg.population):
            space = self._restrict(random_space(self.hs, self.rng))
            population.append(self._individual(space))
        logger.info("初期集団を生成しました: %d 個体, 最良 %.6f (%s)", len(population),
                    self.best.score, self.best.encoding)
        return population

    def _mutators(self) -> List[Callable[..., Mutation]]:
        if self.cfg.mode == "block":
            return [mutate_block_type, mutate_block_type]
        if self.cfg.mode == "width":
            return [mutate_width, mutate_width]
        return [mutate_block_type, mutate_width]

    def _child(self, parent: SearchSpace, mutator: Callable[..., Mutation], stage: int) -> Mutation:
        first = mutator(parent, self.rng, stage)
        child, _ = feasibility_screen(
            first, self.predictor, self.cfg.qt.t_max, self.cfg.feasibility_retry_cap,
            remutate=lambda: mutator(parent, self.rng),
            min_latency=self.min_latency,
        )
        return child

    def run(self, callback: Optional[Callable[[int, Sequence[Individual]], None]] = None
            ) -> Tuple[SearchSpace, EvolutionLog]:
        """
        進化探索を実行

        Args:
            callback: 各世代の後に (世代番号, 集団) で呼ばれる

        Returns:
            (全評価中で最良の探索空間, ログ)
        """
        population = self.initialize()
        iterations = self.cfg.iterations
        for it in range(iterations):
            # 集団から S 個を非復元抽出し、最良を親にする（同点は古い方）
            picks = self.rng.choice(len(population), size=self.cfg.sample_size, replace=False)
            candidates = [population[int(i)] for i in picks]
            parent = max(candidates, key=lambda ind: (ind.score, -ind.born))

            # 2つの突然変異で同じステージを使う
            stage = int(self.rng.integers(self.hs.num_stages))
            children = []
            for mutator in self._mutators():
                mutation = self._child(parent.space, mutator, stage)
                children.append(self._individual(mutation.child))

            population.extend(children)
            population.popleft()
            population.popleft()

            self.log.append(IterationRecord(
                iteration=it,
                parent=parent.encoding,
                children=[c.encoding for c in children],
                scores=[c.score for c in children],
                best=self.best.score,
                evaluations=self.evaluations,
            ))
            if callback is not None:
                callback(it, list(population))
            if (it + 1) % 100 == 0 or it + 1 == iterations:
                logger.info("世代 %d/%d: 最良 %.6f (%s)", it + 1, iterations, self.best.score,
                            self.best.encoding)

        return self.best.space, self.log


def initialize(hs: Hyperspace, population: int, seed: int, qt: QtConfig, lut: AccuracyLut,
               predictor: LatencyPredictor) -> List[Individual]:
    """P 個のランダムな探索空間を生成して評価（シードに対して決定的）"""
    cfg = EvolutionConfig(qt, total_spaces=population, population=population,
                          sample_size=population, seed=seed)
    return list(SpaceEvolution(hs, cfg, lut, predictor).initialize())


def evolve(hs: Hyperspace, cfg: EvolutionConfig, lut: AccuracyLut, predictor: LatencyPredictor,
           callback: Optional[Callable[[int, Sequence[Individual]], None]] = None
           ) -> Tuple[SearchSpace, EvolutionLog]:
    """
    探索空間の進化探索

    (N - P) / 2 世代を回し、評価したすべての探索空間の中で最良のものを返す
    """
    return SpaceEvolution(hs, cfg, lut, predictor).run(callback)


# ---------------------------------------------------------------------------
# ランダム探索との比較
# ---------------------------------------------------------------------------

def random_search(hs: Hyperspace, budget: int, qt: QtConfig, lut: AccuracyLut,
                  predictor: LatencyPredictor, seed: int = 0) -> Tuple[SearchSpace, EvolutionLog]:
    """
    同じ評価回数でのランダム探索

    Returns:
        (最良の探索空間, history のみを持つログ)
    """
    if budget < 1:
        raise ConfigError("budget は 1 以上である必要があります")
    rng = make_rng(seed)
    log = EvolutionLog()
    scores: Dict[str, float] = {}
    best: Optional[Tuple[float, SearchSpace]] = None
    for _ in range(budget):
        space = random_space(hs, rng)
        enc = space.encoding
        if enc not in scores:
            scores[enc] = evaluate_qt(space, lut, predictor, qt).total
        log.history.append((enc, scores[enc]))
        if best is None or scores[enc] > best[0]:
            best = (scores[enc], space)
    return best[1], log


def search_curve(history: Sequence[Tuple[str, float]], every: int = 500,
                 top: int = 10) -> List[Tuple[int, float]]:
    """
    every 回の評価ごとに、それまでの上位 top 個の（異なる）探索空間の平均スコア

    Returns:
        (評価回数, 平均スコア) のリスト
    """
    if every < 1:
        raise ConfigError("every は 1 以上である必要があります")
    best: Dict[str, float] = {}
    curve = []
    for i, (enc, score) in enumerate(history, start=1):
        best[enc] = score
        if i % every == 0 or i == len(history):
            values = sorted(best.values(), reverse=True)[:top]
            curve.append((i, float(np.mean(values))))
    return curve
