"""
探索空間内のモデル探索のテスト
"""

import sys
import os

# srcディレクトリをパスに追加
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, os.path.join(project_root, 'src'))

import numpy as np
import pytest

from core.archspace import decode_space, sample_architecture, validate_architecture
from costmodel.predictor import predict_latency
from search.modelsearch import (ModelSearchConfig, crossover_architectures, mutate_architecture,
                                pareto_front, search_models)
from utils.errors import ConfigError, InfeasibleConstraint
from utils.rng import make_rng

from toy_fixtures import (brute_force_scores, brute_force_top, micro_hyperspace, toy_hyperspace,
                          toy_lut, toy_predictor)


def test_pareto_front_example():
    points = [(1.0, 0.5, "a"), (2.0, 0.4, "b"), (2.0, 0.6, "c"), (3.0, 0.6, "d"), (4.0, 0.9, "e")]
    assert [p[2] for p in pareto_front(points)] == ["a", "c", "e"]
    assert pareto_front([]) == []


def test_pareto_front_brute_force():
    """ランダムな点で、非劣解の定義と一致する"""
    rng = make_rng(0)
    points = [(float(lat), float(acc), str(i))
              for i, (lat, acc) in enumerate(zip(rng.random(200), rng.random(200)))]
    front = pareto_front(points)
    expected = [p for p in points
                if not any(q[0] < p[0] and q[1] > p[1] for q in points)]
    assert sorted(front) == sorted(expected)
    lats = [p[0] for p in front]
    accs = [p[1] for p in front]
    assert lats == sorted(lats)
    assert all(a < b for a, b in zip(accs, accs[1:]))


@pytest.mark.parametrize("kwargs", [
    {"constraint": 0.0},
    {"constraint": 1.0, "population": 0},
    {"constraint": 1.0, "budget": 10, "population": 20},
    {"constraint": 1.0, "population": 5, "tournament": 6},
    {"constraint": 1.0, "mutation_rate": 0.0},
    {"constraint": 1.0, "crossover": 1.5},
    {"constraint": 1.0, "threads": 0},
])
def test_config_errors(kwargs):
    with pytest.raises(ConfigError):
        ModelSearchConfig(**kwargs)


def test_mutation_stays_in_space():
    """突然変異・交叉の結果は探索空間の範囲内"""
    hs = toy_hyperspace()
    space = decode_space("11-10", hs)
    rng = make_rng(1)
    for _ in range(100):
        a = sample_architecture(space, rng)
        b = sample_architecture(space, rng)
        child = crossover_architectures(a, b, rng)
        validate_architecture(child, space)
        assert child.stem == a.stem and child.resolution == a.resolution
        assert child.stages[0] == a.stages[0]
        assert child.stages[1] in (a.stages[1], b.stages[1])
        validate_architecture(mutate_architecture(child, space, rng, 0.5), space)


@pytest.mark.parametrize("seed", range(5))
def test_micro_exhaustive(seed):
    """全8個の極小探索空間では全探索の最良と一致する"""
    hs = micro_hyperspace()
    space = decode_space("1-0", hs)
    lut = toy_lut(hs)
    pred = toy_predictor()
    rows = brute_force_scores(space, lut, pred)
    assert len(rows) == 8
    constraint = float(np.median([r[1] for r in rows]))
    cfg = ModelSearchConfig(constraint, budget=100, population=4, tournament=2, mutation_rate=0.5,
                            seed=seed)
    result = search_models(space, lut, pred, cfg)
    [expected] = brute_force_top(rows, constraint, 1)
    assert result.best.arch.key() == expected[2]
    assert result.best.proxy == pytest.approx(expected[0])
    assert result.evaluations == 8


@pytest.fixture(scope="module")
def toy_exhaustive():
    """探索空間 "11-01" の全アーキテクチャとレイテンシ中央値の制約"""
    hs = toy_hyperspace()
    space = decode_space("11-01", hs)
    lut = toy_lut(hs, noise=0.05)
    pred = toy_predictor()
    rows = brute_force_scores(space, lut, pred)
    constraint = float(np.median([r[1] for r in rows]))
    return space, lut, pred, rows, constraint


def test_toy_exhaustive_many_seeds(toy_exhaustive):
    """全探索より小さい予算でも、制約付きの最良アーキテクチャに到達する"""
    space, lut, pred, rows, constraint = toy_exhaustive
    assert len(rows) == 5760
    [expected] = brute_force_top(rows, constraint, 1)
    hits = 0
    for seed in range(20):
        cfg = ModelSearchConfig(constraint, budget=2000, seed=seed)
        result = search_models(space, lut, pred, cfg)
        assert result.evaluations <= 2000
        assert result.best.latency_ms <= constraint
        hits += result.best.arch.key() == expected[2]
    print(f"全探索の最良に到達: {hits}/20")
    assert hits >= 19


def test_infeasible():
    """最小レイテンシより厳しい制約は InfeasibleConstraint"""
    hs = micro_hyperspace()
    space = decode_space("1-0", hs)
    lut = toy_lut(hs)
    pred = toy_predictor()
    rows = brute_force_scores(space, lut, pred)
    cfg = ModelSearchConfig(0.5 * min(r[1] for r in rows), budget=50, population=4, tournament=2)
    with pytest.raises(InfeasibleConstraint):
        search_models(space, lut, pred, cfg)


@pytest.fixture(scope="module")
def toy_result():
    hs = toy_hyperspace()
    space = decode_space("11-01", hs)
    lut = toy_lut(hs, noise=0.05)
    pred = toy_predictor()
    rng = make_rng(9)
    archs = [sample_architecture(space, rng) for _ in range(200)]
    constraint = float(np.median([predict_latency(pred, a) for a in archs]))
    cfg = ModelSearchConfig(constraint, budget=200, population=20, tournament=5, seed=1)
    return space, cfg, search_models(space, lut, pred, cfg)


def test_toy_properties(toy_result):
    """最良は実行可能で探索空間内、評価数は予算以内、最良の推移は単調"""
    space, cfg, result = toy_result
    assert result.best.latency_ms <= cfg.constraint
    validate_architecture(result.best.arch, space)
    assert result.evaluations <= cfg.budget
    assert result.history == sorted(result.history)
    assert result.history[-1] == result.best.proxy
    assert result.front[-1][1] == result.best.proxy
    assert all(lat <= cfg.constraint for lat, _, _ in result.front)


def test_result_dict(toy_result):
    space, cfg, result = toy_result
    d = result.to_dict(cfg)
    assert d["format"] == "model-search"
    assert d["space"] == "11-01"
    assert d["best"]["architecture"]["resolution"] == result.best.arch.resolution
    assert d["config"]["budget"] == 200


def test_deterministic(toy_result):
    """同じシードなら同じ結果"""
    space, cfg, result = toy_result
    hs = toy_hyperspace()
    again = search_models(space, toy_lut(hs, noise=0.05), toy_predictor(), cfg)
    assert again.to_dict() == result.to_dict()


if __name__ == "__main__":
    test_pareto_front_example()
    test_micro_exhaustive(0)
    print("OK")
