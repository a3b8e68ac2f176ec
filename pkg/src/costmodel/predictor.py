"""
カーネル単位のレイテンシ予測器

(カーネル種別, 精度) ごとに、(活性化関数, ストライド) 別のグリッドテーブルを持つ。
グリッド点の間は多重線形補間、範囲外は最近傍（端点でクランプ）で外挿する。
モデルのレイテンシは全カーネルの予測値の和
"""

import csv
import itertools
import json
import logging
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.archspace import Architecture
from core.precision import Precision
from costmodel.kernels import KIND_AXES, Kernel, KernelKind, decompose, decompose_parts
from utils.errors import InsufficientSamples, InvalidKernel, MalformedFile, UnsupportedVersion
from utils.stats import kendall_tau

logger = logging.getLogger(__name__)

PREDICTOR_FORMAT = "latency-predictor"
PREDICTOR_VERSION = 1
SAMPLE_COLUMNS = ("kind", "precision", "h", "w", "cin", "cout", "k", "stride", "activation",
                  "latency_ms")


@dataclass(frozen=True)
class LatencySample:
    """計測（または合成）されたカーネルのレイテンシ"""
    kernel: Kernel
    precision: Precision
    latency_ms: float

    def __post_init__(self):
        if not self.latency_ms > 0:
            raise InvalidKernel(f"レイテンシは正である必要があります: {self.latency_ms}")


class GridTable:
    """
    多重線形補間テーブル

    軸ごとに昇順の格子点を持ち、全格子点の値が埋まっている必要がある
    """

    def __init__(self, axes: Sequence[Sequence[float]], values: np.ndarray):
        self.axes = tuple(np.asarray(a, dtype=float) for a in axes)
        self.values = np.asarray(values, dtype=float).reshape(tuple(len(a) for a in self.axes))

    def __call__(self, point: Sequence[float]) -> float:
        lows = []
        fracs = []
        for axis, x in zip(self.axes, point):
            if len(axis) == 1:
                lows.append(0)
                fracs.append(0.0)
                continue
            x = min(max(x, axis[0]), axis[-1])
            i = int(np.searchsorted(axis, x, side='right')) - 1
            i = min(i, len(axis) - 2)
            lows.append(i)
            fracs.append((x - axis[i]) / (axis[i + 1] - axis[i]))

        total = 0.0
        for corner in itertools.product((0, 1), repeat=len(lows)):
            weight = 1.0
            for bit, t in zip(corner, fracs):
                weight *= t if bit else 1.0 - t
            if weight == 0.0:
                continue
            index = tuple(lo + bit for lo, bit in zip(lows, corner))
            total += weight * self.values[index]
        return float(total)

    def to_dict(self) -> dict:
        return {"grid": [a.tolist() for a in self.axes], "values": self.values.ravel().tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "GridTable":
        return cls(d["grid"], np.asarray(d["values"], dtype=float))


TableKey = Tuple[KernelKind, Precision]
SubKey = Tuple[str, int]


class LatencyPredictor:
    """
    カーネル分解型のレイテンシ予測器

    学習後は不変。予測結果はインスタンス内でキャッシュする
    """

    def __init__(self, tables: Dict[TableKey, Dict[SubKey, GridTable]], device: str = "",
                 granularity: int = 1, model_overhead_ms: Optional[Dict[Precision, float]] = None):
        self.tables = tables
        self.device = device
        self.granularity = granularity
        self.model_overhead_ms = dict(model_overhead_ms or {})
        self._cache: Dict[Tuple[Kernel, Precision], float] = {}

    def _table(self, kernel: Kernel, precision: Precision) -> GridTable:
        sub = self.tables.get((kernel.kind, precision))
        if not sub:
            raise InsufficientSamples(kernel.kind.value, f"{precision.value} のサンプルがありません")
        table = sub.get((kernel.activation, kernel.stride))
        if table is not None:
            return table
        # 同じ活性化関数の別ストライド、なければ任意のテーブル
        same_activation = sorted(k for k in sub if k[0] == kernel.activation)
        substitute = same_activation[0] if same_activation else sorted(sub)[0]
        logger.warning("%s/%s: (%s, stride=%d) のテーブルがないため (%s, stride=%d) で代用します",
                       kernel.kind.value, precision.value, kernel.activation, kernel.stride,
                       substitute[0], substitute[1])
        return sub[substitute]

    def predict_kernel(self, kernel: Kernel, precision: Precision) -> float:
        """カーネル1つのレイテンシ（ms）を予測"""
        key = (kernel, precision)
        cached = self._cache.get(key)
        if cached is None:
            cached = self._table(kernel, precision)(kernel.features())
            self._cache[key] = cached
        return cached

    def __repr__(self):
        return f"LatencyPredictor(device={self.device!r}, tables={len(self.tables)})"


def train_predictor(samples: Iterable[LatencySample], device: str = "", granularity: int = 1,
                    model_overhead_ms: Optional[Dict[Precision, float]] = None) -> LatencyPredictor:
    """
    サンプルからレイテンシ予測器を構築

    (種別, 精度, 活性化, ストライド) ごとに、特徴量の格子を組み立てる。
    同一格子点の重複サンプルは平均する

    Args:
        samples: レイテンシサンプル
        device: デバイス名（メタデータ）
        granularity: チャネル粒度（メタデータ）
        model_overhead_ms: 精度ごとのモデル単位の固定オーバーヘッド

    Returns:
        予測器

    Raises:
        InsufficientSamples: 格子が埋まっていない
    """
    groups: Dict[Tuple[KernelKind, Precision, str, int], Dict[Tuple[float, ...], List[float]]] = \
        defaultdict(lambda: defaultdict(list))
    count = 0
    for s in samples:
        k = s.kernel
        groups[(k.kind, s.precision, k.activation, k.stride)][k.features()].append(s.latency_ms)
        count += 1

    tables: Dict[TableKey, Dict[SubKey, GridTable]] = defaultdict(dict)
    for (kind, precision, activation, stride), points in sorted(
            groups.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value, kv[0][2], kv[0][3])):
        dims = len(KIND_AXES[kind])
        axes = [sorted({p[d] for p in points}) for d in range(dims)]
        expected = int(np.prod([len(a) for a in axes]))
        if len(points) != expected:
            raise InsufficientSamples(
                kind.value,
                f"{precision.value}/{activation}/s{stride} の格子が不完全です "
                f"({len(points)}/{expected} 点)")
        values = np.empty(tuple(len(a) for a in axes))
        positions = [{v: i for i, v in enumerate(a)} for a in axes]
        for point, latencies in points.items():
            values[tuple(positions[d][point[d]] for d in range(dims))] = float(np.mean(latencies))
        tables[(kind, precision)][(activation, stride)] = GridTable(axes, values)

    logger.info("予測器を構築しました: %d サンプル, %d テーブル", count, sum(len(t) for t in tables.values()))
    return LatencyPredictor(dict(tables), device, granularity, model_overhead_ms)


def predict_latency(pred: LatencyPredictor, arch: Architecture,
                    precision: Precision = Precision.INT8) -> float:
    """
    アーキテクチャのレイテンシ（ms）を予測

    全カーネルの予測値の和（＋モデル単位のオーバーヘッド）
    """
    total = sum(pred.predict_kernel(k, precision) for k in decompose(arch))
    return total + pred.model_overhead_ms.get(precision, 0.0)


def latency_breakdown(pred: LatencyPredictor, arch: Architecture,
                      precision: Precision = Precision.INT8) -> Dict[str, float]:
    """部位（stem, stage1..N, head）ごとの予測レイテンシ"""
    return {
        name: sum(pred.predict_kernel(k, precision) for k in kernels)
        for name, kernels in decompose_parts(arch)
    }


# ---------------------------------------------------------------------------
# 予測精度のレポート
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PredictionReport:
    """予測精度（RMSE、±5% / ±10% 以内の割合、順位相関）"""
    count: int
    rmse_ms: float
    within_5: float
    within_10: float
    kendall: float = 0.0

    @classmethod
    def from_pairs(cls, predicted: Sequence[float], truth: Sequence[float]) -> "PredictionReport":
        p = np.asarray(predicted, dtype=float)
        t = np.asarray(truth, dtype=float)
        if p.size == 0:
            return cls(0, 0.0, 0.0, 0.0, 0.0)
        rel = np.abs(p - t) / t
        return cls(
            count=int(p.size),
            rmse_ms=float(np.sqrt(np.mean((p - t) ** 2))),
            within_5=float(np.mean(rel <= 0.05)),
            within_10=float(np.mean(rel <= 0.10)),
            kendall=kendall_tau(p, t),
        )

    def to_dict(self) -> dict:
        return {"count": self.count, "rmse_ms": self.rmse_ms,
                "within_5": self.within_5, "within_10": self.within_10,
                "kendall_tau": self.kendall}

    def __str__(self):
        return (f"{self.count} 件: RMSE {self.rmse_ms:.4f} ms, "
                f"±5% 以内 {self.within_5 * 100:.1f}%, ±10% 以内 {self.within_10 * 100:.1f}%, "
                f"順位相関 {self.kendall:.3f}")


def evaluate_samples(pred: LatencyPredictor, samples: Sequence[LatencySample]) -> PredictionReport:
    """カーネル単位のホールドアウトサンプルで予測精度を評価"""
    predicted = [pred.predict_kernel(s.kernel, s.precision) for s in samples]
    return PredictionReport.from_pairs(predicted, [s.latency_ms for s in samples])


# ---------------------------------------------------------------------------
# 入出力
# ---------------------------------------------------------------------------

def write_samples(path: Union[str, Path], samples: Iterable[LatencySample]) -> int:
    """サンプルを CSV に書き出し、行数を返す"""
    count = 0
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(SAMPLE_COLUMNS)
        for s in samples:
            k = s.kernel
            writer.writerow([k.kind.value, s.precision.value, k.h, k.w, k.cin, k.cout, k.k,
                             k.stride, k.activation, repr(float(s.latency_ms))])
            count += 1
    return count


def read_samples(path: Union[str, Path]) -> List[LatencySample]:
    """
    CSV からサンプルを読み込む

    Raises:
        MalformedFile: 列が足りない、または値が不正（列名または行番号を含む）
    """
    samples = []
    with open(path, 'r', encoding='utf-8', newline='') as f:
        reader = csv.DictReader(f)
        header = reader.fieldnames or []
        for column in SAMPLE_COLUMNS:
            if column not in header:
                raise MalformedFile(str(path), "必須の列がありません", column=column)
        for line, row in enumerate(reader, start=2):
            try:
                kernel = Kernel(
                    kind=KernelKind.parse(row["kind"]),
                    h=int(row["h"]), w=int(row["w"]),
                    cin=int(row["cin"]), cout=int(row["cout"]),
                    k=int(row["k"]), stride=int(row["stride"]),
                    activation=row["activation"].strip() or "none",
                )
                samples.append(LatencySample(kernel, Precision.parse(row["precision"]),
                                             float(row["latency_ms"])))
            except (TypeError, ValueError) as e:
                raise MalformedFile(str(path), f"{line} 行目の値が不正です: {e}")
            except InvalidKernel as e:
                raise MalformedFile(str(path), f"{line} 行目: {e}")
    logger.info("サンプルを読み込みました: %s (%d 件)", path, len(samples))
    return samples


def predictor_to_dict(pred: LatencyPredictor) -> dict:
    """予測器を JSON 用の辞書に変換"""
    tables = []
    for (kind, precision), sub in sorted(pred.tables.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value)):
        for (activation, stride), table in sorted(sub.items()):
            entry = {"kind": kind.value, "precision": precision.value,
                     "activation": activation, "stride": stride, "axes": list(KIND_AXES[kind])}
            entry.update(table.to_dict())
            tables.append(entry)
    return {
        "format": PREDICTOR_FORMAT,
        "version": PREDICTOR_VERSION,
        "device": pred.device,
        "granularity": pred.granularity,
        "model_overhead_ms": {p.value: v for p, v in sorted(pred.model_overhead_ms.items(),
                                                            key=lambda kv: kv[0].value)},
        "tables": tables,
    }


def predictor_from_dict(d: dict, source: str = "<dict>") -> LatencyPredictor:
    """辞書から予測器を復元"""
    fmt = d.get("format")
    version = d.get("version")
    if fmt != PREDICTOR_FORMAT or version != PREDICTOR_VERSION:
        raise UnsupportedVersion(str(fmt), version)
    tables: Dict[TableKey, Dict[SubKey, GridTable]] = defaultdict(dict)
    try:
        for entry in d["tables"]:
            kind = KernelKind.parse(entry["kind"])
            precision = Precision.parse(entry["precision"])
            table = GridTable.from_dict(entry)
            if len(table.axes) != len(KIND_AXES[kind]):
                raise MalformedFile(source, f"{kind.value} の軸数が不正です", column="grid")
            tables[(kind, precision)][(entry["activation"], int(entry["stride"]))] = table
        overhead = {Precision.parse(p): float(v) for p, v in d.get("model_overhead_ms", {}).items()}
    except KeyError as e:
        raise MalformedFile(source, "必須フィールドがありません", column=str(e.args[0]))
    return LatencyPredictor(dict(tables), d.get("device", ""), int(d.get("granularity", 1)), overhead)


def save_predictor(pred: LatencyPredictor, path: Union[str, Path]):
    """予測器を JSON に保存"""
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(predictor_to_dict(pred), f, indent=1, sort_keys=True)
        f.write("\n")


def load_predictor(path: Union[str, Path]) -> LatencyPredictor:
    """JSON から予測器を読み込む"""
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise MalformedFile(str(path), f"JSON の解析に失敗しました: {e}")
    pred = predictor_from_dict(data, source=str(path))
    logger.debug("予測器を読み込みました: %s", pred)
    return pred
