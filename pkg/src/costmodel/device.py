"""
合成デバイスモデル

実機計測の代わりに、カーネルのレイテンシを閉形式で生成する。
FP32 は呼び出しオーバーヘッド + 作業量 / スループット、INT8 は作業量の項だけを
カーネル種別ごとの高速化率で割ったもの（オーバーヘッドは精度によらない）。
チャネル数は粒度 g の倍数に切り上げて作業量を数える（段差パターン）
"""

import itertools
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

import numpy as np

from core.archspace import Architecture
from core.hyperspace import read_json, resolve_preset
from core.precision import Precision
from costmodel.kernels import Kernel, KernelKind, decompose
from costmodel.predictor import LatencyPredictor, LatencySample, PredictionReport, predict_latency
from utils.errors import ConfigError, MalformedFile, UnsupportedVersion
from utils.rng import make_rng

logger = logging.getLogger(__name__)

DEVICE_FORMAT = "synthetic-device"
DEVICE_VERSION = 1


@dataclass(frozen=True)
class GridSpec:
    """サンプル生成用の格子（カーネル種別ごとの活性化関数も含む）"""
    hw: Tuple[int, ...]
    channels: Tuple[int, ...]
    kernels: Tuple[int, ...]
    strides: Tuple[int, ...]
    activations: Dict[KernelKind, Tuple[str, ...]] = field(hash=False)
    precisions: Tuple[Precision, ...] = (Precision.FP32, Precision.INT8)


def grid_kernels(grid: GridSpec) -> List[Kernel]:
    """格子上のすべてのカーネルを決まった順序で列挙"""
    kernels: List[Kernel] = []
    for kind in KernelKind:
        activations = grid.activations.get(kind, ())
        for act in activations:
            if kind == KernelKind.CONV:
                for s, k, h, cin, cout in itertools.product(grid.strides, grid.kernels, grid.hw,
                                                            grid.channels, grid.channels):
                    kernels.append(Kernel(kind, h, h, cin, cout, k, s, act))
            elif kind == KernelKind.DWCONV:
                for s, k, h, c in itertools.product(grid.strides, grid.kernels, grid.hw, grid.channels):
                    kernels.append(Kernel(kind, h, h, c, c, k, s, act))
            elif kind == KernelKind.SE:
                for h, cin, cout in itertools.product(grid.hw, grid.channels, grid.channels):
                    kernels.append(Kernel(kind, h, h, cin, cout, 1, 1, act))
            elif kind == KernelKind.FC:
                for cin, cout in itertools.product(grid.channels, grid.channels):
                    kernels.append(Kernel(kind, 1, 1, cin, cout, 1, 1, act))
            else:
                for h, c in itertools.product(grid.hw, grid.channels):
                    kernels.append(Kernel(kind, h, h, c, c, 1, 1, act))
    return kernels


def grid_size(grid: GridSpec) -> int:
    """格子が生成するサンプル数（閉形式）"""
    n_hw, n_c = len(grid.hw), len(grid.channels)
    n_k, n_s = len(grid.kernels), len(grid.strides)
    per_kind = {
        KernelKind.CONV: n_s * n_k * n_hw * n_c * n_c,
        KernelKind.DWCONV: n_s * n_k * n_hw * n_c,
        KernelKind.SE: n_hw * n_c * n_c,
        KernelKind.FC: n_c * n_c,
    }
    total = 0
    for kind in KernelKind:
        total += len(grid.activations.get(kind, ())) * per_kind.get(kind, n_hw * n_c)
    return total * len(grid.precisions)


@dataclass(frozen=True)
class SyntheticDevice:
    """
    合成デバイス

    throughput は FP32 の MACs/ms（要素演算系は 要素/ms）、kernel_speedup は
    Conv / DWConv のカーネルサイズ別 INT8 高速化率。fused_activation_penalty は
    カーネル種別ごとに、融合した活性化関数が INT8 高速化率を割る係数
    """
    name: str
    granularity: int
    call_overhead_ms: float
    throughput: Dict[KernelKind, float] = field(hash=False)
    kernel_speedup: Dict[KernelKind, Dict[int, float]] = field(hash=False)
    speedup: Dict[KernelKind, float] = field(hash=False)
    activation_speedup: Dict[str, float] = field(hash=False)
    fused_activation_penalty: Dict[KernelKind, Dict[str, float]] = field(hash=False)
    boundary_overhead_ms: float
    noise: float
    grid: GridSpec
    hyperspace: str = ""
    lut_profile: dict = field(default_factory=dict, hash=False)

    def padded(self, channels: int) -> int:
        g = self.granularity
        return -(-channels // g) * g

    def work(self, kernel: Kernel) -> float:
        """チャネルを粒度に切り上げた作業量"""
        cin = self.padded(kernel.cin)
        cout = self.padded(kernel.cout)
        hw = kernel.h * kernel.w
        hw_out = kernel.h_out * kernel.w_out
        kk = kernel.k * kernel.k
        if kernel.kind == KernelKind.CONV:
            return kk * cin * cout * hw_out
        if kernel.kind == KernelKind.DWCONV:
            return kk * cin * hw_out
        if kernel.kind == KernelKind.SE:
            return 2 * cin * cout + cin * hw
        if kernel.kind == KernelKind.FC:
            return cin * cout
        return cin * hw

    def int8_speedup(self, kernel: Kernel) -> float:
        """FP32 に対する INT8 の実効高速化率（1 未満なら INT8 の方が遅い）"""
        if kernel.kind == KernelKind.ACTIVATION:
            return self.activation_speedup.get(kernel.activation, 1.0)
        table = self.kernel_speedup.get(kernel.kind)
        if table:
            nearest = min(table, key=lambda k: (abs(k - kernel.k), k))
            value = table[nearest]
        else:
            value = self.speedup.get(kernel.kind, 1.0)
        penalty = self.fused_activation_penalty.get(kernel.kind, {})
        return value / penalty.get(kernel.activation, 1.0)

    def latency(self, kernel: Kernel, precision: Precision) -> float:
        """ノイズなしのカーネルレイテンシ（ms）"""
        compute = self.work(kernel) / self.throughput[kernel.kind]
        if precision == Precision.INT8:
            compute /= self.int8_speedup(kernel)
        return self.call_overhead_ms + compute

    def measure(self, kernel: Kernel, precision: Precision, rng: np.random.Generator) -> float:
        """乗法ノイズ付きの「計測値」"""
        return self.latency(kernel, precision) * (1.0 + self.noise * rng.uniform(-1.0, 1.0))

    def model_latency(self, arch: Architecture, precision: Precision = Precision.INT8) -> float:
        """モデル全体の真のレイテンシ（INT8 は量子化境界のオーバーヘッドを含む）"""
        total = sum(self.latency(k, precision) for k in decompose(arch))
        if precision == Precision.INT8:
            total += self.boundary_overhead_ms
        return total

    def __repr__(self):
        return f"SyntheticDevice({self.name}, g={self.granularity})"


def synth_samples(dev: SyntheticDevice, grid: Optional[GridSpec] = None,
                  seed: int = 0) -> List[LatencySample]:
    """
    格子上の合成レイテンシサンプルを生成

    Args:
        dev: 合成デバイス
        grid: 格子（None ならデバイスの既定の格子）
        seed: ノイズのシード

    Returns:
        サンプルのリスト（格子順 × 精度順）
    """
    grid = grid or dev.grid
    kernels = grid_kernels(grid)
    if not kernels:
        raise ConfigError("格子が空です")
    rng = make_rng(seed)
    samples = []
    for kernel in kernels:
        for precision in grid.precisions:
            samples.append(LatencySample(kernel, precision, dev.measure(kernel, precision, rng)))
    logger.info("合成サンプルを生成しました: %s (%d 件)", dev.name, len(samples))
    return samples


def holdout_samples(dev: SyntheticDevice, count: int, seed: int = 0) -> List[LatencySample]:
    """
    格子外（粒度の倍数）のランダムなカーネルサンプルを生成

    値の範囲は格子の最小・最大の内側に収める
    """
    grid = dev.grid
    rng = make_rng(seed)
    g = dev.granularity
    kinds = [kind for kind in KernelKind if grid.activations.get(kind)]
    hw_lo, hw_hi = min(grid.hw), max(grid.hw)
    c_lo = -(-min(grid.channels) // g)
    c_hi = max(grid.channels) // g

    def channels() -> int:
        return g * int(rng.integers(c_lo, c_hi + 1))

    samples = []
    for _ in range(count):
        kind = kinds[int(rng.integers(len(kinds)))]
        acts = grid.activations[kind]
        act = acts[int(rng.integers(len(acts)))]
        h = 1 if kind == KernelKind.FC else int(rng.integers(hw_lo, hw_hi + 1))
        k = int(grid.kernels[int(rng.integers(len(grid.kernels)))])
        stride = int(grid.strides[int(rng.integers(len(grid.strides)))])
        cin = channels()
        if kind == KernelKind.CONV:
            kernel = Kernel(kind, h, h, cin, channels(), k, stride, act)
        elif kind == KernelKind.DWCONV:
            kernel = Kernel(kind, h, h, cin, cin, k, stride, act)
        elif kind in (KernelKind.SE, KernelKind.FC):
            kernel = Kernel(kind, h, h, cin, channels(), 1, 1, act)
        else:
            kernel = Kernel(kind, h, h, cin, cin, 1, 1, act)
        precision = grid.precisions[int(rng.integers(len(grid.precisions)))]
        samples.append(LatencySample(kernel, precision, dev.measure(kernel, precision, rng)))
    return samples


def evaluate_predictor(pred: LatencyPredictor, dev: SyntheticDevice, archs: Iterable[Architecture],
                       precision: Precision = Precision.INT8) -> PredictionReport:
    """モデル単位で予測値と合成デバイスの真値を比較"""
    predicted = []
    truth = []
    for arch in archs:
        predicted.append(predict_latency(pred, arch, precision))
        truth.append(dev.model_latency(arch, precision))
    return PredictionReport.from_pairs(predicted, truth)


def speedup_report(latency_fp32: float, latency_int8: float) -> dict:
    """FP32 / INT8 の高速化率"""
    return {"fp32_ms": latency_fp32, "int8_ms": latency_int8,
            "speedup": latency_fp32 / latency_int8 if latency_int8 > 0 else float("inf")}


# ---------------------------------------------------------------------------
# プリセット
# ---------------------------------------------------------------------------

def _kind_map(d: dict) -> Dict[KernelKind, object]:
    return {KernelKind.parse(name): value for name, value in d.items()}


def _int_keys(d: dict) -> Dict[int, float]:
    return {int(k): float(v) for k, v in d.items()}


def device_from_dict(data: dict, source: str = "<dict>") -> SyntheticDevice:
    """辞書から合成デバイスを構築"""
    fmt = data.get("format")
    version = data.get("version")
    if fmt != DEVICE_FORMAT or version != DEVICE_VERSION:
        raise UnsupportedVersion(str(fmt), version)
    try:
        g = data["grid"]
        grid = GridSpec(
            hw=tuple(int(v) for v in g["hw"]),
            channels=tuple(int(v) for v in g["channels"]),
            kernels=tuple(int(v) for v in g["kernels"]),
            strides=tuple(int(v) for v in g.get("strides", [1, 2])),
            activations={kind: tuple(acts) for kind, acts in _kind_map(g["activations"]).items()},
            precisions=tuple(Precision.parse(p) for p in g.get("precisions", ["fp32", "int8"])),
        )
        int8 = data["int8"]
        dev = SyntheticDevice(
            name=data.get("name", Path(source).stem),
            granularity=int(data["granularity"]),
            call_overhead_ms=float(data["call_overhead_ms"]),
            throughput={k: float(v) for k, v in _kind_map(data["throughput"]).items()},
            kernel_speedup={k: _int_keys(v) for k, v in _kind_map(int8["kernel_speedup"]).items()},
            speedup={k: float(v) for k, v in _kind_map(int8.get("speedup", {})).items()},
            activation_speedup={a: float(v) for a, v in int8.get("activation_speedup", {}).items()},
            fused_activation_penalty={k: {a: float(v) for a, v in acts.items()} for k, acts in
                                      _kind_map(int8.get("fused_activation_penalty", {})).items()},
            boundary_overhead_ms=float(data.get("boundary_overhead_ms", 0.0)),
            noise=float(data.get("noise", 0.0)),
            grid=grid,
            hyperspace=data.get("hyperspace", ""),
            lut_profile=data.get("lut_profile", {}),
        )
    except KeyError as e:
        raise MalformedFile(source, "必須フィールドがありません", column=str(e.args[0]))
    except (TypeError, ValueError) as e:
        raise MalformedFile(source, f"値が不正です: {e}")

    missing = [kind.value for kind in KernelKind
               if grid.activations.get(kind) and kind not in dev.throughput]
    if missing:
        raise ConfigError(f"{source}: スループットが未定義のカーネル種別 {missing}")
    if not 0.0 <= dev.noise < 1.0:
        raise ConfigError(f"{source}: noise は 0 以上 1 未満である必要があります")
    return dev


def load_device(name_or_path: Union[str, Path]) -> SyntheticDevice:
    """
    合成デバイスのプリセットを読み込み

    Args:
        name_or_path: バンドル済みプリセット名（synth_cpu, synth_mobile）またはパス
    """
    path = resolve_preset(name_or_path)
    dev = device_from_dict(read_json(path), source=str(path))
    logger.debug("合成デバイスを読み込みました: %s", dev)
    return dev


def with_noise(dev: SyntheticDevice, noise: float) -> SyntheticDevice:
    """ノイズ量だけを変えたデバイス"""
    return replace(dev, noise=noise)
