"""
カーネル分解と FLOPs 計算

アーキテクチャを推論カーネル（Conv-BN-Act、DWConv-BN-Act、SE など）の列に展開する。
レイテンシ予測器はカーネルごとの予測値の和でモデルのレイテンシを求める
"""

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import List, Tuple

from core.archspace import Architecture, StageConfig
from core.hyperspace import BlockType
from utils.errors import InvalidKernel


class KernelKind(Enum):
    """カーネルの種類（活性化関数は Kernel.activation に持つ）"""
    CONV = "conv_bn_act"
    DWCONV = "dwconv_bn_act"
    SE = "se"
    FC = "fc"
    POOL = "global_pool"
    ADD = "elementwise_add"
    ACTIVATION = "activation_only"

    @classmethod
    def parse(cls, value: str) -> "KernelKind":
        try:
            return cls(value.strip())
        except ValueError:
            raise InvalidKernel(f"未知のカーネル種別: {value}")


# 予測テーブルの軸（種別ごと）
KIND_AXES = {
    KernelKind.CONV: ("hw_out", "cin", "cout", "k"),
    KernelKind.DWCONV: ("hw_out", "cin", "k"),
    KernelKind.SE: ("hw", "cin", "cout"),
    KernelKind.FC: ("cin", "cout"),
    KernelKind.POOL: ("hw", "cin"),
    KernelKind.ADD: ("hw", "cin"),
    KernelKind.ACTIVATION: ("hw", "cin"),
}

NO_ACTIVATION = "none"


@dataclass(frozen=True)
class Kernel:
    """
    推論カーネル1つ

    h, w は入力の空間サイズ。出力サイズは ceil(h / stride)
    """
    kind: KernelKind
    h: int
    w: int
    cin: int
    cout: int
    k: int = 1
    stride: int = 1
    activation: str = NO_ACTIVATION

    def __post_init__(self):
        for name in ("h", "w", "cin", "cout", "k", "stride"):
            if getattr(self, name) < 1:
                raise InvalidKernel(f"{self.kind.value}: {name} は 1 以上である必要があります")
        if self.kind == KernelKind.DWCONV and self.cin != self.cout:
            raise InvalidKernel(f"dwconv は cin == cout である必要があります: {self.cin} != {self.cout}")

    @property
    def h_out(self) -> int:
        return -(-self.h // self.stride)

    @property
    def w_out(self) -> int:
        return -(-self.w // self.stride)

    def features(self) -> Tuple[float, ...]:
        """予測テーブルの軸に対応する特徴量"""
        values = {
            "hw": self.h * self.w,
            "hw_out": self.h_out * self.w_out,
            "cin": self.cin,
            "cout": self.cout,
            "k": self.k,
        }
        return tuple(float(values[name]) for name in KIND_AXES[self.kind])


def make_divisible(value: float, divisor: int) -> int:
    """value を divisor の倍数に切り上げる（最小 divisor）"""
    return max(divisor, int(math.ceil(value / divisor)) * divisor)


def _conv(h: int, cin: int, cout: int, k: int, stride: int, activation: str) -> Kernel:
    return Kernel(KernelKind.CONV, h, h, cin, cout, k, stride, activation)


def _dwconv(h: int, c: int, k: int, stride: int, activation: str) -> Kernel:
    return Kernel(KernelKind.DWCONV, h, h, c, c, k, stride, activation)


def _se(h: int, c: int, granularity: int) -> Kernel:
    return Kernel(KernelKind.SE, h, h, c, make_divisible(c / 4, granularity))


def _add(h: int, c: int) -> Kernel:
    return Kernel(KernelKind.ADD, h, h, c, c)


@lru_cache(maxsize=65536)
def layer_kernels(block_type: BlockType, activation: str, h: int, cin: int, cout: int,
                  k: int, stride: int, expand: float, granularity: int) -> Tuple[Kernel, ...]:
    """
    1層（ブロック1個）をカーネル列に分解

    Args:
        block_type: ブロック種別
        activation: ブロックの活性化関数
        h: 入力の空間サイズ
        cin: 入力チャネル数
        cout: 出力チャネル数
        k: カーネルサイズ
        stride: ストライド
        expand: 拡張率
        granularity: チャネル粒度（中間幅と SE 幅の丸めに使う）

    Returns:
        カーネルのタプル
    """
    h_out = -(-h // stride)
    kernels: List[Kernel] = []
    same_shape = stride == 1 and cin == cout

    if block_type == BlockType.MBV1:
        kernels.append(_dwconv(h, cin, k, stride, activation))
        kernels.append(_conv(h_out, cin, cout, 1, 1, activation))

    elif block_type in (BlockType.MBV2, BlockType.MBV3):
        mid = cin
        if expand != 1:
            mid = make_divisible(cin * expand, granularity)
            kernels.append(_conv(h, cin, mid, 1, 1, activation))
        kernels.append(_dwconv(h, mid, k, stride, activation))
        if block_type.has_se:
            kernels.append(_se(h_out, mid, granularity))
        kernels.append(_conv(h_out, mid, cout, 1, 1, NO_ACTIVATION))
        if same_shape:
            kernels.append(_add(h_out, cout))

    elif block_type in (BlockType.RESIDUAL, BlockType.RESIDUAL_SE):
        mid = make_divisible(cout * expand, granularity)
        kernels.append(_conv(h, cin, mid, 1, 1, activation))
        kernels.append(_conv(h, mid, mid, k, stride, activation))
        if block_type.has_se:
            kernels.append(_se(h_out, mid, granularity))
        kernels.append(_conv(h_out, mid, cout, 1, 1, NO_ACTIVATION))
        if not same_shape:
            # ショートカット側の射影
            kernels.append(_conv(h, cin, cout, 1, stride, NO_ACTIVATION))
        kernels.append(_add(h_out, cout))

    elif block_type in (BlockType.FUSED_MB, BlockType.FUSED_MB_SE):
        if expand == 1:
            kernels.append(_conv(h, cin, cout, k, stride, activation))
            if block_type.has_se:
                kernels.append(_se(h_out, cout, granularity))
        else:
            mid = make_divisible(cin * expand, granularity)
            kernels.append(_conv(h, cin, mid, k, stride, activation))
            if block_type.has_se:
                kernels.append(_se(h_out, mid, granularity))
            kernels.append(_conv(h_out, mid, cout, 1, 1, NO_ACTIVATION))
        if same_shape:
            kernels.append(_add(h_out, cout))

    else:
        raise InvalidKernel(f"{block_type.value} はカーネルに分解できません")

    return tuple(kernels)


def _stage_kernels(stage: StageConfig, h: int, cin: int,
                   granularity: int) -> Tuple[List[Kernel], int, int]:
    kernels: List[Kernel] = []
    for j, layer in enumerate(stage.layers):
        stride = stage.stride if j == 0 else 1
        kernels.extend(layer_kernels(stage.block_type, stage.activation, h, cin, layer.width,
                                     layer.kernel, stride, layer.expand, granularity))
        h = -(-h // stride)
        cin = layer.width
    return kernels, h, cin


def decompose_parts(arch: Architecture) -> List[Tuple[str, List[Kernel]]]:
    """
    アーキテクチャを部位（stem, stage1..N, head）ごとのカーネル列に分解

    Returns:
        (部位名, カーネルリスト) のリスト（入力側から順に）
    """
    g = arch.granularity
    stem = arch.stem
    h = arch.resolution
    parts: List[Tuple[str, List[Kernel]]] = []

    stem_kernels = [_conv(h, 3, stem.conv_width, stem.conv_kernel, stem.conv_stride,
                          stem.conv_activation)]
    h = -(-h // stem.conv_stride)
    block_kernels, h, cin = _stage_kernels(stem.block, h, stem.conv_width, g)
    stem_kernels.extend(block_kernels)
    parts.append(("stem", stem_kernels))

    for i, stage in enumerate(arch.stages, start=1):
        kernels, h, cin = _stage_kernels(stage, h, cin, g)
        parts.append((f"stage{i}", kernels))

    head = arch.head
    parts.append(("head", [
        _conv(h, cin, head.feature_width, 1, 1, head.activation),
        Kernel(KernelKind.POOL, h, h, head.feature_width, head.feature_width),
        Kernel(KernelKind.FC, 1, 1, head.feature_width, head.num_classes),
    ]))
    return parts


def decompose(arch: Architecture) -> List[Kernel]:
    """アーキテクチャをカーネル列に分解（入力側から順）"""
    return [kernel for _, kernels in decompose_parts(arch) for kernel in kernels]


def kernel_macs(kernel: Kernel) -> int:
    """
    カーネル1つの積和演算数（MACs）

    conv = K²·Cin·Cout·Hout·Wout、dwconv = K²·C·Hout·Wout、fc = Cin·Cout、
    se = 2·C·Cred + C·H·W（プーリング分）、add / pool / 活性化は 0
    """
    hw_out = kernel.h_out * kernel.w_out
    if kernel.kind == KernelKind.CONV:
        return kernel.k * kernel.k * kernel.cin * kernel.cout * hw_out
    if kernel.kind == KernelKind.DWCONV:
        return kernel.k * kernel.k * kernel.cin * hw_out
    if kernel.kind == KernelKind.FC:
        return kernel.cin * kernel.cout
    if kernel.kind == KernelKind.SE:
        return 2 * kernel.cin * kernel.cout + kernel.cin * kernel.h * kernel.w
    return 0


def flops(arch: Architecture) -> int:
    """アーキテクチャの FLOPs（MACs として数える）"""
    return sum(kernel_macs(k) for k in decompose(arch))
