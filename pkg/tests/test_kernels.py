"""
カーネル分解と FLOPs のテスト
"""

import sys
import os

# srcディレクトリをパスに追加
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, os.path.join(project_root, 'src'))

import pytest

from core.archspace import load_architecture, max_architecture, min_architecture, random_space
from core.hyperspace import BlockType, load_hyperspace
from costmodel.kernels import (Kernel, KernelKind, decompose, decompose_parts, flops, kernel_macs,
                               layer_kernels, make_divisible)
from utils.errors import InvalidKernel
from utils.rng import make_rng


def kinds(kernels):
    return [k.kind for k in kernels]


def test_conv_macs():
    """conv K=3, Cin=3, Cout=16, 出力 112x112"""
    kernel = Kernel(KernelKind.CONV, 224, 224, 3, 16, 3, 2, "relu")
    assert kernel.h_out == 112
    assert kernel_macs(kernel) == 3 * 3 * 3 * 16 * 112 * 112 == 5419008


def test_other_macs():
    """dwconv / fc / se / 要素演算の MACs"""
    assert kernel_macs(Kernel(KernelKind.DWCONV, 14, 14, 96, 96, 5, 1)) == 25 * 96 * 196
    assert kernel_macs(Kernel(KernelKind.FC, 1, 1, 1280, 1000)) == 1280000
    assert kernel_macs(Kernel(KernelKind.SE, 7, 7, 96, 24)) == 2 * 96 * 24 + 96 * 49
    assert kernel_macs(Kernel(KernelKind.ADD, 7, 7, 96, 96)) == 0
    assert kernel_macs(Kernel(KernelKind.POOL, 7, 7, 96, 96)) == 0


def test_odd_size_stride():
    """奇数サイズのストライド2は切り上げ"""
    assert Kernel(KernelKind.DWCONV, 7, 7, 8, 8, 3, 2).h_out == 4


def test_invalid_kernel():
    """dwconv は cin == cout、各値は 1 以上"""
    with pytest.raises(InvalidKernel):
        Kernel(KernelKind.DWCONV, 14, 14, 16, 32, 3, 1)
    with pytest.raises(InvalidKernel):
        Kernel(KernelKind.CONV, 0, 14, 16, 32, 3, 1)
    with pytest.raises(InvalidKernel):
        KernelKind.parse("conv_bn_gelu")


def test_make_divisible():
    assert make_divisible(3, 8) == 8
    assert make_divisible(17, 8) == 24
    assert make_divisible(24, 8) == 24


def test_mbv2_stride2():
    """MBv2 のストライド2はショートカットなしの3カーネル"""
    kernels = layer_kernels(BlockType.MBV2, "relu6", 56, 24, 32, 3, 2, 6.0, 8)
    assert kinds(kernels) == [KernelKind.CONV, KernelKind.DWCONV, KernelKind.CONV]
    assert kernels[0].cout == 144
    assert kernels[1].stride == 2
    assert kernels[2].activation == "none"


def test_mbv3_residual():
    """MBv3 のストライド1・同じ幅は SE と add を含む5カーネル"""
    kernels = layer_kernels(BlockType.MBV3, "hswish", 14, 96, 96, 5, 1, 6.0, 8)
    assert kinds(kernels) == [KernelKind.CONV, KernelKind.DWCONV, KernelKind.SE, KernelKind.CONV,
                              KernelKind.ADD]
    assert kernels[2].cin == 576
    assert kernels[2].cout == 144


def test_mbv1():
    """MBv1 は dwconv + conv1x1"""
    kernels = layer_kernels(BlockType.MBV1, "relu", 28, 32, 64, 3, 2, 1.0, 8)
    assert kinds(kernels) == [KernelKind.DWCONV, KernelKind.CONV]
    assert kernels[1].h == 14


def test_residual_bottleneck():
    """ResidualBottleneck の中間幅は e·Cout、形が変わればショートカットの射影を含む"""
    same = layer_kernels(BlockType.RESIDUAL, "relu", 14, 64, 64, 3, 1, 0.5, 16)
    assert kinds(same) == [KernelKind.CONV, KernelKind.CONV, KernelKind.CONV, KernelKind.ADD]
    assert same[0].cout == 32

    changed = layer_kernels(BlockType.RESIDUAL_SE, "relu", 28, 32, 64, 3, 2, 1.5, 16)
    assert kinds(changed) == [KernelKind.CONV, KernelKind.CONV, KernelKind.SE, KernelKind.CONV,
                              KernelKind.CONV, KernelKind.ADD]
    assert changed[0].cout == 96
    assert changed[4].k == 1 and changed[4].stride == 2


def test_fused_mb():
    """FusedMB は拡張率1なら conv 1つ、それ以外は convKxK + conv1x1"""
    single = layer_kernels(BlockType.FUSED_MB, "swish", 28, 48, 48, 3, 1, 1.0, 16)
    assert kinds(single) == [KernelKind.CONV, KernelKind.ADD]
    expanded = layer_kernels(BlockType.FUSED_MB_SE, "swish", 28, 48, 64, 5, 2, 4.0, 16)
    assert kinds(expanded) == [KernelKind.CONV, KernelKind.SE, KernelKind.CONV]
    assert expanded[0].k == 5 and expanded[0].cout == 192


def test_structural_block_rejected():
    with pytest.raises(InvalidKernel):
        layer_kernels(BlockType.CLASSIFIER_HEAD, "relu", 7, 8, 8, 1, 1, 1.0, 8)


def test_mobilenetv2_kernel_count():
    """MobileNetV2 参照アーキテクチャのカーネル数（手で数えた値）"""
    arch = load_architecture("mobilenetv2_ref")
    # stem: conv + (dw, project)、ステージ: 16 層 × 3 + add 10 個、head: conv, pool, fc
    assert len(decompose(arch)) == 3 + 16 * 3 + 10 + 3 == 64
    counts = {}
    for k in decompose(arch):
        counts[k.kind] = counts.get(k.kind, 0) + 1
    assert counts[KernelKind.ADD] == 10
    assert counts[KernelKind.DWCONV] == 17


def test_mobilenetv2_flops():
    """MobileNetV2 参照アーキテクチャは約 300M MACs"""
    macs = flops(load_architecture("mobilenetv2_ref"))
    print(f"MobileNetV2: {macs / 1e6:.1f}M MACs")
    assert 285e6 <= macs <= 315e6


def test_decompose_parts():
    """部位は stem, stage1..N, head の順で、連結すると decompose と一致"""
    arch = load_architecture("mobilenetv2_ref")
    parts = decompose_parts(arch)
    assert [name for name, _ in parts] == ["stem"] + [f"stage{i}" for i in range(1, 7)] + ["head"]
    assert [k for _, ks in parts for k in ks] == decompose(arch)
    head = parts[-1][1]
    assert kinds(head) == [KernelKind.CONV, KernelKind.POOL, KernelKind.FC]
    assert head[0].h == 7


def test_max_dominates_min():
    """最大アーキテクチャの FLOPs は最小アーキテクチャ以上"""
    hs = load_hyperspace("pixel4")
    rng = make_rng(1)
    for _ in range(100):
        space = random_space(hs, rng)
        assert flops(max_architecture(space)) >= flops(min_architecture(space))


if __name__ == "__main__":
    test_mobilenetv2_kernel_count()
    test_mobilenetv2_flops()
    print("OK")
