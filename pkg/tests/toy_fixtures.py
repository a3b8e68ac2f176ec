"""
テスト用のトイ規模ハイパースペース・予測器・LUT

全数列挙できる大きさの探索空間と、学習済みの小さな予測器を作る
"""

import sys
import os
from functools import lru_cache

# srcディレクトリをパスに追加
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, os.path.join(project_root, 'src'))

from accmodel.lut import LutProfile, accuracy_proxy, synth_lut
from core.archspace import enumerate_architectures
from core.hyperspace import hyperspace_from_dict
from core.precision import Precision
from costmodel.device import device_from_dict, synth_samples
from costmodel.kernels import Kernel, KernelKind
from costmodel.predictor import LatencySample, predict_latency, train_predictor

BLOCKS = [
    {"type": "MBv1", "id": 0, "activation": "relu", "expand_ratios": [1]},
    {"type": "MBv2", "id": 1, "activation": "relu6", "expand_ratios": [3, 6]},
]

STEM = {
    "conv": {"widths": [8, 16], "kernel": 3, "stride": 2, "activation": "relu"},
    "block": {"type": "MBv2", "activation": "relu6", "depth_range": [1, 1],
              "kernel_choices": [3], "stride": 1, "widths": [8], "expand_ratios": [1]},
}

HEAD = {"feature_width": 64, "num_classes": 10, "activation": "relu"}


def toy_hyperspace_dict() -> dict:
    """
    2ステージ・探索空間16個のハイパースペース

    ステージごとにブロック2種 × ウィンドウ2個
    """
    return {
        "format": "hyperspace",
        "version": 1,
        "name": "toy",
        "granularity": 8,
        "resolutions": [32, 64],
        "blocks": BLOCKS,
        "stem": STEM,
        "stages": [
            {"block_choice_ids": [0, 1], "depth_range": [1, 2], "kernel_choices": [3, 5],
             "stride": 2, "widths": [16, 24, 32], "ck": 2},
            {"block_choice_ids": [0, 1], "depth_range": [1, 2], "kernel_choices": [3],
             "stride": 2, "widths": [32, 40, 48], "ck": 2},
        ],
        "head": HEAD,
    }


def micro_hyperspace_dict(kernels=(3, 5), widths=(16, 24), expands=(3, 6)) -> dict:
    """
    1ステージだけの極小ハイパースペース（探索空間は "1-0" の1つ）

    既定ではアーキテクチャ 8 個（カーネル2 × 幅2 × 拡張率2）
    """
    return {
        "format": "hyperspace",
        "version": 1,
        "name": "micro",
        "granularity": 8,
        "resolutions": [32],
        "blocks": [{"type": "MBv2", "id": 1, "activation": "relu6", "expand_ratios": list(expands)}],
        "stem": {
            "conv": {"widths": [8], "kernel": 3, "stride": 2, "activation": "relu"},
            "block": STEM["block"],
        },
        "stages": [
            {"block_choice_ids": [1], "depth_range": [1, 1], "kernel_choices": list(kernels),
             "stride": 2, "widths": list(widths), "ck": len(widths)},
        ],
        "head": HEAD,
    }


TOY_DEVICE = {
    "format": "synthetic-device",
    "version": 1,
    "name": "toy_device",
    "hyperspace": "toy",
    "granularity": 8,
    "call_overhead_ms": 0.001,
    "boundary_overhead_ms": 0.0,
    "noise": 0.0,
    "throughput": {
        "conv_bn_act": 2.0e5,
        "dwconv_bn_act": 5.0e4,
        "se": 5.0e4,
        "fc": 1.0e5,
        "global_pool": 1.0e5,
        "elementwise_add": 1.0e5,
        "activation_only": 1.0e5,
    },
    "int8": {
        "kernel_speedup": {
            "conv_bn_act": {"1": 3.5, "3": 3.6, "5": 3.8},
            "dwconv_bn_act": {"1": 2.0, "3": 1.5, "5": 1.2},
        },
        "speedup": {"se": 1.8, "fc": 3.0, "global_pool": 1.5, "elementwise_add": 1.5},
        "activation_speedup": {"relu": 2.0, "hswish": 0.8},
        "fused_activation_penalty": {"dwconv_bn_act": {"hswish": 1.1}},
    },
    "grid": {
        "hw": [1, 64],
        "channels": [8, 512],
        "kernels": [1, 5],
        "strides": [1, 2],
        "activations": {
            "conv_bn_act": ["none", "relu", "relu6"],
            "dwconv_bn_act": ["relu", "relu6"],
            "se": ["none"],
            "fc": ["none"],
            "global_pool": ["none"],
            "elementwise_add": ["none"],
        },
    },
    "lut_profile": {
        "stage_base": [0.3, 0.2],
        "block_quality": {"MBv1": 1.3, "MBv2": 1.0},
        "int8_gap": {"MBv1": 0.3, "MBv2": 0.15},
        "noise": 0.0,
        "stem_loss": {"fp32": 0.02, "int8": 0.03},
        "head_loss": {"fp32": 0.05, "int8": 0.06},
    },
}


def toy_hyperspace():
    return hyperspace_from_dict(toy_hyperspace_dict(), source="toy.json")


def micro_hyperspace(**kwargs):
    return hyperspace_from_dict(micro_hyperspace_dict(**kwargs), source="micro.json")


def toy_profile(noise: float = 0.0) -> LutProfile:
    d = dict(TOY_DEVICE["lut_profile"])
    d["noise"] = noise
    return LutProfile.from_dict(d)


def toy_lut(hs, seed: int = 0, noise: float = 0.0):
    return synth_lut(hs, seed, toy_profile(noise))


def toy_device():
    return device_from_dict(TOY_DEVICE, source="toy_device.json")


@lru_cache(maxsize=None)
def toy_predictor():
    """合成デバイスの小さな格子で学習した予測器（テスト間で共有、学習後は不変）"""
    return train_predictor(synth_samples(toy_device(), seed=0), device="toy_device", granularity=8)


# カーネル種別ごとの定数レイテンシ (FP32, INT8)
CONSTANT_LATENCY = {
    KernelKind.CONV: (0.4, 0.1),
    KernelKind.DWCONV: (0.1, 0.05),
    KernelKind.SE: (0.08, 0.04),
    KernelKind.FC: (0.06, 0.03),
    KernelKind.POOL: (0.04, 0.02),
    KernelKind.ADD: (0.02, 0.01),
}


def constant_predictor():
    """種別ごとにサンプル1つだけで学習した予測器（どのカーネルも種別の定数を返す）"""
    samples = []
    for kind, (fp32, int8) in CONSTANT_LATENCY.items():
        kernel = Kernel(kind, 8, 8, 8, 8, 1, 1, "relu")
        samples.append(LatencySample(kernel, Precision.FP32, fp32))
        samples.append(LatencySample(kernel, Precision.INT8, int8))
    return train_predictor(samples)


def brute_force_scores(space, lut, predictor, precision=Precision.INT8):
    """探索空間の全アーキテクチャの (代理精度, レイテンシ, キー, アーキテクチャ)"""
    rows = []
    for arch in enumerate_architectures(space):
        rows.append((accuracy_proxy(lut, arch, precision), predict_latency(predictor, arch, precision),
                     arch.key(), arch))
    return rows


def brute_force_top(rows, constraint, k):
    """制約を満たす上位 k 個（代理精度降順、同点はレイテンシ・キーの昇順）"""
    feasible = [r for r in rows if r[1] <= constraint]
    feasible.sort(key=lambda r: (-r[0], r[1], r[2]))
    return feasible[:k]
