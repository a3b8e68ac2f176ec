"""
合成デバイスのテスト
"""

import sys
import os
import copy

# srcディレクトリをパスに追加
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, os.path.join(project_root, 'src'))

import pytest

from core.archspace import load_architecture
from core.precision import Precision
from costmodel.device import (device_from_dict, grid_size, holdout_samples, load_device,
                              speedup_report, synth_samples, with_noise)
from costmodel.kernels import Kernel, KernelKind, decompose
from utils.errors import ConfigError, MalformedFile, UnsupportedVersion

from toy_fixtures import TOY_DEVICE, toy_device


@pytest.fixture(scope="module")
def cpu():
    return load_device("synth_cpu")


@pytest.fixture(scope="module")
def mobile():
    return load_device("synth_mobile")


def test_conv_speedup(cpu):
    """Conv の INT8 高速化率は K によらず 3.5〜4.0 倍"""
    for k in (1, 3, 5, 7):
        kernel = Kernel(KernelKind.CONV, 28, 28, 64, 64, k, 1, "relu")
        assert 3.5 <= cpu.int8_speedup(kernel) <= 4.0
        # 呼び出しオーバーヘッドの分だけ実測の比は小さい
        ratio = cpu.latency(kernel, Precision.FP32) / cpu.latency(kernel, Precision.INT8)
        assert ratio < cpu.int8_speedup(kernel)
        assert ratio == pytest.approx(cpu.int8_speedup(kernel), rel=0.05)


def test_conv_swish_speedup(cpu):
    """Swish / Hswish を融合した Conv も 3.5〜4.0 倍"""
    for act in ("hswish", "swish"):
        for k in (1, 3, 5, 7):
            assert 3.5 <= cpu.int8_speedup(Kernel(KernelKind.CONV, 28, 28, 64, 64, k, 1, act)) <= 4.0


def test_dwconv_speedup_decreasing(cpu):
    """CPU の DWConv はカーネルが大きいほど高速化率が下がる"""
    values = [cpu.int8_speedup(Kernel(KernelKind.DWCONV, 28, 28, 64, 64, k, 1, "relu"))
              for k in (1, 3, 5, 7)]
    assert values == sorted(values, reverse=True)
    assert values[-1] < 1.0


def test_hswish_slower_int8(cpu):
    """CPU では Hswish 単体の INT8 が FP32 より遅い"""
    kernel = Kernel(KernelKind.ACTIVATION, 28, 28, 64, 64, 1, 1, "hswish")
    assert cpu.int8_speedup(kernel) < 1.0
    assert cpu.latency(kernel, Precision.INT8) > cpu.latency(kernel, Precision.FP32)


def test_fused_activation_penalty(cpu):
    """Hswish を融合した DWConv は ReLU より高速化率が小さい。Conv には影響しない"""
    relu = Kernel(KernelKind.DWCONV, 28, 28, 64, 64, 3, 1, "relu")
    hswish = Kernel(KernelKind.DWCONV, 28, 28, 64, 64, 3, 1, "hswish")
    assert cpu.int8_speedup(hswish) == pytest.approx(cpu.int8_speedup(relu) / 1.1)
    conv_relu = Kernel(KernelKind.CONV, 28, 28, 64, 64, 3, 1, "relu")
    conv_hswish = Kernel(KernelKind.CONV, 28, 28, 64, 64, 3, 1, "hswish")
    assert cpu.int8_speedup(conv_hswish) == cpu.int8_speedup(conv_relu)


def test_se_slower_int8(cpu):
    """CPU では SE の INT8 が FP32 より遅い"""
    for c in (64, 256):
        kernel = Kernel(KernelKind.SE, 14, 14, c, c // 4, 1, 1, "none")
        assert cpu.latency(kernel, Precision.INT8) > cpu.latency(kernel, Precision.FP32)


def test_small_channels_gain_less(cpu):
    """チャネル数が小さい Conv1x1 ほど INT8 の高速化率が小さい"""
    def ratio(cin, cout):
        kernel = Kernel(KernelKind.CONV, 14, 14, cin, cout, 1, 1, "relu")
        return cpu.latency(kernel, Precision.FP32) / cpu.latency(kernel, Precision.INT8)

    small = ratio(16, 64)
    large = ratio(256, 1024)
    print(f"Conv1x1 高速化率: C=16 {small:.2f}x, C=256 {large:.2f}x")
    assert small < large
    assert small < 3.0
    assert large == pytest.approx(3.5, rel=0.02)


def test_closed_form(cpu):
    """ノイズ 0 の Conv は閉形式の値"""
    dev = with_noise(cpu, 0.0)
    kernel = Kernel(KernelKind.CONV, 56, 56, 64, 128, 3, 1, "relu")
    fp32 = 0.004 + 9 * 64 * 128 * 56 * 56 / 8.0e6
    assert dev.latency(kernel, Precision.FP32) == pytest.approx(fp32)
    assert dev.latency(kernel, Precision.INT8) == pytest.approx(0.004 + (fp32 - 0.004) / 3.6)
    samples = synth_samples(dev, seed=0)
    match = [s for s in samples if s.kernel == Kernel(KernelKind.CONV, 56, 56, 64, 64, 3, 1, "relu")
             and s.precision == Precision.FP32]
    assert len(match) == 1
    assert match[0].latency_ms == pytest.approx(0.004 + 9 * 64 * 64 * 56 * 56 / 8.0e6)


def test_channel_step(mobile):
    """粒度の中では同じレイテンシ、境界を越えると増える"""
    assert mobile.granularity == 8

    def dw(c):
        return mobile.latency(Kernel(KernelKind.DWCONV, 28, 28, c, c, 3, 1, "relu6"), Precision.INT8)

    assert dw(95) == dw(96)
    assert dw(89) == dw(96)
    assert dw(97) > dw(96)
    values = [dw(c) for c in range(8, 129)]
    assert values == sorted(values)


def test_noise_bound():
    """計測ノイズは ±2% 以内"""
    dev = with_noise(toy_device(), 0.02)
    samples = synth_samples(dev, seed=4)
    for s in samples:
        truth = dev.latency(s.kernel, s.precision)
        assert abs(s.latency_ms / truth - 1.0) <= 0.02 + 1e-12


def test_sample_count():
    """サンプル数は格子の積"""
    dev = toy_device()
    samples = synth_samples(dev, seed=0)
    # conv 3 活性化 × 32、dwconv 2 × 16、se 8、fc / pool / add 各 4
    assert len(samples) == grid_size(dev.grid) == (96 + 32 + 8 + 4 + 4 + 4) * 2


def test_samples_deterministic():
    """同じシードなら同じサンプル"""
    dev = with_noise(toy_device(), 0.02)
    a = synth_samples(dev, seed=9)
    b = synth_samples(dev, seed=9)
    c = synth_samples(dev, seed=10)
    assert a == b
    assert a != c


def test_model_latency_boundary(cpu):
    """INT8 のモデルレイテンシは量子化境界のオーバーヘッドを含む"""
    arch = load_architecture("mobilenetv2_ref")
    kernels = decompose(arch)
    int8 = sum(cpu.latency(k, Precision.INT8) for k in kernels)
    fp32 = sum(cpu.latency(k, Precision.FP32) for k in kernels)
    assert cpu.model_latency(arch, Precision.INT8) == pytest.approx(int8 + 0.05)
    assert cpu.model_latency(arch, Precision.FP32) == pytest.approx(fp32)


def test_conv_net_speedup(cpu):
    """Conv だけのネットの INT8 高速化率は 3.5〜4.0 倍"""
    kernels = [Kernel(KernelKind.CONV, h, h, c, c * 2, k, 1, "relu")
               for h, c, k in [(56, 32, 3), (28, 64, 1), (14, 128, 5), (7, 256, 7)]]
    fp32 = sum(cpu.latency(k, Precision.FP32) for k in kernels)
    int8 = sum(cpu.latency(k, Precision.INT8) for k in kernels)
    assert 3.5 <= speedup_report(fp32, int8)["speedup"] <= 4.0


def test_holdout_samples(cpu):
    """ホールドアウトは粒度の倍数で、格子の範囲内"""
    samples = holdout_samples(cpu, 300, seed=1)
    assert len(samples) == 300
    for s in samples:
        assert s.kernel.cin % 16 == 0
        assert 16 <= s.kernel.cin <= 4096
        assert s.latency_ms > 0
    assert holdout_samples(cpu, 50, seed=1) == samples[:50]


def test_unknown_version():
    d = copy.deepcopy(TOY_DEVICE)
    d["version"] = 3
    with pytest.raises(UnsupportedVersion):
        device_from_dict(d)


def test_missing_throughput():
    """格子にあるカーネル種別のスループットがなければエラー"""
    d = copy.deepcopy(TOY_DEVICE)
    del d["throughput"]["se"]
    with pytest.raises(ConfigError):
        device_from_dict(d)


def test_missing_field():
    d = copy.deepcopy(TOY_DEVICE)
    del d["call_overhead_ms"]
    with pytest.raises(MalformedFile) as e:
        device_from_dict(d)
    assert e.value.column == "call_overhead_ms"


if __name__ == "__main__":
    dev = load_device("synth_cpu")
    test_conv_speedup(dev)
    test_dwconv_speedup_decreasing(dev)
    print("OK")
