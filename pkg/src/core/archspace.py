"""
探索空間とアーキテクチャ

ハイパースペース上の1点（SearchSpace）と、そこから取り出す具体的なサブネット（Architecture）、
および進化アルゴリズムが使う文字列エンコーディング
"""

import itertools
import re
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from core.hyperspace import BlockSpec, BlockType, HeadSpec, Hyperspace
from utils.errors import InvalidArchitecture, MalformedEncoding, OutOfRangeDigit, UnsupportedVersion

ARCHITECTURE_FORMAT = "architecture"
ARCHITECTURE_VERSION = 1

_ENCODING_RE = re.compile(r'^([0-9,]+)-([0-9,]+)$')


# ---------------------------------------------------------------------------
# アーキテクチャ
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LayerConfig:
    """1層の設定（カーネルサイズ、出力チャネル幅、拡張率）"""
    kernel: int
    width: int
    expand: float

    def __repr__(self):
        return f"k{self.kernel}/c{self.width}/e{self.expand:g}"


@dataclass(frozen=True)
class StageConfig:
    """
    1ステージの具体的な設定

    ストライドは最初の層だけに適用され、以降の層はストライド1
    """
    block_type: BlockType
    activation: str
    stride: int
    layers: Tuple[LayerConfig, ...]

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def out_width(self) -> int:
        return self.layers[-1].width

    def token(self) -> str:
        """キー文字列の1要素"""
        layers = "-".join(f"{l.kernel}/{l.width}/{l.expand:g}" for l in self.layers)
        return f"{self.block_type.value}:{layers}"


@dataclass(frozen=True)
class StemConfig:
    """ステムの具体的な設定（最初の Conv とステムブロック）"""
    conv_width: int
    conv_kernel: int
    conv_stride: int
    conv_activation: str
    block: StageConfig


@dataclass(frozen=True)
class Architecture:
    """
    具体的なサブネット

    入力解像度、ステム、各ステージ、ヘッドを持つ。space_encoding は元の探索空間（不明なら空文字）
    """
    resolution: int
    stem: StemConfig
    stages: Tuple[StageConfig, ...]
    head: HeadSpec
    granularity: int
    space_encoding: str = field(default="", compare=False)

    @cached_property
    def _key(self) -> str:
        parts = [f"r{self.resolution}", f"c{self.stem.conv_width}", self.stem.block.token()]
        parts.extend(stage.token() for stage in self.stages)
        return "|".join(parts)

    def key(self) -> str:
        """正規のキー文字列（順序付けと重複排除に使う）"""
        return self._key

    @property
    def depth(self) -> int:
        """探索対象ステージの総層数"""
        return sum(stage.depth for stage in self.stages)

    def __repr__(self):
        depths = ",".join(str(s.depth) for s in self.stages)
        return f"Architecture(r={self.resolution}, depths=[{depths}])"


# ---------------------------------------------------------------------------
# 探索空間
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ResolvedStage:
    """探索空間の1ステージを展開したもの（各次元の候補リスト）"""
    index: int
    block: BlockSpec
    depths: Tuple[int, ...]
    kernels: Tuple[int, ...]
    widths: Tuple[int, ...]
    expands: Tuple[float, ...]
    stride: int


@dataclass(frozen=True)
class SearchSpace:
    """
    探索空間（ハイパースペースの1点）

    ステージごとのブロック探索ID と、チャネル幅ウィンドウの開始位置で表される
    """
    hyperspace: Hyperspace = field(compare=False, repr=False, hash=False)
    block_ids: Tuple[int, ...]
    width_starts: Tuple[int, ...]

    def __post_init__(self):
        n = self.hyperspace.num_stages
        if len(self.block_ids) != n or len(self.width_starts) != n:
            raise MalformedEncoding(
                f"{self.block_ids}-{self.width_starts}",
                f"ステージ数は {n} である必要があります")
        for i, spec in enumerate(self.hyperspace.stages):
            if self.block_ids[i] not in spec.block_choices:
                raise OutOfRangeDigit(i + 1, "block", self.block_ids[i])
            if not 0 <= self.width_starts[i] < spec.window_count:
                raise OutOfRangeDigit(i + 1, "width", self.width_starts[i])

    @cached_property
    def encoding(self) -> str:
        return encode_space(self)

    @cached_property
    def stages(self) -> Tuple[ResolvedStage, ...]:
        """各ステージの候補を展開"""
        resolved = []
        for i, spec in enumerate(self.hyperspace.stages):
            block = self.hyperspace.block(self.block_ids[i])
            resolved.append(ResolvedStage(
                index=i + 1,
                block=block,
                depths=spec.depths,
                kernels=spec.kernel_choices,
                widths=spec.window(self.width_starts[i]),
                expands=block.expand_ratios,
                stride=spec.stride,
            ))
        return tuple(resolved)

    def with_stage(self, stage: int, block_id: Optional[int] = None,
                   width_start: Optional[int] = None) -> "SearchSpace":
        """
        1ステージだけを変更した探索空間を返す

        Args:
            stage: 0 始まりのステージ番号
            block_id: 新しいブロックID（None なら変更しない）
            width_start: 新しいウィンドウ開始位置（None なら変更しない）
        """
        block_ids = list(self.block_ids)
        width_starts = list(self.width_starts)
        if block_id is not None:
            block_ids[stage] = block_id
        if width_start is not None:
            width_starts[stage] = width_start
        return replace(self, block_ids=tuple(block_ids), width_starts=tuple(width_starts))

    def __repr__(self):
        return f"SearchSpace({self.encoding})"


def _encode_half(values: Sequence[int]) -> str:
    # 10 以上の値があればカンマ区切りにフォールバック
    if all(0 <= v < 10 for v in values):
        return "".join(str(v) for v in values)
    return ",".join(str(v) for v in values)


def _decode_half(text: str, encoding: str) -> List[int]:
    if "," in text:
        parts = text.split(",")
        if any(p == "" for p in parts):
            raise MalformedEncoding(encoding, "空の要素があります")
        return [int(p) for p in parts]
    return [int(c) for c in text]


def encode_space(space: SearchSpace) -> str:
    """
    探索空間を "<ブロックID列>-<幅開始位置列>" にエンコード

    Args:
        space: 探索空間

    Returns:
        例: "111111-000000"
    """
    return f"{_encode_half(space.block_ids)}-{_encode_half(space.width_starts)}"


def decode_space(encoding: str, hs: Hyperspace) -> SearchSpace:
    """
    エンコーディング文字列から探索空間を復元

    Args:
        encoding: "111111-020000" のような文字列
        hs: ハイパースペース

    Returns:
        探索空間

    Raises:
        MalformedEncoding: 形式や長さが不正
        OutOfRangeDigit: ブロックIDがプール外、またはウィンドウ開始位置が範囲外
    """
    match = _ENCODING_RE.match(encoding.strip())
    if not match:
        raise MalformedEncoding(encoding, "形式は <ブロック>-<幅> です")
    block_ids = _decode_half(match.group(1), encoding)
    width_starts = _decode_half(match.group(2), encoding)
    n = hs.num_stages
    if len(block_ids) != n or len(width_starts) != n:
        raise MalformedEncoding(encoding, f"各部分は {n} 桁である必要があります")
    return SearchSpace(hs, tuple(block_ids), tuple(width_starts))


def random_space(hs: Hyperspace, rng: np.random.Generator) -> SearchSpace:
    """ハイパースペースから一様ランダムに探索空間を選ぶ"""
    block_ids = []
    width_starts = []
    for spec in hs.stages:
        block_ids.append(spec.block_choices[int(rng.integers(len(spec.block_choices)))])
        width_starts.append(int(rng.integers(spec.window_count)))
    return SearchSpace(hs, tuple(block_ids), tuple(width_starts))


def hyperspace_cardinality(hs: Hyperspace) -> int:
    """ハイパースペースに含まれる探索空間の数"""
    total = 1
    for spec in hs.stages:
        total *= len(spec.block_choices) * spec.window_count
    return total


# ---------------------------------------------------------------------------
# サンプリング
# ---------------------------------------------------------------------------

def _pick(choices: Sequence, u: float):
    # u は [0, 1) の一様乱数
    return choices[min(int(u * len(choices)), len(choices) - 1)]


def _slot_count(space: SearchSpace) -> int:
    stem = space.hyperspace.stem
    count = 3 + 3 * max(stem.block_depths)
    for stage in space.stages:
        count += 1 + 3 * max(stage.depths)
    return count


def _stem_stage(space: SearchSpace, layers: Tuple[LayerConfig, ...]) -> StageConfig:
    stem = space.hyperspace.stem
    return StageConfig(stem.block_type, stem.block_activation, stem.block_stride, layers)


def _stem_config(space: SearchSpace, conv_width: int, block: StageConfig) -> StemConfig:
    stem = space.hyperspace.stem
    return StemConfig(conv_width, stem.conv_kernel, stem.conv_stride, stem.conv_activation, block)


def sample_architecture(space: SearchSpace, rng: np.random.Generator) -> Architecture:
    """
    探索空間から一様にアーキテクチャをサンプリング

    各次元（解像度、深さ、層ごとのカーネル・幅・拡張率）を独立かつ一様に選ぶ。
    乱数は1回の呼び出しでまとめて取り出すので、同じ Generator 状態なら同じ結果になる

    Args:
        space: 探索空間
        rng: 乱数生成器

    Returns:
        アーキテクチャ
    """
    hs = space.hyperspace
    stem = hs.stem
    u = rng.random(_slot_count(space))
    pos = 0

    resolution = _pick(hs.resolutions, u[pos])
    conv_width = _pick(stem.conv_widths, u[pos + 1])
    stem_depth = _pick(stem.block_depths, u[pos + 2])
    pos += 3
    stem_layers = []
    for j in range(max(stem.block_depths)):
        if j < stem_depth:
            stem_layers.append(LayerConfig(
                _pick(stem.block_kernel_choices, u[pos]),
                _pick(stem.block_widths, u[pos + 1]),
                _pick(stem.block_expand_ratios, u[pos + 2]),
            ))
        pos += 3

    stages = []
    for rs in space.stages:
        depth = _pick(rs.depths, u[pos])
        pos += 1
        layers = []
        for j in range(max(rs.depths)):
            if j < depth:
                layers.append(LayerConfig(
                    _pick(rs.kernels, u[pos]),
                    _pick(rs.widths, u[pos + 1]),
                    _pick(rs.expands, u[pos + 2]),
                ))
            pos += 3
        stages.append(StageConfig(rs.block.block_type, rs.block.activation, rs.stride, tuple(layers)))

    return Architecture(
        resolution=resolution,
        stem=_stem_config(space, conv_width, _stem_stage(space, tuple(stem_layers))),
        stages=tuple(stages),
        head=hs.head,
        granularity=hs.granularity,
        space_encoding=space.encoding,
    )


def _extreme_architecture(space: SearchSpace, pick) -> Architecture:
    hs = space.hyperspace
    stem = hs.stem
    stem_layer = LayerConfig(pick(stem.block_kernel_choices), pick(stem.block_widths),
                             pick(stem.block_expand_ratios))
    stem_depth = pick(stem.block_depths)
    stages = []
    for rs in space.stages:
        layer = LayerConfig(pick(rs.kernels), pick(rs.widths), pick(rs.expands))
        stages.append(StageConfig(rs.block.block_type, rs.block.activation, rs.stride,
                                  (layer,) * pick(rs.depths)))
    return Architecture(
        resolution=pick(hs.resolutions),
        stem=_stem_config(space, pick(stem.conv_widths),
                          _stem_stage(space, (stem_layer,) * stem_depth)),
        stages=tuple(stages),
        head=hs.head,
        granularity=hs.granularity,
        space_encoding=space.encoding,
    )


def min_architecture(space: SearchSpace) -> Architecture:
    """すべての候補リストの最小値を取るアーキテクチャ"""
    return _extreme_architecture(space, min)


def max_architecture(space: SearchSpace) -> Architecture:
    """すべての候補リストの最大値を取るアーキテクチャ"""
    return _extreme_architecture(space, max)


# ---------------------------------------------------------------------------
# 数え上げ
# ---------------------------------------------------------------------------

def _stage_count(depths: Sequence[int], per_layer: int) -> int:
    return sum(per_layer ** d for d in depths)


def space_cardinality(space: SearchSpace) -> int:
    """
    探索空間に含まれる異なるアーキテクチャの数（解像度とステムを含む）

    Python の整数で計算するのでオーバーフローしない
    """
    hs = space.hyperspace
    stem = hs.stem
    total = len(hs.resolutions) * len(stem.conv_widths)
    total *= _stage_count(stem.block_depths, len(stem.block_kernel_choices)
                          * len(stem.block_widths) * len(stem.block_expand_ratios))
    for rs in space.stages:
        total *= _stage_count(rs.depths, len(rs.kernels) * len(rs.widths) * len(rs.expands))
    return total


def _stage_options(block_type: BlockType, activation: str, stride: int, depths: Sequence[int],
                   kernels: Sequence[int], widths: Sequence[int],
                   expands: Sequence[float]) -> List[StageConfig]:
    layer_choices = [LayerConfig(k, w, e) for k in kernels for w in widths for e in expands]
    options = []
    for depth in depths:
        for layers in itertools.product(layer_choices, repeat=depth):
            options.append(StageConfig(block_type, activation, stride, tuple(layers)))
    return options


def enumerate_architectures(space: SearchSpace) -> Iterator[Architecture]:
    """
    探索空間のすべてのアーキテクチャを決まった順序で列挙

    トイ規模の探索空間での全数検証用
    """
    hs = space.hyperspace
    stem = hs.stem
    stem_options = _stage_options(stem.block_type, stem.block_activation, stem.block_stride,
                                  stem.block_depths, stem.block_kernel_choices,
                                  stem.block_widths, stem.block_expand_ratios)
    stage_options = [
        _stage_options(rs.block.block_type, rs.block.activation, rs.stride,
                       rs.depths, rs.kernels, rs.widths, rs.expands)
        for rs in space.stages
    ]
    for resolution, conv_width, stem_block, *stages in itertools.product(
            hs.resolutions, stem.conv_widths, stem_options, *stage_options):
        yield Architecture(
            resolution=resolution,
            stem=_stem_config(space, conv_width, stem_block),
            stages=tuple(stages),
            head=hs.head,
            granularity=hs.granularity,
            space_encoding=space.encoding,
        )


# ---------------------------------------------------------------------------
# 検証
# ---------------------------------------------------------------------------

def _check(condition: bool, field_name: str, value):
    if not condition:
        raise InvalidArchitecture(field_name, value)


def _check_stage(stage: StageConfig, where: str, block_type: BlockType, activation: str,
                 stride: int, depths, kernels, widths, expands, granularity: int):
    _check(stage.block_type == block_type, f"{where}.block_type", stage.block_type.value)
    _check(stage.activation == activation, f"{where}.activation", stage.activation)
    _check(stage.stride == stride, f"{where}.stride", stage.stride)
    _check(stage.depth in depths, f"{where}.depth", stage.depth)
    for j, layer in enumerate(stage.layers):
        lw = f"{where}.layers[{j}]"
        _check(layer.kernel in kernels, f"{lw}.kernel", layer.kernel)
        _check(layer.width in widths, f"{lw}.width", layer.width)
        _check(layer.width % granularity == 0, f"{lw}.width", layer.width)
        _check(layer.expand in expands, f"{lw}.expand", layer.expand)


def validate_architecture(arch: Architecture, space: SearchSpace) -> None:
    """
    アーキテクチャが探索空間の範囲内にあるか検証

    Raises:
        InvalidArchitecture: 最初に見つかった範囲外のフィールド
    """
    hs = space.hyperspace
    stem = hs.stem
    _check(arch.granularity == hs.granularity, "granularity", arch.granularity)
    _check(arch.resolution in hs.resolutions, "resolution", arch.resolution)
    _check(arch.stem.conv_width in stem.conv_widths, "stem.conv_width", arch.stem.conv_width)
    _check(arch.stem.conv_kernel == stem.conv_kernel, "stem.conv_kernel", arch.stem.conv_kernel)
    _check(arch.stem.conv_stride == stem.conv_stride, "stem.conv_stride", arch.stem.conv_stride)
    _check(arch.stem.conv_activation == stem.conv_activation, "stem.conv_activation",
           arch.stem.conv_activation)
    _check_stage(arch.stem.block, "stem.block", stem.block_type, stem.block_activation,
                 stem.block_stride, stem.block_depths, stem.block_kernel_choices,
                 stem.block_widths, stem.block_expand_ratios, hs.granularity)
    _check(len(arch.stages) == len(space.stages), "stages", len(arch.stages))
    for i, (stage, rs) in enumerate(zip(arch.stages, space.stages)):
        _check_stage(stage, f"stages[{i}]", rs.block.block_type, rs.block.activation,
                     rs.stride, rs.depths, rs.kernels, rs.widths, rs.expands, hs.granularity)
    _check(arch.head == hs.head, "head", arch.head)


# ---------------------------------------------------------------------------
# 表形式の記述（d / c / k / e）
# ---------------------------------------------------------------------------

def _stage_to_dict(stage: StageConfig) -> dict:
    return {
        "type": stage.block_type.value,
        "activation": stage.activation,
        "stride": stage.stride,
        "d": stage.depth,
        "c": [l.width for l in stage.layers],
        "k": [l.kernel for l in stage.layers],
        "e": [l.expand for l in stage.layers],
    }


def _stage_from_dict(d: dict, where: str) -> StageConfig:
    try:
        depth = int(d["d"])
        widths, kernels, expands = d["c"], d["k"], d["e"]
        block_type = BlockType.parse(d["type"])
        activation = d["activation"]
        stride = int(d["stride"])
    except KeyError as e:
        raise InvalidArchitecture(f"{where}.{e.args[0]}", "missing")
    if not (len(widths) == len(kernels) == len(expands) == depth) or depth < 1:
        raise InvalidArchitecture(f"{where}.d", depth)
    layers = tuple(LayerConfig(int(k), int(c), float(e)) for k, c, e in zip(kernels, widths, expands))
    return StageConfig(block_type, activation, stride, layers)


def describe_architecture(arch: Architecture) -> dict:
    """
    アーキテクチャを表形式（ステージごとの d, c, k, e と解像度）の辞書に変換

    Returns:
        architecture フォーマットの辞書
    """
    return {
        "format": ARCHITECTURE_FORMAT,
        "version": ARCHITECTURE_VERSION,
        "space": arch.space_encoding,
        "resolution": arch.resolution,
        "granularity": arch.granularity,
        "stem": {
            "conv": {"c": arch.stem.conv_width, "k": arch.stem.conv_kernel,
                     "stride": arch.stem.conv_stride, "activation": arch.stem.conv_activation},
            "block": _stage_to_dict(arch.stem.block),
        },
        "stages": [_stage_to_dict(stage) for stage in arch.stages],
        "head": {"feature_width": arch.head.feature_width, "num_classes": arch.head.num_classes,
                 "activation": arch.head.activation},
    }


def architecture_from_dict(d: dict) -> Architecture:
    """表形式の辞書からアーキテクチャを復元"""
    fmt = d.get("format", ARCHITECTURE_FORMAT)
    version = d.get("version", ARCHITECTURE_VERSION)
    if fmt != ARCHITECTURE_FORMAT or version != ARCHITECTURE_VERSION:
        raise UnsupportedVersion(fmt, version)
    try:
        conv = d["stem"]["conv"]
        head = d["head"]
        stem = StemConfig(
            conv_width=int(conv["c"]),
            conv_kernel=int(conv.get("k", 3)),
            conv_stride=int(conv.get("stride", 2)),
            conv_activation=conv.get("activation", "relu"),
            block=_stage_from_dict(d["stem"]["block"], "stem.block"),
        )
        arch = Architecture(
            resolution=int(d["resolution"]),
            stem=stem,
            stages=tuple(_stage_from_dict(s, f"stages[{i}]") for i, s in enumerate(d["stages"])),
            head=HeadSpec(int(head["feature_width"]), int(head["num_classes"]),
                          head.get("activation", "relu")),
            granularity=int(d.get("granularity", 1)),
            space_encoding=d.get("space", ""),
        )
    except KeyError as e:
        raise InvalidArchitecture(str(e.args[0]), "missing")
    for i, stage in enumerate(arch.stages):
        for j, layer in enumerate(stage.layers):
            _check(layer.width % arch.granularity == 0, f"stages[{i}].layers[{j}].width", layer.width)
    return arch


def load_architecture(path: str) -> Architecture:
    """アーキテクチャ JSON ファイルを読み込む"""
    from core.hyperspace import read_json, resolve_preset
    return architecture_from_dict(read_json(resolve_preset(path)))
