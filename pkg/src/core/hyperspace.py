"""
ハイパースペース定義

デバイスごとの探索空間の文法（ステージ × ブロック候補 × チャネル幅ウィンドウ）を表現するクラス群と、
JSON プリセットの読み込み
"""

import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Tuple, Union

from utils.errors import ConfigError, MalformedFile, UnsupportedVersion

logger = logging.getLogger(__name__)

PRESET_DIR = Path(__file__).resolve().parent.parent / "presets"
HYPERSPACE_FORMAT = "hyperspace"
HYPERSPACE_VERSION = 1


class BlockType(Enum):
    """ブロックの種類（探索対象ブロックと構造上の役割）"""
    MBV1 = "MBv1"
    MBV2 = "MBv2"
    MBV3 = "MBv3"
    RESIDUAL = "ResidualBottleneck"
    RESIDUAL_SE = "ResidualBottleneckSE"
    FUSED_MB = "FusedMB"
    FUSED_MB_SE = "FusedMBSE"
    # 構造上の役割（探索対象外）
    CONV_STEM = "ConvStem"
    STEM_BLOCK = "StemBlock"
    CLASSIFIER_HEAD = "ClassifierHead"

    @property
    def search_id(self) -> Optional[int]:
        """探索 ID（0..6）。構造上の役割は None"""
        try:
            return SEARCHABLE_BLOCKS.index(self)
        except ValueError:
            return None

    @property
    def has_se(self) -> bool:
        """SE を含むか"""
        return self in (BlockType.MBV3, BlockType.RESIDUAL_SE, BlockType.FUSED_MB_SE)

    @classmethod
    def parse(cls, name: str) -> "BlockType":
        """名前からブロック種別を取得"""
        try:
            return cls(name)
        except ValueError:
            raise ConfigError(f"未知のブロック種別: {name}")


# 探索 ID 順（MBv1=0 ... FusedMBSE=6）
SEARCHABLE_BLOCKS: Tuple[BlockType, ...] = (
    BlockType.MBV1,
    BlockType.MBV2,
    BlockType.MBV3,
    BlockType.RESIDUAL,
    BlockType.RESIDUAL_SE,
    BlockType.FUSED_MB,
    BlockType.FUSED_MB_SE,
)


@dataclass(frozen=True)
class BlockSpec:
    """デバイスごとのブロック設定（活性化関数と拡張率の候補）"""
    block_type: BlockType
    activation: str
    expand_ratios: Tuple[float, ...]

    @property
    def search_id(self) -> int:
        return self.block_type.search_id


@dataclass(frozen=True)
class ElasticStageSpec:
    """
    弾性ステージの定義

    ブロック候補、深さ範囲、カーネル候補、ストライド、チャネル幅の梯子、ウィンドウ長 ck を持つ
    """
    stage_index: int
    block_choices: Tuple[int, ...]
    depth_range: Tuple[int, int]
    kernel_choices: Tuple[int, ...]
    stride: int
    width_ladder: Tuple[int, ...]
    ck: int

    @property
    def depths(self) -> Tuple[int, ...]:
        """深さの候補"""
        return tuple(range(self.depth_range[0], self.depth_range[1] + 1))

    @property
    def window_count(self) -> int:
        """ウィンドウ開始位置の数"""
        return len(self.width_ladder) - self.ck + 1

    def window(self, start: int) -> Tuple[int, ...]:
        """開始位置 start から ck 個連続するチャネル幅"""
        return self.width_ladder[start:start + self.ck]


@dataclass(frozen=True)
class StemSpec:
    """ステム（最初の Conv とステムブロック）の定義。探索空間のエンコーディングには含まれない"""
    conv_widths: Tuple[int, ...]
    conv_kernel: int
    conv_stride: int
    conv_activation: str
    block_type: BlockType
    block_activation: str
    block_depth_range: Tuple[int, int]
    block_kernel_choices: Tuple[int, ...]
    block_stride: int
    block_widths: Tuple[int, ...]
    block_expand_ratios: Tuple[float, ...]

    @property
    def block_depths(self) -> Tuple[int, ...]:
        return tuple(range(self.block_depth_range[0], self.block_depth_range[1] + 1))


@dataclass(frozen=True)
class HeadSpec:
    """分類ヘッド（1x1 Conv → Global Pool → FC）"""
    feature_width: int
    num_classes: int
    activation: str


@dataclass(frozen=True)
class Hyperspace:
    """
    ハイパースペース

    すべての候補探索空間を生成する文法。ステージごとにブロック種別とチャネル幅ウィンドウを選ぶ
    """
    name: str
    granularity: int
    blocks: Tuple[BlockSpec, ...]
    stem: StemSpec
    stages: Tuple[ElasticStageSpec, ...]
    head: HeadSpec
    resolutions: Tuple[int, ...]

    def block(self, search_id: int) -> BlockSpec:
        """探索 ID からブロック設定を取得"""
        for spec in self.blocks:
            if spec.search_id == search_id:
                return spec
        raise ConfigError(f"ハイパースペース {self.name} にブロックID {search_id} がありません")

    @property
    def num_stages(self) -> int:
        return len(self.stages)

    def __repr__(self):
        return f"Hyperspace({self.name}, {self.num_stages} stages, g={self.granularity})"


def width_ladder(width_min: int, width_max: int, step: int) -> Tuple[int, ...]:
    """
    チャネル幅の梯子を生成（刻みは粒度）

    Args:
        width_min: 最小幅
        width_max: 最大幅
        step: 刻み幅

    Returns:
        昇順の幅のタプル
    """
    if step <= 0 or width_min <= 0 or width_max < width_min:
        raise ConfigError(f"不正な幅の範囲: {width_min}-{width_max} (刻み {step})")
    return tuple(range(width_min, width_max + 1, step))


def _check_divisible(widths: Tuple[int, ...], granularity: int, where: str):
    for w in widths:
        if w % granularity != 0:
            raise ConfigError(f"{where}: 幅 {w} が粒度 {granularity} で割り切れません")


def _ladder_from_dict(d: dict, granularity: int, where: str) -> Tuple[int, ...]:
    # 明示的な幅リストがあればそれを優先（トイ用）
    if "widths" in d:
        ladder = tuple(int(w) for w in d["widths"])
    else:
        ladder = width_ladder(int(d["width_min"]), int(d["width_max"]), granularity)
    if any(b <= a for a, b in zip(ladder, ladder[1:])):
        raise ConfigError(f"{where}: 幅の梯子が狭義単調増加ではありません")
    _check_divisible(ladder, granularity, where)
    return ladder


def _range_pair(value, where: str) -> Tuple[int, int]:
    lo, hi = int(value[0]), int(value[1])
    if lo < 1 or hi < lo:
        raise ConfigError(f"{where}: 不正な深さ範囲 {value}")
    return lo, hi


def hyperspace_from_dict(data: dict, source: str = "<dict>") -> Hyperspace:
    """
    辞書からハイパースペースを構築

    Args:
        data: プリセット JSON の内容
        source: エラーメッセージ用の出所

    Returns:
        検証済みのハイパースペース
    """
    fmt = data.get("format", HYPERSPACE_FORMAT)
    version = data.get("version", HYPERSPACE_VERSION)
    if fmt != HYPERSPACE_FORMAT or version != HYPERSPACE_VERSION:
        raise UnsupportedVersion(fmt, version)

    try:
        granularity = int(data["granularity"])

        blocks = []
        for b in data["blocks"]:
            block_type = BlockType.parse(b["type"])
            if block_type.search_id is None:
                raise ConfigError(f"{block_type.value} は探索対象ブロックではありません")
            if "id" in b and int(b["id"]) != block_type.search_id:
                raise ConfigError(f"{block_type.value} の探索IDは {block_type.search_id} です")
            ratios = tuple(float(e) for e in b.get("expand_ratios") or [1.0])
            blocks.append(BlockSpec(block_type, b["activation"], ratios))
        known_ids = {b.search_id for b in blocks}

        s = data["stem"]
        conv = s["conv"]
        stem_block = s["block"]
        stem_type = BlockType.parse(stem_block["type"])
        stem_spec = StemSpec(
            conv_widths=_ladder_from_dict(conv, granularity, "stem.conv"),
            conv_kernel=int(conv.get("kernel", 3)),
            conv_stride=int(conv.get("stride", 2)),
            conv_activation=conv.get("activation", "relu"),
            block_type=stem_type,
            block_activation=stem_block.get("activation", "relu"),
            block_depth_range=_range_pair(stem_block.get("depth_range", [1, 1]), "stem.block"),
            block_kernel_choices=tuple(int(k) for k in stem_block.get("kernel_choices", [3])),
            block_stride=int(stem_block.get("stride", 1)),
            block_widths=_ladder_from_dict(stem_block, granularity, "stem.block"),
            block_expand_ratios=tuple(float(e) for e in stem_block.get("expand_ratios", [1.0])),
        )

        stages = []
        for i, st in enumerate(data["stages"], start=1):
            where = f"stage{i}"
            stage_granularity = int(st.get("granularity", granularity))
            if stage_granularity != granularity:
                raise ConfigError(f"{where}: 粒度がハイパースペースと異なります")
            choices = tuple(int(c) for c in st.get("block_choice_ids", sorted(known_ids)))
            if not choices:
                raise ConfigError(f"{where}: ブロック候補が空です")
            unknown = [c for c in choices if c not in known_ids]
            if unknown:
                raise ConfigError(f"{where}: ブロック表にないID {unknown}")
            ladder = _ladder_from_dict(st, granularity, where)
            ck = int(st["ck"])
            if not 1 <= ck <= len(ladder):
                raise ConfigError(f"{where}: ck={ck} が梯子の長さ {len(ladder)} を超えています")
            stages.append(ElasticStageSpec(
                stage_index=i,
                block_choices=choices,
                depth_range=_range_pair(st["depth_range"], where),
                kernel_choices=tuple(int(k) for k in st.get("kernel_choices", [3, 5, 7])),
                stride=int(st["stride"]),
                width_ladder=ladder,
                ck=ck,
            ))

        h = data["head"]
        head = HeadSpec(int(h.get("feature_width", 1280)), int(h.get("num_classes", 1000)),
                        h.get("activation", "relu"))
        resolutions = tuple(int(r) for r in data.get("resolutions", [160, 176, 192, 208, 224]))
    except KeyError as e:
        raise MalformedFile(source, "必須フィールドがありません", column=str(e.args[0]))
    except (TypeError, ValueError) as e:
        raise MalformedFile(source, f"値が不正です: {e}")

    if not stages:
        raise ConfigError(f"{source}: ステージがありません")

    return Hyperspace(
        name=data.get("name", Path(source).stem),
        granularity=granularity,
        blocks=tuple(blocks),
        stem=stem_spec,
        stages=tuple(stages),
        head=head,
        resolutions=resolutions,
    )


def resolve_preset(name_or_path: Union[str, Path]) -> Path:
    """
    プリセット名またはパスを実ファイルのパスに解決

    Args:
        name_or_path: "cpu_vnni" のような名前、またはファイルパス

    Returns:
        JSON ファイルのパス
    """
    path = Path(name_or_path)
    if path.exists():
        return path
    candidate = PRESET_DIR / f"{name_or_path}.json"
    if candidate.exists():
        return candidate
    candidate = PRESET_DIR / str(name_or_path)
    if candidate.exists():
        return candidate
    raise MalformedFile(str(name_or_path), "プリセットまたはファイルが見つかりません")


def read_json(path: Union[str, Path]) -> dict:
    """JSON ファイルを読み込む"""
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise MalformedFile(str(path), f"JSON の解析に失敗しました: {e}")


def load_hyperspace(name_or_path: Union[str, Path]) -> Hyperspace:
    """
    ハイパースペースのプリセットを読み込み

    Args:
        name_or_path: バンドル済みプリセット名（cpu_vnni, pixel4）またはパス

    Returns:
        ハイパースペース
    """
    path = resolve_preset(name_or_path)
    hs = hyperspace_from_dict(read_json(path), source=str(path))
    logger.debug("ハイパースペースを読み込みました: %s", hs)
    return hs


def hyperspace_to_dict(hs: Hyperspace) -> dict:
    """ハイパースペースを JSON 用の辞書に変換（幅は明示リストで出力）"""
    stem = hs.stem
    return {
        "format": HYPERSPACE_FORMAT,
        "version": HYPERSPACE_VERSION,
        "name": hs.name,
        "granularity": hs.granularity,
        "resolutions": list(hs.resolutions),
        "blocks": [
            {"type": b.block_type.value, "id": b.search_id, "activation": b.activation,
             "expand_ratios": list(b.expand_ratios)}
            for b in hs.blocks
        ],
        "stem": {
            "conv": {"widths": list(stem.conv_widths), "kernel": stem.conv_kernel,
                     "stride": stem.conv_stride, "activation": stem.conv_activation},
            "block": {"type": stem.block_type.value, "activation": stem.block_activation,
                      "depth_range": list(stem.block_depth_range),
                      "kernel_choices": list(stem.block_kernel_choices),
                      "stride": stem.block_stride, "widths": list(stem.block_widths),
                      "expand_ratios": list(stem.block_expand_ratios)},
        },
        "stages": [
            {"block_choice_ids": list(st.block_choices), "depth_range": list(st.depth_range),
             "kernel_choices": list(st.kernel_choices), "stride": st.stride,
             "widths": list(st.width_ladder), "granularity": hs.granularity, "ck": st.ck}
            for st in hs.stages
        ],
        "head": {"feature_width": hs.head.feature_width, "num_classes": hs.head.num_classes,
                 "activation": hs.head.activation},
    }
