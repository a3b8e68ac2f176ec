"""
精度ルックアップテーブル（NSR 損失）

ステージ・ブロック構成ごとの量子化 NSR 損失を保持し、アーキテクチャの損失を
各層のエントリの和として求める。精度の代理指標は 1 / (1 + 損失)
"""

import csv
import io
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple, Union

from core.archspace import Architecture
from core.hyperspace import Hyperspace
from core.precision import Precision
from utils.errors import ConfigError, MalformedFile, MissingEntry, UnsupportedVersion
from utils.rng import make_rng

logger = logging.getLogger(__name__)

LUT_FORMAT = "accuracy-lut"
LUT_VERSION = 1
LUT_COLUMNS = ("stage", "block_id", "kernel", "width", "expand", "precision", "nsr_loss")
# 省略可能な列。ない場合や空欄の行は深さに依存しない層エントリ
DEPTH_COLUMN = "depth"


@dataclass(frozen=True)
class LutKey:
    """LUT のキー（stage は 1 始まり、depth が None なら全ての深さに共通）"""
    stage: int
    block_id: int
    depth: Optional[int]
    kernel: int
    width: int
    expand: float
    precision: Precision

    def __str__(self):
        depth = "*" if self.depth is None else self.depth
        return (f"stage={self.stage} block={self.block_id} d={depth} k={self.kernel} "
                f"c={self.width} e={self.expand:g} {self.precision.value}")

    def layer_key(self) -> "LutKey":
        """深さに依存しないキー"""
        return replace(self, depth=None)


@dataclass
class AccuracyLut:
    """
    NSR 損失の表

    entries の各値は「その構成の層1つ分」の損失で、ステージの損失は層ごとの和。
    深さ付きのエントリがなければ、深さに依存しないエントリを使う
    """
    hyperspace: str
    entries: Dict[LutKey, float]
    stem_loss: Dict[Precision, float] = field(default_factory=dict)
    head_loss: Dict[Precision, float] = field(default_factory=dict)

    def covers(self, key: LutKey) -> bool:
        return key in self.entries or key.layer_key() in self.entries

    def entry(self, key: LutKey) -> float:
        value = self.entries.get(key)
        if value is None and key.depth is not None:
            value = self.entries.get(key.layer_key())
        if value is None:
            raise MissingEntry(key)
        return value

    def __len__(self):
        return len(self.entries)

    def __repr__(self):
        return f"AccuracyLut({self.hyperspace}, {len(self.entries)} entries)"


def _precision_map(d: dict) -> Dict[Precision, float]:
    return {Precision.parse(p): float(v) for p, v in d.items()}


@dataclass
class LutProfile:
    """
    合成 LUT の品質プロファイル

    層1つの損失 = base[stage] · quality[block] · (wmin/w)^a · (kmin/k)^b · (emin/e)^c · d^-δ / d
    INT8 は (1 + gap[block]) 倍
    """
    stage_base: Tuple[float, ...]
    block_quality: Dict[str, float]
    int8_gap: Dict[str, float]
    width_exponent: float = 1.0
    kernel_exponent: float = 0.3
    expand_exponent: float = 0.2
    depth_exponent: float = 0.3
    noise: float = 0.05
    stem_loss: Dict[Precision, float] = field(default_factory=dict)
    head_loss: Dict[Precision, float] = field(default_factory=dict)

    def __post_init__(self):
        if any(b < 0 for b in self.stage_base):
            raise ConfigError("stage_base は非負である必要があります")
        if not 0.0 <= self.noise < 1.0:
            raise ConfigError(f"noise は 0 以上 1 未満である必要があります: {self.noise}")
        for name in ("width_exponent", "kernel_exponent", "expand_exponent", "depth_exponent"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} は非負である必要があります")

    @classmethod
    def from_dict(cls, d: dict) -> "LutProfile":
        try:
            return cls(
                stage_base=tuple(float(v) for v in d["stage_base"]),
                block_quality={k: float(v) for k, v in d["block_quality"].items()},
                int8_gap={k: float(v) for k, v in d.get("int8_gap", {}).items()},
                width_exponent=float(d.get("width_exponent", 1.0)),
                kernel_exponent=float(d.get("kernel_exponent", 0.3)),
                expand_exponent=float(d.get("expand_exponent", 0.2)),
                depth_exponent=float(d.get("depth_exponent", 0.3)),
                noise=float(d.get("noise", 0.05)),
                stem_loss=_precision_map(d.get("stem_loss", {})),
                head_loss=_precision_map(d.get("head_loss", {})),
            )
        except KeyError as e:
            raise ConfigError(f"LUT プロファイルに {e.args[0]} がありません")


def lut_keys(hs: Hyperspace) -> Iterator[LutKey]:
    """ハイパースペースが必要とするすべてのキー（決まった順序）"""
    for spec in hs.stages:
        for block_id in spec.block_choices:
            block = hs.block(block_id)
            for depth in spec.depths:
                for kernel in spec.kernel_choices:
                    for width in spec.width_ladder:
                        for expand in block.expand_ratios:
                            for precision in Precision:
                                yield LutKey(spec.stage_index, block_id, depth, kernel, width,
                                             expand, precision)


def synth_lut(hs: Hyperspace, seed: int, profile: LutProfile) -> AccuracyLut:
    """
    合成 LUT を生成

    容量（幅・深さ・カーネル・拡張率）に対して単調減少し、収穫逓減する損失モデルに
    シード付きの乗法ノイズを加える。ノイズは FP32 / INT8 で共通

    Args:
        hs: ハイパースペース
        seed: シード
        profile: 品質プロファイル

    Returns:
        すべてのキーを被覆する LUT
    """
    if len(profile.stage_base) < hs.num_stages:
        raise ConfigError(f"stage_base が {hs.num_stages} ステージ分ありません")
    rng = make_rng(seed)
    entries: Dict[LutKey, float] = {}
    for spec in hs.stages:
        base = profile.stage_base[spec.stage_index - 1]
        w_min = spec.width_ladder[0]
        k_min = min(spec.kernel_choices)
        for block_id in spec.block_choices:
            block = hs.block(block_id)
            name = block.block_type.value
            quality = profile.block_quality.get(name, 1.0)
            gap = profile.int8_gap.get(name, 0.0)
            e_min = min(block.expand_ratios)
            for depth in spec.depths:
                for kernel in spec.kernel_choices:
                    for width in spec.width_ladder:
                        for expand in block.expand_ratios:
                            stage_total = (base * quality
                                           * (w_min / width) ** profile.width_exponent
                                           * (k_min / kernel) ** profile.kernel_exponent
                                           * (e_min / expand) ** profile.expand_exponent
                                           * depth ** -profile.depth_exponent)
                            layer_loss = stage_total / depth
                            layer_loss *= 1.0 + profile.noise * rng.uniform(-1.0, 1.0)
                            entries[LutKey(spec.stage_index, block_id, depth, kernel, width,
                                           expand, Precision.FP32)] = layer_loss
                            entries[LutKey(spec.stage_index, block_id, depth, kernel, width,
                                           expand, Precision.INT8)] = layer_loss * (1.0 + gap)
    lut = AccuracyLut(hs.name, entries, dict(profile.stem_loss), dict(profile.head_loss))
    logger.info("合成 LUT を生成しました: %s", lut)
    return lut


def stage_loss(lut: AccuracyLut, stage_index: int, arch: Architecture,
               precision: Precision = Precision.INT8) -> float:
    """1ステージ分の損失（stage_index は 1 始まり）"""
    stage = arch.stages[stage_index - 1]
    block_id = stage.block_type.search_id
    return sum(
        lut.entry(LutKey(stage_index, block_id, stage.depth, layer.kernel, layer.width,
                         layer.expand, precision))
        for layer in stage.layers
    )


def lut_lookup_loss(lut: AccuracyLut, arch: Architecture,
                    precision: Precision = Precision.INT8) -> float:
    """
    アーキテクチャの総損失

    ステージごとの層エントリの和に、ステム・ヘッドの固定損失を加える

    Raises:
        MissingEntry: LUT にキーがない（LUT とハイパースペースの不一致）
    """
    total = lut.stem_loss.get(precision, 0.0) + lut.head_loss.get(precision, 0.0)
    for i in range(1, len(arch.stages) + 1):
        total += stage_loss(lut, i, arch, precision)
    return total


def accuracy_proxy(lut: AccuracyLut, arch: Architecture,
                   precision: Precision = Precision.INT8) -> float:
    """精度の代理指標 1 / (1 + 損失)。損失 0 で 1.0"""
    return 1.0 / (1.0 + lut_lookup_loss(lut, arch, precision))


def lut_coverage_errors(lut: AccuracyLut, hs: Hyperspace, limit: int = 20) -> List[LutKey]:
    """ハイパースペースに対して欠けているキー（最大 limit 個）"""
    missing = []
    for key in lut_keys(hs):
        if not lut.covers(key):
            missing.append(key)
            if len(missing) >= limit:
                break
    return missing


# ---------------------------------------------------------------------------
# 入出力
# ---------------------------------------------------------------------------

def _header(lut: AccuracyLut) -> dict:
    return {
        "format": LUT_FORMAT,
        "version": LUT_VERSION,
        "hyperspace": lut.hyperspace,
        "stem_loss": {p.value: v for p, v in sorted(lut.stem_loss.items(), key=lambda kv: kv[0].value)},
        "head_loss": {p.value: v for p, v in sorted(lut.head_loss.items(), key=lambda kv: kv[0].value)},
    }


def write_lut(path: Union[str, Path], lut: AccuracyLut):
    """
    LUT を CSV（先頭行は '# ' に続く JSON ヘッダ）に書き出す

    深さ付きのエントリがあるときだけ depth 列を加える
    """
    with_depth = any(key.depth is not None for key in lut.entries)
    columns = list(LUT_COLUMNS)
    if with_depth:
        columns.insert(2, DEPTH_COLUMN)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        f.write("# " + json.dumps(_header(lut), sort_keys=True) + "\n")
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(columns)
        for key, loss in lut.entries.items():
            row = [key.stage, key.block_id, key.kernel, key.width, f"{key.expand:g}",
                   key.precision.value, repr(float(loss))]
            if with_depth:
                row.insert(2, "" if key.depth is None else key.depth)
            writer.writerow(row)
    logger.info("LUT を保存しました: %s (%d 行)", path, len(lut))


def read_lut(path: Union[str, Path]) -> AccuracyLut:
    """
    CSV から LUT を読み込む

    depth 列は省略可能。列がない、または空欄の行は全ての深さに共通の層エントリになる

    Raises:
        MalformedFile: ヘッダや列が不正、損失が負
        UnsupportedVersion: 未知のフォーマット・バージョン
    """
    with open(path, 'r', encoding='utf-8', newline='') as f:
        first = f.readline()
        if not first.startswith("#"):
            raise MalformedFile(str(path), "先頭行に JSON ヘッダがありません")
        try:
            header = json.loads(first[1:])
        except json.JSONDecodeError as e:
            raise MalformedFile(str(path), f"ヘッダの解析に失敗しました: {e}")
        if header.get("format") != LUT_FORMAT or header.get("version") != LUT_VERSION:
            raise UnsupportedVersion(str(header.get("format")), header.get("version"))

        reader = csv.DictReader(io.StringIO(f.read()))
        columns = reader.fieldnames or []
        for column in LUT_COLUMNS:
            if column not in columns:
                raise MalformedFile(str(path), "必須の列がありません", column=column)
        with_depth = DEPTH_COLUMN in columns

        entries: Dict[LutKey, float] = {}
        for line, row in enumerate(reader, start=3):
            try:
                depth_text = (row[DEPTH_COLUMN] or "").strip() if with_depth else ""
                key = LutKey(int(row["stage"]), int(row["block_id"]),
                             int(depth_text) if depth_text else None,
                             int(row["kernel"]), int(row["width"]), float(row["expand"]),
                             Precision.parse(row["precision"]))
                loss = float(row["nsr_loss"])
            except (TypeError, ValueError) as e:
                raise MalformedFile(str(path), f"{line} 行目の値が不正です: {e}")
            if loss < 0:
                raise MalformedFile(str(path), f"{line} 行目: 損失が負です", column="nsr_loss")
            entries[key] = loss

    lut = AccuracyLut(header.get("hyperspace", ""), entries,
                      _precision_map(header.get("stem_loss", {})),
                      _precision_map(header.get("head_loss", {})))
    logger.info("LUT を読み込みました: %s", lut)
    return lut
