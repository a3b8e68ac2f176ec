"""
実行マニフェスト

各コマンドの出力と一緒に、引数・設定・入出力ファイルのハッシュを保存する。
作成時刻はマニフェストだけに入り、出力ファイルには入らない
"""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

from utils.errors import MalformedFile, UnsupportedVersion

logger = logging.getLogger(__name__)

MANIFEST_FORMAT = "run-manifest"
MANIFEST_VERSION = 1
ARTIFACT_VERSION = "0.1.0"


def file_digest(path: Union[str, Path]) -> str:
    """ファイルの SHA-256"""
    h = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def digests(paths: Iterable[Union[str, Path]]) -> Dict[str, str]:
    """パス → SHA-256 の辞書（存在しないパスは除く）"""
    return {str(p): file_digest(p) for p in paths if p and Path(p).is_file()}


@dataclass
class RunManifest:
    """1回の実行の記録"""
    command: str
    argv: List[str]
    config: dict
    inputs: Dict[str, str]
    outputs: Dict[str, str]
    seed: Optional[int]
    version: str
    created: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec='seconds'))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["format"] = MANIFEST_FORMAT
        d["manifest_version"] = MANIFEST_VERSION
        return d

    @classmethod
    def from_dict(cls, d: dict, source: str = "<dict>") -> "RunManifest":
        if d.get("format") != MANIFEST_FORMAT or d.get("manifest_version") != MANIFEST_VERSION:
            raise UnsupportedVersion(str(d.get("format")), d.get("manifest_version"))
        try:
            return cls(d["command"], list(d["argv"]), d["config"], d["inputs"], d["outputs"],
                       d.get("seed"), d["version"], d.get("created", ""))
        except KeyError as e:
            raise MalformedFile(source, "必須フィールドがありません", column=str(e.args[0]))

    def save(self, path: Union[str, Path]):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True, ensure_ascii=False)
            f.write("\n")
        logger.debug("マニフェストを保存しました: %s", path)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunManifest":
        try:
            with open(path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise MalformedFile(str(path), f"JSON の解析に失敗しました: {e}")
        return cls.from_dict(data, source=str(path))

    def changed_outputs(self) -> List[str]:
        """記録されたハッシュと現在のファイルが一致しない出力"""
        current = digests(self.outputs)
        return sorted(p for p, h in self.outputs.items() if current.get(p) != h)


def manifest_path(output: Union[str, Path], is_dir: bool = False) -> Path:
    """出力に対応するマニフェストのパス"""
    output = Path(output)
    if is_dir:
        return output / "manifest.json"
    return output.with_name(output.name + ".manifest.json")
