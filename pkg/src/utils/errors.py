"""
例外定義

QuantScape の全モジュールが送出する例外クラス群。
各クラスは CLI が返す終了コードを持つ。
"""

from typing import Optional


class QuantScapeError(Exception):
    """QuantScape の基底例外"""
    exit_code = 1


# --- 入力エラー (終了コード 2) ---

class InputError(QuantScapeError):
    """入力・使用方法のエラー"""
    exit_code = 2


class MalformedEncoding(InputError):
    """探索空間エンコーディングの形式が不正"""

    def __init__(self, encoding: str, reason: str):
        self.encoding = encoding
        super().__init__(f"不正なエンコーディング '{encoding}': {reason}")


class OutOfRangeDigit(InputError):
    """エンコーディングの桁が範囲外（stage は 1 始まり）"""

    def __init__(self, stage: int, field: str, value: int):
        self.stage = stage
        self.field = field
        self.value = value
        super().__init__(f"stage {stage} の {field} が範囲外です: {value}")


class InvalidArchitecture(InputError):
    """アーキテクチャが探索空間の範囲外"""

    def __init__(self, field: str, value=None):
        self.field = field
        self.value = value
        super().__init__(f"アーキテクチャのフィールド {field} が不正です: {value}")


class InvalidKernel(InputError):
    """カーネル設定が不正"""


class MalformedFile(InputError):
    """入力ファイルの形式が不正"""

    def __init__(self, path: str, reason: str, column: Optional[str] = None):
        self.path = path
        self.column = column
        where = f" (列: {column})" if column else ""
        super().__init__(f"{path}: {reason}{where}")


class UnsupportedVersion(InputError):
    """未知のファイルフォーマットまたはバージョン"""

    def __init__(self, kind: str, version):
        self.kind = kind
        self.version = version
        super().__init__(f"未対応の {kind} バージョン: {version}")


class ConfigError(InputError):
    """設定値が不正"""


# --- 制約エラー (終了コード 3) ---

class InfeasibleConstraint(QuantScapeError):
    """レイテンシ制約を満たすアーキテクチャが見つからない"""
    exit_code = 3


# --- オラクル被覆エラー (終了コード 4) ---

class CoverageError(QuantScapeError):
    """予測器・LUT がクエリを被覆していない"""
    exit_code = 4


class MissingEntry(CoverageError):
    """LUT にキーが存在しない"""

    def __init__(self, key):
        self.key = key
        super().__init__(f"LUT にエントリがありません: {key}")


class InsufficientSamples(CoverageError):
    """カーネル種別の学習サンプルが不足"""

    def __init__(self, kind: str, reason: str = "サンプルがありません"):
        self.kind = kind
        super().__init__(f"カーネル {kind}: {reason}")
