"""
推論精度
"""

from enum import Enum

from utils.errors import InputError


class Precision(Enum):
    """推論精度"""
    FP32 = "fp32"
    INT8 = "int8"

    @classmethod
    def parse(cls, value: str) -> "Precision":
        """文字列から精度を取得（大文字小文字を区別しない）"""
        try:
            return cls(value.strip().lower())
        except ValueError:
            raise InputError(f"未知の精度です: {value}")
