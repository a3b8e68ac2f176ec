"""
結果ファイルの書き出し

JSON はキーをソートして書き出し、同じ入力から常に同じバイト列になるようにする
"""

import json
import logging
from pathlib import Path
from typing import Union

from core.archspace import Architecture, describe_architecture
from search.evolution import EvolutionLog

logger = logging.getLogger(__name__)


def dumps(obj) -> str:
    """決定的な JSON 文字列（末尾改行付き）"""
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_json(path: Union[str, Path], obj):
    """
    JSON ファイルを書き出す

    Args:
        path: 保存先のファイルパス
        obj: JSON に変換できるオブジェクト
    """
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(dumps(obj))
    logger.debug("保存しました: %s", path)


def write_text(path: Union[str, Path], text: str):
    """テキストファイルを書き出す"""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(text)


def write_architecture(path: Union[str, Path], arch: Architecture):
    """アーキテクチャを表形式の JSON で保存"""
    write_json(path, describe_architecture(arch))


def write_evolution_log(path: Union[str, Path], log: EvolutionLog):
    """進化探索のログを JSON-lines で保存（1世代1行）"""
    write_text(path, log.to_jsonl())


def read_jsonl(path: Union[str, Path]) -> list:
    """JSON-lines ファイルを読み込む"""
    with open(path, 'r', encoding='utf-8') as f:
        return [json.loads(line) for line in f if line.strip()]
