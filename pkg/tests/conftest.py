"""
テスト間でルートロガーの状態を分離する
"""

import logging

import pytest


@pytest.fixture(scope="session")
def _initial_root_logger():
    """セッション開始時のルートロガーのレベルとハンドラ"""
    root = logging.getLogger()
    return root.level, list(root.handlers)


@pytest.fixture(autouse=True)
def _restore_root_logger(_initial_root_logger):
    """main() の setup_logging が変更したルートロガーのレベルとハンドラを元に戻す"""
    level, handlers = _initial_root_logger
    root = logging.getLogger()
    root.setLevel(level)
    for handler in list(root.handlers):
        if getattr(handler, "_quantscape", False) and handler not in handlers:
            root.removeHandler(handler)
    yield
