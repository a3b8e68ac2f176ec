"""
ログ設定
"""

import logging
import sys

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def setup_logging(verbosity: int = 0) -> None:
    """
    ルートロガーを設定

    Args:
        verbosity: 1以上でDEBUG、0でINFO、負でWARNING
    """
    if verbosity > 0:
        level = logging.DEBUG
    elif verbosity < 0:
        level = logging.WARNING
    else:
        level = logging.INFO

    root = logging.getLogger()
    # 再呼び出し時に自前のハンドラが重複しないようにする
    for handler in list(root.handlers):
        if getattr(handler, "_quantscape", False):
            root.removeHandler(handler)

    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    handler._quantscape = True
    root.addHandler(handler)
    root.setLevel(level)
