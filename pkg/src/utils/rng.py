"""
乱数ストリーム

すべての乱数は numpy の Generator から取り出す
"""

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    """シードから Generator を生成"""
    return np.random.default_rng(seed)
