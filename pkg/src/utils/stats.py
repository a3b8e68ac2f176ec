"""
統計ユーティリティ
"""

from typing import Sequence

import numpy as np


def kendall_tau(a: Sequence[float], b: Sequence[float]) -> float:
    """
    Kendall の順位相関係数 (tau-b)

    Args:
        a: 1つ目の値の列
        b: 2つ目の値の列（a と同じ長さ）

    Returns:
        -1.0 から 1.0 の相関係数。比較できる組がない場合は 0.0
    """
    x = np.asarray(a, dtype=float)
    y = np.asarray(b, dtype=float)
    if x.shape != y.shape:
        raise ValueError("列の長さが一致しません")
    if x.size < 2:
        return 0.0

    # 全ペアの符号を一括で計算
    dx = np.sign(x[:, None] - x[None, :])
    dy = np.sign(y[:, None] - y[None, :])
    upper = np.triu_indices(x.size, k=1)
    dx = dx[upper]
    dy = dy[upper]

    concordant_minus_discordant = float(np.sum(dx * dy))
    n_x = float(np.count_nonzero(dx))
    n_y = float(np.count_nonzero(dy))
    if n_x == 0 or n_y == 0:
        return 0.0
    return concordant_minus_discordant / np.sqrt(n_x * n_y)
