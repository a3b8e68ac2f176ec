"""
結果のプロット

GUI バックエンドを使わずに Figure と Agg キャンバスで PNG を描く
"""

import logging
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

logger = logging.getLogger(__name__)


class PlotCanvas:
    """PNG 出力用のキャンバス"""

    def __init__(self, title: str, xlabel: str, ylabel: str, width=8, height=5):
        """
        Args:
            title: 図のタイトル
            xlabel: x 軸ラベル
            ylabel: y 軸ラベル
            width: 図のサイズ（インチ）
            height: 図のサイズ（インチ）
        """
        self.figure = Figure(figsize=(width, height), dpi=100)
        self.canvas = FigureCanvasAgg(self.figure)
        self.ax = self.figure.add_subplot(111)
        self.ax.grid(True, alpha=0.3)
        self.ax.set_xlabel(xlabel)
        self.ax.set_ylabel(ylabel)
        self.ax.set_title(title)

    def save(self, path: Union[str, Path]):
        """PNG として保存"""
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        if self.ax.get_legend_handles_labels()[0]:
            self.ax.legend(loc='best')
        self.figure.tight_layout()
        self.canvas.print_png(str(path))
        logger.info("プロットを保存しました: %s", path)


def plot_search_curves(curves: Dict[str, Sequence[Tuple[int, float]]], path: Union[str, Path]):
    """
    探索曲線（評価回数ごとの上位探索空間の平均スコア）を描く

    Args:
        curves: 系列名 → (評価回数, スコア) のリスト
        path: 保存先
    """
    plot = PlotCanvas("Search space quality", "evaluated spaces", "mean Q-T score (top-10)")
    for name, points in curves.items():
        if not points:
            continue
        xs = [p[0] for p in points]
        ys = [p[1] for p in points]
        plot.ax.plot(xs, ys, marker='o', markersize=3, label=name)
    plot.save(path)


def plot_best_so_far(best: Sequence[float], path: Union[str, Path]):
    """世代ごとの最良スコアを描く"""
    plot = PlotCanvas("Evolution progress", "iteration", "best Q-T score")
    plot.ax.plot(range(len(best)), best, color='tab:blue', label='best so far')
    plot.save(path)


def plot_pareto_front(front: Sequence[Tuple[float, float, str]], path: Union[str, Path],
                      constraint: Optional[float] = None):
    """
    レイテンシと代理精度の非劣解を描く

    Args:
        front: (レイテンシ, 代理精度, キー) のリスト
        path: 保存先
        constraint: レイテンシ制約（縦線で表示）
    """
    plot = PlotCanvas("Latency / accuracy-proxy front", "INT8 latency (ms)", "accuracy proxy")
    if front:
        plot.ax.plot([p[0] for p in front], [p[1] for p in front], marker='o', color='tab:red',
                     drawstyle='steps-post', label='pareto front')
    if constraint is not None:
        plot.ax.axvline(constraint, color='gray', linestyle='--', label=f'T = {constraint:g} ms')
    plot.save(path)
