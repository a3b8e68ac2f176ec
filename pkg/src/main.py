"""
QuantScape メインプログラム

量子化を考慮したハードウェア向け NAS エンジンのコマンドラインインターフェース。
探索空間の進化探索、Q-T スコア、レイテンシ予測、モデル探索をサブコマンドとして提供する
"""

import argparse
import sys
from typing import List, Optional

from cli import commands
from utils.errors import QuantScapeError
from utils.log import setup_logging


def _add_oracle_args(p: argparse.ArgumentParser):
    p.add_argument("--hyperspace", default="cpu_vnni", help="ハイパースペース（プリセット名またはパス）")
    p.add_argument("--predictor", required=True, help="レイテンシ予測器 JSON")
    p.add_argument("--lut", required=True, help="精度 LUT CSV")


def _add_qt_args(p: argparse.ArgumentParser):
    p.add_argument("--constraints", default="8,10,15,20,25", help="INT8 レイテンシ制約 (ms, カンマ区切り)")
    p.add_argument("--samples", type=int, default=5000, help="探索空間ごとのサンプル数")
    p.add_argument("--top-k", type=int, default=20, help="上位サブネット数")
    p.add_argument("--weights", default=None, help="制約ごとの重み（カンマ区切り）")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)


def _add_evolution_args(p: argparse.ArgumentParser):
    p.add_argument("--n", type=int, default=5000, help="評価する探索空間の総数")
    p.add_argument("--p", type=int, default=500, help="集団サイズ")
    p.add_argument("--s", type=int, default=125, help="親選択のサンプル数")
    p.add_argument("--retry-cap", type=int, default=20, help="実行可能性チェックのやり直し上限")


def build_parser() -> argparse.ArgumentParser:
    """引数パーサを構築"""
    parser = argparse.ArgumentParser(prog="quantscape", description="量子化を考慮した探索空間の進化探索")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="詳細なログを出力")
    parser.add_argument("-q", "--quiet", action="store_true", help="警告以上のみ出力")
    sub = parser.add_subparsers(dest="command", required=True)

    # レイテンシ予測器の学習
    p = sub.add_parser("train-predictor", help="サンプル CSV からレイテンシ予測器を学習")
    p.add_argument("--samples", required=True, help="レイテンシサンプル CSV")
    p.add_argument("--out", required=True, help="予測器 JSON の保存先")
    p.add_argument("--holdout", default=None, help="評価用サンプル CSV（±5%%/±10%%/RMSE を表示）")
    p.add_argument("--device", default="", help="デバイス名（メタデータ）")
    p.add_argument("--granularity", type=int, default=1, help="チャネル粒度（メタデータ）")
    p.add_argument("--int8-overhead", type=float, default=0.0, help="INT8 モデル単位の固定オーバーヘッド (ms)")
    p.set_defaults(func=commands.cmd_train_predictor)

    # 合成データ
    p = sub.add_parser("synth", help="合成デバイスからサンプルと LUT を生成")
    p.add_argument("--device", default="synth_cpu", help="合成デバイス（プリセット名またはパス）")
    p.add_argument("--hyperspace", default=None, help="LUT のハイパースペース（省略時はデバイスの既定）")
    p.add_argument("--out-samples", required=True)
    p.add_argument("--out-lut", default=None)
    p.add_argument("--out-holdout", default=None)
    p.add_argument("--holdout-count", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=commands.cmd_synth)

    # 探索空間の進化探索
    p = sub.add_parser("evolve-space", help="探索空間の進化探索")
    _add_oracle_args(p)
    _add_qt_args(p)
    _add_evolution_args(p)
    p.add_argument("--mode", choices=("both", "block", "width"), default="both", help="突然変異の対象")
    p.add_argument("--base-space", default=None, help="探索しない次元を固定する探索空間")
    p.add_argument("--out", required=True, help="出力ディレクトリ")
    p.set_defaults(func=commands.cmd_evolve_space)

    # モデル探索
    p = sub.add_parser("search-models", help="探索空間内のモデル探索")
    _add_oracle_args(p)
    p.add_argument("--space", required=True, help="探索空間のエンコーディング")
    p.add_argument("--latency", type=float, required=True, help="INT8 レイテンシ制約 (ms)")
    p.add_argument("--budget", type=int, default=5000)
    p.add_argument("--population", type=int, default=100)
    p.add_argument("--tournament", type=int, default=10)
    p.add_argument("--mutation-rate", type=float, default=0.1)
    p.add_argument("--crossover", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--out-arch", default=None, help="最良アーキテクチャの JSON（predict に渡せる形式）")
    p.set_defaults(func=commands.cmd_search_models)

    # レイテンシ予測
    p = sub.add_parser("predict", help="アーキテクチャのレイテンシを予測")
    p.add_argument("--arch", required=True, help="アーキテクチャ JSON（プリセット名またはパス）")
    p.add_argument("--predictor", required=True)
    p.add_argument("--precision", choices=("int8", "fp32", "both"), default="int8")
    p.add_argument("--breakdown", action="store_true", help="部位ごとの内訳を出力")
    p.add_argument("--out", default=None)
    p.set_defaults(func=commands.cmd_predict)

    # Q-T スコア
    p = sub.add_parser("score-space", help="探索空間の Q-T スコアを計算")
    _add_oracle_args(p)
    _add_qt_args(p)
    p.add_argument("--space", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=commands.cmd_score_space)

    # ランダム探索との比較
    p = sub.add_parser("compare-random", help="進化探索とランダム探索を同じ評価回数で比較")
    _add_oracle_args(p)
    _add_qt_args(p)
    _add_evolution_args(p)
    p.add_argument("--every", type=int, default=500, help="曲線の間隔（評価回数）")
    p.add_argument("--no-plot", action="store_true")
    p.add_argument("--out", required=True, help="出力ディレクトリ")
    p.set_defaults(func=commands.cmd_compare_random)

    # プロット
    p = sub.add_parser("plot", help="ログ・曲線・探索結果を PNG に描く")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--log", help="evolution.jsonl")
    group.add_argument("--curves", help="curves.json")
    group.add_argument("--result", help="search-models の結果 JSON")
    p.add_argument("--out", required=True, help="PNG の保存先")
    p.set_defaults(func=commands.cmd_plot)

    # 再実行
    p = sub.add_parser("rerun", help="マニフェストから再実行して出力を比較")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=commands.cmd_rerun)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    エントリポイント

    Returns:
        終了コード（0 成功、2 入力エラー、3 制約を満たせない、4 オラクルの被覆エラー）
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    setup_logging(-1 if args.quiet else args.verbose)

    try:
        return args.func(args)
    except QuantScapeError as e:
        print(f"エラー: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"エラー: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
