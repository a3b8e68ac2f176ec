"""
CLI コマンド

各コマンドは argparse の Namespace を受け取り、出力ファイルとマニフェストを書き出して
終了コードを返す
"""

import argparse
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional

from accmodel.lut import LutProfile, lut_coverage_errors, read_lut, synth_lut, write_lut
from cli.manifest import ARTIFACT_VERSION, RunManifest, digests, manifest_path
from core.archspace import decode_space, load_architecture, space_cardinality
from core.hyperspace import load_hyperspace, read_json, resolve_preset
from core.precision import Precision
from costmodel.device import holdout_samples, load_device, speedup_report, synth_samples
from costmodel.kernels import decompose, flops
from costmodel.predictor import (evaluate_samples, latency_breakdown, load_predictor, predict_latency,
                                 read_samples, save_predictor, train_predictor, write_samples)
from report.plots import plot_best_so_far, plot_pareto_front, plot_search_curves
from report.writer import read_jsonl, write_architecture, write_evolution_log, write_json, write_text
from search.evolution import EvolutionConfig, evolve, random_search, search_curve
from search.modelsearch import ModelSearchConfig, search_models
from search.qtscore import QtConfig, evaluate_qt, parse_constraints
from utils.errors import ConfigError, MissingEntry

logger = logging.getLogger(__name__)


def _config(args: argparse.Namespace) -> dict:
    # マニフェスト用に、関数や内部属性を除いた引数
    return {k: v for k, v in sorted(vars(args).items())
            if not k.startswith("_") and k not in ("func", "argv")}


def _finish(args: argparse.Namespace, command: str, inputs: Iterable, outputs: Iterable,
            manifest: Path, seed: Optional[int] = None):
    outputs = list(outputs)
    RunManifest(
        command=command,
        argv=list(getattr(args, "argv", [])),
        config=_config(args),
        inputs=digests(inputs),
        outputs=digests(outputs),
        seed=seed,
        version=ARTIFACT_VERSION,
    ).save(manifest)
    logger.info("完了: %s", ", ".join(str(p) for p in outputs))


def _weights(text: Optional[str]):
    if not text:
        return None
    return parse_constraints(text)


def _qt_config(args: argparse.Namespace) -> QtConfig:
    return QtConfig(
        constraints=parse_constraints(args.constraints),
        num_samples=args.samples,
        top_k=args.top_k,
        seed=args.seed,
        weights=_weights(args.weights),
        threads=args.threads,
    )


def _oracles(args: argparse.Namespace):
    hs = load_hyperspace(args.hyperspace)
    predictor = load_predictor(args.predictor)
    lut = read_lut(args.lut)
    missing = lut_coverage_errors(lut, hs, limit=1)
    if missing:
        raise MissingEntry(missing[0])
    return hs, predictor, lut


def _oracle_inputs(args: argparse.Namespace) -> List[str]:
    return [str(resolve_preset(args.hyperspace)), args.predictor, args.lut]


# ---------------------------------------------------------------------------
# コマンド
# ---------------------------------------------------------------------------

def cmd_train_predictor(args: argparse.Namespace) -> int:
    """サンプル CSV からレイテンシ予測器を学習"""
    samples = read_samples(args.samples)
    overhead = {Precision.INT8: args.int8_overhead} if args.int8_overhead else None
    pred = train_predictor(samples, device=args.device, granularity=args.granularity,
                           model_overhead_ms=overhead)
    save_predictor(pred, args.out)
    inputs = [args.samples]
    if args.holdout:
        report = evaluate_samples(pred, read_samples(args.holdout))
        print(f"ホールドアウト: {report}")
        inputs.append(args.holdout)
    _finish(args, "train-predictor", inputs, [args.out], manifest_path(args.out))
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    """合成デバイスからサンプルと LUT を生成"""
    dev = load_device(args.device)
    samples = synth_samples(dev, seed=args.seed)
    write_samples(args.out_samples, samples)
    print(f"サンプル: {len(samples)} 件 -> {args.out_samples}")
    outputs = [args.out_samples]

    if args.out_lut:
        hs = load_hyperspace(args.hyperspace or dev.hyperspace)
        lut = synth_lut(hs, args.seed, LutProfile.from_dict(dev.lut_profile))
        write_lut(args.out_lut, lut)
        print(f"LUT: {len(lut)} エントリ -> {args.out_lut}")
        outputs.append(args.out_lut)

    if args.out_holdout:
        holdout = holdout_samples(dev, args.holdout_count, seed=args.seed + 1)
        write_samples(args.out_holdout, holdout)
        print(f"ホールドアウト: {len(holdout)} 件 -> {args.out_holdout}")
        outputs.append(args.out_holdout)

    _finish(args, "synth", [resolve_preset(args.device)], outputs,
            manifest_path(args.out_samples), seed=args.seed)
    return 0


def cmd_evolve_space(args: argparse.Namespace) -> int:
    """探索空間の進化探索"""
    hs, predictor, lut = _oracles(args)
    cfg = EvolutionConfig(
        qt=_qt_config(args),
        total_spaces=args.n,
        population=args.p,
        sample_size=args.s,
        seed=args.seed,
        feasibility_retry_cap=args.retry_cap,
        mode=args.mode,
        base_space=args.base_space,
    )
    best, log = evolve(hs, cfg, lut, predictor)
    report = evaluate_qt(best, lut, predictor, cfg.qt)

    out = Path(args.out)
    outputs = [out / "best_space.txt", out / "qt_report.json", out / "evolution.jsonl",
               out / "history.json"]
    write_text(outputs[0], best.encoding + "\n")
    write_json(outputs[1], report.to_dict())
    write_evolution_log(outputs[2], log)
    write_json(outputs[3], [[enc, score] for enc, score in log.history])
    print(f"最良の探索空間: {best.encoding} (Q-T {report.total:.6f})")
    _finish(args, "evolve-space", _oracle_inputs(args), outputs, manifest_path(out, is_dir=True),
            seed=args.seed)
    return 0


def cmd_search_models(args: argparse.Namespace) -> int:
    """探索空間内のモデル探索"""
    hs, predictor, lut = _oracles(args)
    space = decode_space(args.space, hs)
    cfg = ModelSearchConfig(
        constraint=args.latency,
        budget=args.budget,
        population=args.population,
        tournament=args.tournament,
        mutation_rate=args.mutation_rate,
        crossover=args.crossover,
        seed=args.seed,
        threads=args.threads,
    )
    result = search_models(space, lut, predictor, cfg)
    write_json(args.out, result.to_dict(cfg))
    outputs = [args.out]
    if args.out_arch:
        write_architecture(args.out_arch, result.best.arch)
        outputs.append(args.out_arch)
    print(f"最良: proxy {result.best.proxy:.6f}, {result.best.latency_ms:.3f} ms "
          f"({result.evaluations} 評価)")
    _finish(args, "search-models", _oracle_inputs(args), outputs, manifest_path(args.out),
            seed=args.seed)
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    """アーキテクチャのレイテンシを予測"""
    arch = load_architecture(args.arch)
    predictor = load_predictor(args.predictor)
    precisions = list(Precision) if args.precision == "both" else [Precision.parse(args.precision)]

    result: Dict[str, object] = {"flops": flops(arch), "kernels": len(decompose(arch)),
                                 "latency_ms": {}}
    for precision in precisions:
        latency = predict_latency(predictor, arch, precision)
        result["latency_ms"][precision.value] = latency
        print(f"{precision.value}: {latency:.4f} ms")
        if args.breakdown:
            result.setdefault("breakdown", {})[precision.value] = \
                latency_breakdown(predictor, arch, precision)
    if len(precisions) == 2:
        report = speedup_report(result["latency_ms"]["fp32"], result["latency_ms"]["int8"])
        result["speedup"] = report["speedup"]
        print(f"INT8 高速化率: {report['speedup']:.3f}x")
    print(f"FLOPs: {result['flops'] / 1e6:.1f}M MACs")

    if args.out:
        write_json(args.out, result)
        _finish(args, "predict", [resolve_preset(args.arch), args.predictor], [args.out],
                manifest_path(args.out))
    return 0


def cmd_score_space(args: argparse.Namespace) -> int:
    """探索空間の Q-T スコアを計算"""
    hs, predictor, lut = _oracles(args)
    space = decode_space(args.space, hs)
    cfg = _qt_config(args)
    report = evaluate_qt(space, lut, predictor, cfg)
    for r in report.results:
        print(f"T={r.constraint:g} ms: Q={r.score:.6f} (実行可能 {r.feasible_count})")
    print(f"合計: {report.total:.6f} (プール {report.pool_size}, 空間の大きさ {space_cardinality(space)})")
    if args.out:
        write_json(args.out, report.to_dict())
        _finish(args, "score-space", _oracle_inputs(args), [args.out], manifest_path(args.out),
                seed=args.seed)
    return 0


def cmd_compare_random(args: argparse.Namespace) -> int:
    """同じ評価回数で進化探索とランダム探索を比較"""
    hs, predictor, lut = _oracles(args)
    qt = _qt_config(args)
    cfg = EvolutionConfig(qt=qt, total_spaces=args.n, population=args.p, sample_size=args.s,
                          seed=args.seed, feasibility_retry_cap=args.retry_cap)
    evo_best, evo_log = evolve(hs, cfg, lut, predictor)
    rnd_best, rnd_log = random_search(hs, len(evo_log.history), qt, lut, predictor, seed=args.seed)

    curves = {
        "evolution": search_curve(evo_log.history, args.every),
        "random": search_curve(rnd_log.history, args.every),
    }
    out = Path(args.out)
    outputs = [out / "curves.json"]
    write_json(outputs[0], {
        "format": "search-curves",
        "version": 1,
        "every": args.every,
        "evolution": {"best": evo_best.encoding, "curve": curves["evolution"]},
        "random": {"best": rnd_best.encoding, "curve": curves["random"]},
    })
    if not args.no_plot:
        outputs.append(out / "curves.png")
        plot_search_curves(curves, outputs[-1])
    print(f"進化探索: {evo_best.encoding}, ランダム探索: {rnd_best.encoding}")
    _finish(args, "compare-random", _oracle_inputs(args), outputs, manifest_path(out, is_dir=True),
            seed=args.seed)
    return 0


def cmd_plot(args: argparse.Namespace) -> int:
    """ログ・曲線・探索結果を PNG に描く"""
    if args.log:
        records = read_jsonl(args.log)
        plot_best_so_far([r["best"] for r in records], args.out)
    elif args.curves:
        data = read_json(args.curves)
        plot_search_curves({"evolution": data["evolution"]["curve"],
                            "random": data["random"]["curve"]}, args.out)
    elif args.result:
        data = read_json(args.result)
        front = [(p["latency_ms"], p["proxy"], p["key"]) for p in data["pareto_front"]]
        plot_pareto_front(front, args.out, data.get("config", {}).get("constraint"))
    else:
        raise ConfigError("--log, --curves, --result のいずれかを指定してください")
    print(f"プロット: {args.out}")
    return 0


def cmd_rerun(args: argparse.Namespace) -> int:
    """マニフェストの引数で再実行し、出力のハッシュを比較"""
    from main import main as run_main

    manifest = RunManifest.load(args.manifest)
    logger.info("再実行: %s", " ".join(manifest.argv))
    code = run_main(manifest.argv)
    if code != 0:
        return code
    changed = manifest.changed_outputs()
    if changed:
        for path in changed:
            print(f"出力が一致しません: {path}")
        return 1
    print(f"出力は一致しました ({len(manifest.outputs)} ファイル)")
    return 0
