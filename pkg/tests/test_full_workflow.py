"""
CLI を通した統合テスト
"""

import sys
import os
import json

# srcディレクトリをパスに追加
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, os.path.join(project_root, 'src'))

import pytest

from accmodel.lut import write_lut
from cli.manifest import RunManifest, manifest_path
from main import main

from toy_fixtures import TOY_DEVICE, micro_hyperspace, toy_hyperspace_dict, toy_lut


@pytest.fixture(scope="module")
def oracles(tmp_path_factory):
    """トイのハイパースペース・合成デバイスから予測器と LUT を作る"""
    root = tmp_path_factory.mktemp("oracles")
    hs_path = root / "toy.json"
    hs_path.write_text(json.dumps(toy_hyperspace_dict()))
    device = dict(TOY_DEVICE, hyperspace=str(hs_path))
    dev_path = root / "toy_device.json"
    dev_path.write_text(json.dumps(device))

    samples = root / "samples.csv"
    lut = root / "lut.csv"
    holdout = root / "holdout.csv"
    assert main(["synth", "--device", str(dev_path), "--out-samples", str(samples),
                 "--out-lut", str(lut), "--out-holdout", str(holdout), "--holdout-count", "50"]) == 0
    pred = root / "pred.json"
    assert main(["train-predictor", "--samples", str(samples), "--holdout", str(holdout),
                 "--out", str(pred)]) == 0
    return {"hs": str(hs_path), "pred": str(pred), "lut": str(lut), "samples": str(samples)}


def oracle_args(o):
    return ["--hyperspace", o["hs"], "--predictor", o["pred"], "--lut", o["lut"]]


QT_ARGS = ["--constraints", "1,10,1000", "--samples", "30", "--top-k", "3"]
EVO_ARGS = ["--n", "20", "--p", "6", "--s", "2"]


def test_full_workflow(oracles, tmp_path):
    """合成 → 学習 → 探索空間の進化探索 → モデル探索 → 予測"""
    print("=== QuantScape 統合テスト ===\n")

    print("1. 探索空間の進化探索...")
    evo = tmp_path / "evo"
    assert main(["evolve-space", *oracle_args(oracles), *QT_ARGS, *EVO_ARGS, "--out", str(evo)]) == 0
    best = (evo / "best_space.txt").read_text().strip()
    print(f"   最良の探索空間: {best}")
    assert len(best) == 5
    report = json.loads((evo / "qt_report.json").read_text())
    assert report["space"] == best
    records = [json.loads(line) for line in (evo / "evolution.jsonl").read_text().splitlines()]
    assert len(records) == 7
    assert (evo / "manifest.json").is_file()

    print("2. モデル探索...")
    result = tmp_path / "models.json"
    arch = tmp_path / "arch.json"
    assert main(["search-models", *oracle_args(oracles), "--space", best, "--latency", "1e6",
                 "--budget", "30", "--population", "6", "--tournament", "2",
                 "--out", str(result), "--out-arch", str(arch)]) == 0
    data = json.loads(result.read_text())
    print(f"   最良: proxy {data['best']['proxy']:.4f}")
    assert data["evaluations"] <= 30

    print("3. レイテンシ予測...")
    out = tmp_path / "predict.json"
    assert main(["predict", "--arch", str(arch), "--predictor", oracles["pred"], "--precision", "both",
                 "--breakdown", "--out", str(out)]) == 0
    predicted = json.loads(out.read_text())
    assert predicted["latency_ms"]["int8"] == pytest.approx(data["best"]["latency_ms"])
    assert set(predicted["breakdown"]["int8"]) == {"stem", "stage1", "stage2", "head"}

    print("4. プロット...")
    png = tmp_path / "evo.png"
    assert main(["plot", "--log", str(evo / "evolution.jsonl"), "--out", str(png)]) == 0
    assert png.stat().st_size > 0
    front_png = tmp_path / "front.png"
    assert main(["plot", "--result", str(result), "--out", str(front_png)]) == 0
    assert front_png.is_file()


def test_score_space(oracles, tmp_path):
    out = tmp_path / "qt.json"
    assert main(["score-space", *oracle_args(oracles), *QT_ARGS, "--space", "01-10",
                 "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["format"] == "qt-report"
    assert [c["latency_ms"] for c in report["constraints"]] == [1.0, 10.0, 1000.0]
    assert manifest_path(out).is_file()


def test_compare_random(oracles, tmp_path):
    """ランダム探索との比較は曲線と PNG を書き出す"""
    out = tmp_path / "cmp"
    assert main(["compare-random", *oracle_args(oracles), *QT_ARGS, *EVO_ARGS, "--every", "5",
                 "--out", str(out)]) == 0
    curves = json.loads((out / "curves.json").read_text())
    assert [p[0] for p in curves["evolution"]["curve"]] == [5, 10, 15, 20]
    assert [p[0] for p in curves["random"]["curve"]] == [5, 10, 15, 20]
    assert (out / "curves.png").is_file()

    png = tmp_path / "curves.png"
    assert main(["plot", "--curves", str(out / "curves.json"), "--out", str(png)]) == 0


def test_rerun(oracles, tmp_path):
    """マニフェストから再実行すると同じ出力になる"""
    evo = tmp_path / "evo"
    assert main(["evolve-space", *oracle_args(oracles), *QT_ARGS, *EVO_ARGS, "--seed", "3",
                 "--out", str(evo)]) == 0
    manifest = evo / "manifest.json"
    assert main(["rerun", "--manifest", str(manifest)]) == 0

    # 記録されたハッシュを書き換えると不一致になる
    m = RunManifest.load(manifest)
    first = sorted(m.outputs)[0]
    m.outputs[first] = "0" * 64
    m.save(manifest)
    assert main(["rerun", "--manifest", str(manifest)]) == 1


def test_synth_deterministic(oracles, tmp_path):
    """synth の出力は同じシードなら同じバイト列"""
    manifest = RunManifest.load(manifest_path(oracles["samples"]))
    assert manifest.command == "synth"
    assert manifest.seed == 0
    assert main(["rerun", "--manifest", str(manifest_path(oracles["samples"]))]) == 0


def test_infeasible_exit_code(oracles, tmp_path):
    """制約を満たせないモデル探索は終了コード 3"""
    code = main(["search-models", *oracle_args(oracles), "--space", "00-00", "--latency", "1e-6",
                 "--budget", "20", "--population", "4", "--tournament", "2",
                 "--out", str(tmp_path / "r.json")])
    assert code == 3


@pytest.mark.parametrize("extra", [
    ["--constraints", "8,x"],
    ["--constraints", "10,8"],
    ["--weights", "1,2"],
])
def test_bad_constraints_exit_code(oracles, tmp_path, extra):
    """不正な制約は終了コード 2"""
    code = main(["score-space", *oracle_args(oracles), "--space", "00-00", *extra])
    assert code == 2


def test_bad_encoding_exit_code(oracles):
    assert main(["score-space", *oracle_args(oracles), "--space", "99-00"]) == 2
    assert main(["score-space", *oracle_args(oracles), "--space", "0-00"]) == 2


def test_missing_column_exit_code(tmp_path):
    """列が足りないサンプル CSV は終了コード 2"""
    bad = tmp_path / "bad.csv"
    bad.write_text("kind,precision,h,w,cin,cout,k,stride,activation\nfc,int8,1,1,8,8,1,1,none\n")
    assert main(["train-predictor", "--samples", str(bad), "--out", str(tmp_path / "p.json")]) == 2


def test_missing_file_exit_code(tmp_path):
    assert main(["train-predictor", "--samples", str(tmp_path / "none.csv"),
                 "--out", str(tmp_path / "p.json")]) == 2


def test_lut_coverage_exit_code(oracles, tmp_path):
    """ハイパースペースを被覆しない LUT は終了コード 4"""
    lut = tmp_path / "micro_lut.csv"
    write_lut(lut, toy_lut(micro_hyperspace()))
    code = main(["score-space", "--hyperspace", oracles["hs"], "--predictor", oracles["pred"],
                 "--lut", str(lut), "--space", "00-00"])
    assert code == 4


def test_predict_preset(oracles, capsys):
    """バンドル済みのアーキテクチャのレイテンシ予測"""
    assert main(["predict", "--arch", "mobilenetv2_ref", "--predictor", oracles["pred"]]) == 0
    out = capsys.readouterr().out
    assert "int8:" in out
    assert "MACs" in out


def test_usage_error():
    """必須引数がなければ argparse が終了コード 2 で終わる"""
    with pytest.raises(SystemExit) as e:
        main(["search-models"])
    assert e.value.code == 2


if __name__ == "__main__":
    pytest.main([__file__, "-v", "-s"])
