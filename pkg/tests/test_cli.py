import csv
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from mweforge.cli import EXIT_FORMAT, EXIT_OK, EXIT_RUNTIME, ExperimentSpec, main
from mweforge.cupt import MweInstance, read_cupt, save_cupt

from .oracles import brute_force_scores, prf_from_counts

GOLDEN = sorted((Path(__file__).parent / "golden").glob("*.cupt"))
QUICK = ["--lr", "1e-2", "--dim", "16", "--radius", "1"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--languages", "2", "--sentences", "60", "--seed", "3", "--out", str(out)]) == EXIT_OK
    return out


def _read(path):
    return Path(path).read_text(encoding="utf-8")


@pytest.mark.parametrize("path", GOLDEN, ids=lambda p: p.stem)
def test_convert_round_trip(tmp_path, path):
    tags, back = tmp_path / "x.tags", tmp_path / "x.cupt"
    assert main(["convert", str(path), str(tags), "--direction", "cupt2tags"]) == EXIT_OK
    if path.stem == "nested":
        # nested MWEs cannot all live in one flat tag column
        return
    assert main(["convert", str(tags), str(back), "--direction", "tags2cupt"]) == EXIT_OK
    assert _read(back) == _read(path)


def test_convert_reports_each_dropped_membership(tmp_path):
    tags = tmp_path / "n.tags"
    main(["convert", str(GOLDEN[[p.stem for p in GOLDEN].index("nested")]), str(tags), "--direction", "cupt2tags"])
    sidecar = _read(str(tags) + ".diag").strip().split("\n")
    # sentence n1 keeps "made ... minds" and "give up"; n2 keeps the two LVCs
    assert len(sidecar) == 2
    assert sidecar[0].split("\t")[:3] == ["n1", "VPC.full", "2,3"]
    assert sidecar[1].split("\t")[:3] == ["n2", "VID", "3,4"]


def test_convert_bad_columns_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.cupt"
    bad.write_text("1\ta\tb\n\n")
    assert main(["convert", str(bad), str(tmp_path / "o"), "--direction", "cupt2tags"]) == EXIT_FORMAT
    assert "line 1" in capsys.readouterr().err


def test_convert_bad_tags_exit_2(tmp_path):
    bad = tmp_path / "bad.tags"
    row = "\t".join(["1", "a", "a", "X", "_", "_", "0", "root", "_", "_", "I-VID"])
    bad.write_text(row + "\n\n")
    assert main(["convert", str(bad), str(tmp_path / "o"), "--direction", "tags2cupt"]) == EXIT_FORMAT


def test_missing_file_exit_1(tmp_path):
    assert main(["convert", str(tmp_path / "nope"), str(tmp_path / "o"), "--direction", "cupt2tags"]) == EXIT_RUNTIME
    assert main(["train", "--train", f"L1={tmp_path / 'nope.cupt'}", "--out", str(tmp_path / "r")]) == EXIT_RUNTIME


def test_experiment_spec_validation():
    with pytest.raises(ValueError):
        ExperimentSpec({"a": "x", "b": "y"}, method="monolingual")
    with pytest.raises(ValueError):
        ExperimentSpec({"a": "x"}, method="bilingual")
    with pytest.raises(ValueError):
        ExperimentSpec({})


def test_train_echoes_defaults(tmp_path, data_dir, capsys):
    assert main(["train", "--data-dir", str(data_dir), "--epochs", "0", "--out", str(tmp_path / "r")]) == EXIT_OK
    first = capsys.readouterr().out.split("\n")[0]
    for part in ("epochs=0", "batch=32", "lr=3e-05", "max_len=150", "k=10", "lambda=0.01"):
        assert part in first


def test_config_file_then_flags_then_env(tmp_path, data_dir, capsys, monkeypatch):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("# desk run\nepochs = 0\nbatch_size = 8\nlambda = 0.5\nseed = 4\n")
    args = ["train", "--data-dir", str(data_dir), "--config", str(cfg), "--out", str(tmp_path / "r")]
    main(args)
    line = capsys.readouterr().out.split("\n")[0]
    assert "epochs=0" in line and "batch=8" in line and "lambda=0.5" in line and "seed=4" in line
    main(args + ["--batch-size", "16", "--seed", "5"])
    line = capsys.readouterr().out.split("\n")[0]
    assert "batch=16" in line and "seed=5" in line
    monkeypatch.setenv("MWEFORGE_SEED", "9")
    main(args + ["--seed", "5"])
    assert "seed=9" in capsys.readouterr().out.split("\n")[0]


def test_method_and_toggles(tmp_path, data_dir, capsys):
    base = ["train", "--data-dir", str(data_dir), "--epochs", "0", "--out", str(tmp_path / "r")]
    main(base + ["--method", "multilingual+LI+Adv"])
    assert "li=on adv=on" in capsys.readouterr().out
    main(base + ["--method", "multilingual+LI+Adv", "--adv", "off"])
    assert "li=on adv=off" in capsys.readouterr().out
    assert main(base + ["--method", "monolingual"]) == EXIT_RUNTIME


def test_zero_epochs_checkpoint_is_initialisation(tmp_path, data_dir):
    from mweforge.training import TrainConfig, build_model, load_model

    out = tmp_path / "r"
    main(["train", "--data-dir", str(data_dir), "--epochs", "0", "--seed", "2", "--out", str(out)] + QUICK)
    model, cfg = load_model(_read(out / "checkpoint.json"))
    corpora = [(lang, read_cupt(data_dir / lang / "train.cupt")) for lang in ("L1", "L2")]
    fresh = build_model(corpora, cfg)
    assert all((model.snapshot()[n] == fresh.snapshot()[n]).all() for n in fresh.snapshot())
    assert cfg == TrainConfig(epochs=0, seed=2, learning_rate=1e-2, embedding_dim=16, window_radius=1)


def test_train_eval_predict_are_reproducible(tmp_path, data_dir):
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        args = ["train", "--data-dir", str(data_dir), "--epochs", "2", "--method", "multilingual+LI+Adv",
                "--out", str(out)] + QUICK
        assert main(args) == EXIT_OK
        runs.append(out)
    for f in ("history.csv", "checkpoint.json", "report.txt", "report.csv", "config.txt", "pred/L1.test.cupt"):
        assert _read(runs[0] / f) == _read(runs[1] / f), f
    assert _read(runs[0] / "history.csv").startswith("epoch,L_y,L_ld,discriminator_accuracy\n")
    pred = tmp_path / "p.cupt"
    assert main(["predict", "--checkpoint", str(runs[0] / "checkpoint.json"),
                 "--input", str(data_dir / "L1" / "test.cupt"), "--output", str(pred)]) == EXIT_OK
    assert _read(pred) == _read(runs[0] / "pred" / "L1.test.cupt")


def _eval(tmp_path, gold, pred, data_dir, *extra):
    prefix = tmp_path / "ev"
    code = main(["eval", "--gold", str(gold), "--pred", str(pred), "--reference", str(data_dir / "L1" / "train.cupt"),
                 "--dev", str(data_dir / "L1" / "dev.cupt"), "--out", str(prefix), *extra])
    rows = list(csv.DictReader(open(str(prefix) + ".csv")))
    return code, {r["scope"]: r for r in rows}, _read(str(prefix) + ".txt")


def test_eval_perfect_and_empty(tmp_path, data_dir):
    gold = data_dir / "L1" / "test.cupt"
    code, rows, table = _eval(tmp_path, gold, gold, data_dir)
    assert code == EXIT_OK
    assert all(float(rows[s]["f1"]) == 1.0 for s in ("global", "unseen"))
    assert table.count("1.000") == 6
    blank = read_cupt(gold)
    for s in blank.sentences:
        s.mwes = []
    empty = tmp_path / "empty.cupt"
    save_cupt(blank, empty)
    _, rows, _ = _eval(tmp_path, gold, empty, data_dir)
    assert all(float(rows[s][k]) == 0.0 for s in ("global", "unseen") for k in ("precision", "recall", "f1"))


def test_eval_matches_brute_force(tmp_path, data_dir):
    gold_path = data_dir / "L1" / "test.cupt"
    gold = read_cupt(gold_path)
    pred = read_cupt(gold_path)
    rng = np.random.default_rng(0)
    for s in pred.sentences:
        kept = [m for m in s.mwes if rng.random() < 0.6]
        if rng.random() < 0.3:
            kept.append(MweInstance(1, "VID", (1, len(s.tokens))))
        s.mwes = kept
    pred_path = tmp_path / "pred.cupt"
    save_cupt(pred, pred_path)
    _, rows, _ = _eval(tmp_path, gold_path, pred_path, data_dir)
    ref = [read_cupt(data_dir / "L1" / "train.cupt"), read_cupt(data_dir / "L1" / "dev.cupt")]
    oracle = brute_force_scores(gold, read_cupt(pred_path), ref)
    for scope, (tp, fp, fn) in oracle.items():
        r = rows[scope]
        assert (int(r["tp"]), int(r["fp"]), int(r["fn"])) == (tp, fp, fn)
        assert tuple(float(r[k]) for k in ("precision", "recall", "f1")) == prf_from_counts(tp, fp, fn)


def test_eval_misaligned_exit_2(tmp_path, data_dir):
    code = main(["eval", "--gold", str(data_dir / "L1" / "test.cupt"), "--pred", str(data_dir / "L1" / "dev.cupt"),
                 "--reference", str(data_dir / "L1" / "train.cupt")])
    assert code == EXIT_FORMAT


def test_delta_irish(capsys):
    assert main(["delta", "--language", "GA", "--baseline-global", "30.07", "--baseline-unseen", "19.54",
                 "--new-global", "43.70", "--new-unseen", "37.28"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "+45.3%" in out and "+90.8%" in out


def test_delta_from_reports(tmp_path, capsys):
    header = "language,method,scope,tp,fp,fn,precision,recall,f1,seen_gold,unseen_gold\n"
    base, new = tmp_path / "b.csv", tmp_path / "n.csv"
    base.write_text(header + "GA,x,global,0,0,0,0,0,0.3007,0,0\nGA,x,unseen,0,0,0,0,0,0.1954,0,0\n")
    new.write_text(header + "GA,y,global,0,0,0,0,0,0.4370,0,0\nGA,y,unseen,0,0,0,0,0,0.3728,0,0\n")
    assert main(["delta", "--language", "GA", "--baseline-report", str(base), "--new-report", str(new)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "+45.3%" in out and "+90.8%" in out


def test_gradcheck_passes_and_detects_fault(capsys):
    assert main(["gradcheck"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "LI surrogate backward vs analytic" in out and "FAIL" not in out
    assert main(["gradcheck", "--inject-fault", "grl-sign"]) == EXIT_RUNTIME
    failed = [line for line in capsys.readouterr().out.split("\n") if line.startswith("FAILED")][0]
    assert "gradient reversal sign law" in failed


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "mweforge", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "gradcheck" in res.stdout
