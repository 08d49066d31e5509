import json
import math
import re

import numpy as np
import pytest

from nfde import harness
from nfde.cli import main
from nfde.harness import (
    ExperimentError,
    ExperimentSpec,
    RunResult,
    aggregate,
    build_dataset,
    emit_loss_plot,
    emit_report,
    format_sci,
    read_loss_csv,
    run_experiment,
)
from nfde.neuralfde import LossHistory, TrainConfig

TINY = TrainConfig(max_iters=3, hidden=(6, 6), runs=2)


def tiny_spec(tmp_path, **kw):
    base = dict(system="ro", data_alpha=0.8, points=8, horizon=7.0, train=TINY, out_dir=str(tmp_path / "out"))
    base.update(kw)
    return ExperimentSpec(**base)


def test_aggregate_example():
    avg, std = aggregate([1e-3, 2e-3, 3e-3])
    assert avg == pytest.approx(2e-3, abs=1e-18)
    assert std == pytest.approx(8.16496580927726e-4, rel=1e-12)


def test_aggregate_matches_straight_line_oracle():
    rng = np.random.default_rng(4)
    for _ in range(100):
        vals = list(rng.uniform(0, 1, rng.integers(1, 8)))
        mean = sum(vals) / len(vals)
        std = math.sqrt(sum((v - mean) ** 2 for v in vals) / len(vals))
        avg, sd = aggregate(vals)
        assert avg == pytest.approx(mean, rel=1e-12, abs=1e-15)
        assert sd == pytest.approx(std, rel=1e-9, abs=1e-15)
    with pytest.raises(ValueError):
        aggregate([])


@pytest.mark.parametrize(
    "x, text", [(0.000395, "3.95E-4"), (1.44e-5, "1.44E-5"), (2.5, "2.50E0"), (1234.0, "1.23E3")]
)
def test_format_sci(x, text):
    assert format_sci(x) == text


def test_report_rows(tmp_path):
    r = RunResult("RO_alpha=0.99", "nfde", "reconstruction", alpha=[0.99, 0.98, 0.97], mse_avg=3.95e-4, mse_std=1.44e-5)
    csv_path, txt_path = emit_report([r], tmp_path / "rep")
    lines = csv_path.read_text().splitlines()
    assert lines == [
        "dataset,model,split,mse_avg,mse_std,alpha_run1,alpha_run2,alpha_run3",
        "RO_alpha=0.99,nfde,reconstruction,3.95E-4,1.44E-5,0.9900,0.9800,0.9700",
    ]
    assert "population std" in txt_path.read_text()


def test_report_node_has_empty_alpha(tmp_path):
    fde = RunResult("PG", "nfde", "extrapolation", alpha=[0.5, 0.6], mse_avg=1.0, mse_std=0.0)
    ode = RunResult("PG", "node", "extrapolation", alpha=[None, None], mse_avg=2.0, mse_std=0.0)
    csv_path, _ = emit_report([fde, ode], tmp_path / "rep")
    assert csv_path.read_text().splitlines()[2].endswith("2.00E0,0.00E0,,")
    with pytest.raises(ValueError):
        emit_report([], tmp_path / "none")


def _hist(losses):
    h = LossHistory()
    h.losses = list(losses)
    h.alphas = [None] * len(losses)
    return h


def test_loss_plot_single_history(tmp_path):
    svg = emit_loss_plot([("a", _hist(np.geomspace(1e-1, 1e-4, 200)))], tmp_path / "p.svg").read_text()
    polys = re.findall(r'<polyline class="series"[^>]*points="([^"]*)"', svg)
    assert len(polys) == 1 and len(polys[0].split()) == 200
    ticks = re.findall(r">1e(-?\d+)</text>", svg)
    assert [int(t) for t in ticks] == [-4, -3, -2, -1]


def test_loss_plot_two_histories(tmp_path):
    svg = emit_loss_plot(
        [("NFDE", _hist([1.0, 0.5, 0.1])), ("NODE", _hist([2.0, 1.0, 0.9]))], tmp_path / "p.svg"
    ).read_text()
    strokes = re.findall(r'<polyline class="series" fill="none" stroke="([^"]+)"', svg)
    assert len(strokes) == 2 and strokes[0] != strokes[1]
    assert re.findall(r'class="legend"[^>]*>([^<]*)<', svg) == ["NFDE", "NODE"]
    with pytest.raises(ValueError):
        emit_loss_plot([], tmp_path / "e.svg")


def test_spec_validation(tmp_path):
    with pytest.raises(ValueError):
        tiny_spec(tmp_path, model="lstm")
    with pytest.raises(ValueError):
        tiny_spec(tmp_path, system=None)
    assert tiny_spec(tmp_path, model="node").train.solver == "euler_ode"


@pytest.mark.parametrize("split", ["reconstruction", "extrapolation", "completion"])
def test_build_dataset_splits(tmp_path, split):
    train, test = build_dataset(tiny_spec(tmp_path, split=split))
    if split == "reconstruction":
        assert train is test and len(train) == 8
    elif split == "extrapolation":
        assert train.times[-1] == pytest.approx(7.0) and test.times[-1] > train.times[-1]
    else:
        assert len(train) == 8 and len(test) == 16
        assert set(train.times).isdisjoint(test.times)


def test_run_experiment_outputs_and_determinism(tmp_path):
    r1 = run_experiment(tiny_spec(tmp_path, out_dir=str(tmp_path / "a")))
    r2 = run_experiment(tiny_spec(tmp_path, out_dir=str(tmp_path / "b")))
    assert r1.run_index == [1, 2] and len(r1.test_mse) == 2
    assert r1.mse_avg == pytest.approx(np.mean(r1.test_mse))
    assert all(0 < a < 1 for a in r1.alpha)
    for name in ("report.csv", "report.txt", "loss_run1.csv", "loss_run2.csv", "model_run1.txt", "train.csv", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    assert (tmp_path / "a" / "loss_run1.csv").read_text().startswith("iter,loss,alpha\n")
    assert json.loads((tmp_path / "a" / "manifest.json").read_text())["train_points"] == 8


def test_parallel_runs_match_sequential(tmp_path):
    seq = run_experiment(tiny_spec(tmp_path, out_dir=str(tmp_path / "s")))
    par = run_experiment(tiny_spec(tmp_path, out_dir=str(tmp_path / "p"), jobs=2))
    assert seq.test_mse == par.test_mse
    assert (tmp_path / "s" / "report.csv").read_bytes() == (tmp_path / "p" / "report.csv").read_bytes()


def test_failed_run_is_excluded(tmp_path, monkeypatch):
    real_train = harness.train

    def flaky(data, config, norm=None):
        model, hist = real_train(data, config, norm)
        if config.seed == 1:
            hist.failed, hist.message = True, "forced"
        return model, hist

    monkeypatch.setattr(harness, "train", flaky)
    result = run_experiment(tiny_spec(tmp_path))
    assert result.failed_runs == [2] and result.run_index == [1]
    assert result.mse_avg == result.test_mse[0] and result.mse_std == 0.0


def test_all_runs_failing_is_an_error(tmp_path, monkeypatch):
    def broken(data, config, norm=None):
        raise harness.TrainingError("boom", 0)

    monkeypatch.setattr(harness, "train", broken)
    with pytest.raises(ExperimentError):
        run_experiment(tiny_spec(tmp_path))


def test_loss_csv_roundtrip(tmp_path):
    h = _hist([0.5, 0.25])
    h.alphas = [0.9, 0.91]
    h.seconds = [0.1, 0.1]
    h.to_csv(tmp_path / "l.csv")
    back = read_loss_csv(tmp_path / "l.csv")
    assert back.losses == h.losses and back.alphas == h.alphas


# command line


def test_cli_generate_train_predict_evaluate(tmp_path, capsys):
    data = tmp_path / "ro.csv"
    assert main(["generate", "--system", "ro", "--alpha", "0.8", "--points", "8", "--horizon", "7", "--out", str(data)]) == 0
    assert data.exists() and data.with_suffix(".json").exists()
    out = tmp_path / "tr"
    assert main(["train", "--dataset", str(data), "--iters", "2", "--out", str(out)]) == 0
    assert (out / "model.txt").exists() and (out / "loss.csv").read_text().startswith("iter,loss,alpha,seconds")
    pred = tmp_path / "pred.csv"
    assert main(["predict", "--model-file", str(out / "model.txt"), "--tf", "10", "--out", str(pred)]) == 0
    assert pred.read_text().startswith("t,y0")
    capsys.readouterr()
    assert main(["evaluate", "--model-file", str(out / "model.txt"), "--dataset", str(data)]) == 0
    assert float(capsys.readouterr().out) >= 0


def test_cli_experiment_with_config_and_plot(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"system": "pg", "data_alpha": 0.5, "points": 8, "horizon": 7.0, "max_iters": 2, "hidden": [6, 6], "runs": 1}))
    out = tmp_path / "exp"
    assert main(["experiment", "--config", str(cfg), "--split", "completion", "--out", str(out)]) == 0
    assert (out / "report.csv").read_text().splitlines()[1].startswith("PG_alpha=0.5,nfde,completion,")
    svg = tmp_path / "loss.svg"
    assert main(["plot", f"NFDE={out / 'loss_run1.csv'}", "--out", str(svg)]) == 0
    assert "<polyline" in svg.read_text()


def test_cli_benchmark(tmp_path, capsys):
    assert main(["benchmark", "--sizes", "20", "--repeats", "1", "--out", str(tmp_path / "b.csv")]) == 0
    assert (tmp_path / "b.csv").read_text().startswith("solver,n_steps,mean_seconds")


def test_cli_exit_codes(tmp_path, monkeypatch):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--bogus"])
    assert exc.value.code == 1
    assert main(["train", "--alpha", "often", "--iters", "1"]) == 1
    assert main(["evaluate", "--model-file", str(tmp_path / "missing.txt"), "--dataset", "x.csv"]) == 2
    flat = tmp_path / "flat.csv"
    flat.write_text("t,x\n0,1\n1,1\n2,1\n")
    assert main(["train", "--dataset", str(flat), "--iters", "1", "--out", str(tmp_path / "o")]) == 2

    import nfde.cli

    def diverging(*args, **kw):
        raise nfde.cli.TrainingError("non-finite loss", 0)

    monkeypatch.setattr(nfde.cli, "train", diverging)
    ok = tmp_path / "ok.csv"
    ok.write_text("t,x\n0,1\n1,2\n2,3\n")
    assert main(["train", "--dataset", str(ok), "--iters", "1", "--out", str(tmp_path / "o")]) == 3
