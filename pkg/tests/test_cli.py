import numpy as np
import pytest

from lovasz_jaccard import cli
from lovasz_jaccard.checks import gradcheck_from_csv
from lovasz_jaccard.harness import ExperimentResult, SyntheticConfig, generate_circles, sweep_from_csv
from lovasz_jaccard.io import write_pgm
from lovasz_jaccard.metrics import IoUReport


def run(tmp_path, *argv):
    return cli.main(["--out-dir", str(tmp_path), *argv])


def test_gradcheck_passes_and_writes_csv(tmp_path):
    assert run(tmp_path, "gradcheck", "--loss", "lovasz_hinge", "--p", "32", "--trials", "100",
               "--tol", "1e-4") == 0
    errors = gradcheck_from_csv((tmp_path / "gradcheck_lovasz_hinge.csv").read_text())
    assert len(errors) == 100 and max(errors) < 1e-4


def test_gradcheck_fails_on_impossible_tolerance(tmp_path):
    assert run(tmp_path, "gradcheck", "--loss", "cross_entropy", "--p", "4", "--trials", "3",
               "--tol", "1e-300") == 1


@pytest.mark.parametrize(
    "argv",
    [
        ["gradcheck", "--loss", "none"],
        ["gradcheck", "--loss", "hinge", "--p", "0"],
        ["gradcheck", "--loss", "hinge", "--bogus"],
        ["bench", "--p-min", "3"],
        ["toy"],
        ["toy", "--train", "--assert"],
        ["prox-demo", "--nu", "-1"],
        [],
    ],
)
def test_usage_errors_exit_2(tmp_path, argv, capsys):
    assert run(tmp_path, *argv) == 2
    assert capsys.readouterr().err


def test_help_exits_0(tmp_path):
    assert run(tmp_path, "--help") == 0


def test_bad_thread_setting_is_usage_error(tmp_path, monkeypatch):
    monkeypatch.setenv("LSV_THREADS", "zero")
    assert run(tmp_path, "props", "--n", "2") == 2


def test_out_dir_must_be_a_directory(tmp_path):
    f = tmp_path / "file"
    f.write_text("")
    assert cli.main(["--out-dir", str(f), "props", "--n", "2"]) == 2


def test_toy_sweep_is_deterministic(tmp_path):
    argv = ["--seed", "7", "toy", "--bias-sweep", "--n-images", "3", "--size", "16",
            "--bias-min", "-1", "--bias-max", "1", "--bias-step", "0.1"]
    assert run(tmp_path / "a", *argv) == 0
    assert run(tmp_path / "b", *argv) == 0
    a = (tmp_path / "a" / "bias_sweep.csv").read_text()
    assert a == (tmp_path / "b" / "bias_sweep.csv").read_text()
    rows = sweep_from_csv(a)
    assert len(rows) == 4 * 21
    assert rows[0][1] == -1.0 and rows[20][1] == 1.0


def test_toy_sweep_assert_reports_each_claim(tmp_path, capsys):
    code = run(tmp_path, "toy", "--bias-sweep", "--n-images", "3", "--size", "16",
               "--bias-step", "0.05", "--assert")
    out = capsys.readouterr().out
    assert out.count("PASS") + out.count("FAIL") == 3
    assert code == (0 if "FAIL" not in out else 1)


def test_toy_train_writes_experiment_log(tmp_path):
    assert run(tmp_path, "toy", "--train", "--loss", "hinge", "--n-images", "5", "--size", "16",
               "--epochs", "20") == 0
    records = ExperimentResult.records_from_csv((tmp_path / "train_hinge.csv").read_text())
    assert records and records[-1][0] == 80
    IoUReport.from_csv((tmp_path / "train_hinge_metrics.csv").read_text())


def _mask_dirs(tmp_path, preds_fn=lambda i, m: m):
    masks, _ = generate_circles(SyntheticConfig(n_images=3, height=20, width=20, seed=0))
    gt, pred = tmp_path / "gt", tmp_path / "pred"
    for i, m in enumerate(masks):
        write_pgm(gt / f"img{i}.pgm", m)
        write_pgm(pred / f"img{i}.pgm", preds_fn(i, m))
    return gt, pred


def test_metrics_identical_dirs(tmp_path):
    gt, pred = _mask_dirs(tmp_path)
    out = tmp_path / "out"
    assert run(out, "metrics", "--gt-dir", str(gt), "--pred-dir", str(pred), "--classes", "2") == 0
    rep = IoUReport.from_csv((out / "metrics.csv").read_text())
    assert rep.per_class_iou == {0: 1.0, 1: 1.0} and rep.mean_iou == 1.0
    summary = (out / "metrics_summary.csv").read_text().splitlines()
    assert summary[0] == "metric,value" and "image_miou,1.000000" in summary


def test_metrics_probe_fixture_shows_divergence(tmp_path):
    # image 0 is all class 1 in the ground truth; one stray class-0 pixel
    # zeroes that image's class-0 IoU but hardly moves the pooled count
    def preds(i, m):
        p = m.copy()
        if i == 0:
            p[0, 0] = 0
        return p

    masks, _ = generate_circles(SyntheticConfig(n_images=3, height=20, width=20, seed=0))
    masks[0] = np.ones((20, 20), dtype=np.int64)
    gt, pred = tmp_path / "gt", tmp_path / "pred"
    for i, m in enumerate(masks):
        write_pgm(gt / f"img{i}.pgm", m)
        write_pgm(pred / f"img{i}.pgm", preds(i, m))
    out = tmp_path / "out"
    assert run(out, "metrics", "--gt-dir", str(gt), "--pred-dir", str(pred), "--classes", "2") == 0
    summary = dict(line.split(",") for line in (out / "metrics_summary.csv").read_text().splitlines()[1:])
    assert float(summary["dataset_miou"]) > 0.99
    assert float(summary["image_miou"]) < 0.85


def test_metrics_mismatched_names(tmp_path, capsys):
    gt, pred = _mask_dirs(tmp_path)
    (pred / "img0.pgm").rename(pred / "other.pgm")
    assert run(tmp_path / "o", "metrics", "--gt-dir", str(gt), "--pred-dir", str(pred),
               "--classes", "2") == 1
    err = capsys.readouterr().err
    assert "img0.pgm" in err and "other.pgm" in err


def test_metrics_label_outside_class_set(tmp_path):
    gt, pred = _mask_dirs(tmp_path, lambda i, m: m * 2)
    assert run(tmp_path / "o", "metrics", "--gt-dir", str(gt), "--pred-dir", str(pred),
               "--classes", "2") == 1


def test_metrics_empty_dirs(tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    assert run(tmp_path, "metrics", "--gt-dir", str(tmp_path / "a"), "--pred-dir",
               str(tmp_path / "b"), "--classes", "2") == 1
    assert run(tmp_path, "metrics", "--gt-dir", str(tmp_path / "nope"), "--pred-dir",
               str(tmp_path / "b"), "--classes", "2") == 1


def test_bench_small_range(tmp_path, capsys):
    assert run(tmp_path, "bench", "--p-min", "1", "--p-max", "1", "--repeats", "3") == 0
    rows = cli.bench_from_csv((tmp_path / "bench.csv").read_text())
    assert rows[0][0] == 1 and rows[0][1] > 0
    assert run(tmp_path, "bench", "--p-min", "4", "--p-max", "64", "--repeats", "3") == 0
    assert [r[0] for r in cli.bench_from_csv((tmp_path / "bench.csv").read_text())] == [
        4, 8, 16, 32, 64]
    assert "slope" in capsys.readouterr().out


def test_bench_doubling_growth_is_bounded():
    # doubling p should roughly double the time; a quadratic method gives 4x
    rows = cli.bench_jaccard_grad([1 << 16, 1 << 17, 1 << 18], repeats=9, seed=0)
    times = [t for _, t in rows]
    assert all(b / a < 3.0 for a, b in zip(times, times[1:]))


def test_prox_demo_outputs(tmp_path):
    assert run(tmp_path, "prox-demo", "--steps", "20") == 0
    rows = cli.prox_demo_from_csv((tmp_path / "prox_demo.csv").read_text())
    assert len(rows) == 3 * 21
    assert {r[0] for r in rows} == {"gd", "momentum", "prox"}
    prox_ok, _ = cli.trajectory_checks(rows)
    assert prox_ok


def test_prox_demo_zero_steps_is_header_only(tmp_path):
    assert run(tmp_path, "prox-demo", "--steps", "0") == 0
    assert (tmp_path / "prox_demo.csv").read_text() == "method,step,x1,x2,objective\n"


def test_prox_demo_assert_reflects_momentum_claim(tmp_path, capsys):
    # momentum never increases the objective on this toy problem, so the
    # claim check fails and the command says so
    assert run(tmp_path, "prox-demo", "--assert") == 1
    out = capsys.readouterr().out
    assert "[PASS] prox objective monotone nonincreasing" in out
    assert "[FAIL] momentum objective increases at least once" in out


def test_props_pass(tmp_path):
    assert run(tmp_path, "props", "--n", "50") == 0
    text = (tmp_path / "props.csv").read_text().splitlines()
    assert text[0] == "property,passed,detail,seconds" and len(text) == 7
