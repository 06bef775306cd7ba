import json
import math

import numpy as np
import pytest

from primpose.cli import EXIT_IO, EXIT_OK, EXIT_USAGE, EXIT_VERIFY, main
from primpose.geometry import axis_angle_to_quat, quat_multiply
from primpose.gradcheck import GradKernel


@pytest.fixture(scope="module")
def gen_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli") / "data"
    assert main(["gen", "--n", "10", "--seed", "0", "--out", str(root)]) == EXIT_OK
    return root


def _run(capsys, argv, **kw):
    code = main(argv, **kw)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_gen_example(gen_dir):
    meta = json.loads((gen_dir / "meta.json").read_text())
    assert meta["format_version"] == "1"
    assert len(list((gen_dir / "samples").glob("*_meta.json"))) == 10


def test_gen_checksum_repeatable(tmp_path, capsys):
    sums = []
    for jobs in ("1", "3"):
        code, out, _ = _run(capsys, ["gen", "--n", "4", "--seed", "2", "--jobs", jobs, "--json",
                                     "--out", str(tmp_path / jobs)])
        assert code == EXIT_OK
        sums.append(json.loads(out)["manifest_sha256"])
    assert sums[0] == sums[1]


def test_gen_missing_model(tmp_path, capsys):
    code, _, err = _run(capsys, ["gen", "--model", "nowhere.obj", "--out", str(tmp_path / "x")])
    assert code == EXIT_IO and "nowhere.obj" in err


def test_gen_infeasible_margin(tmp_path, capsys):
    code, _, err = _run(capsys, ["gen", "--margin-px", "300", "--out", str(tmp_path / "x")])
    assert code == EXIT_USAGE and err


def test_usage_errors(capsys):
    assert _run(capsys, ["gen"])[0] == EXIT_USAGE  # --out missing
    assert _run(capsys, ["frobnicate"])[0] == EXIT_USAGE
    assert _run(capsys, ["estimate", "--data", "x", "--mode", "psychic"])[0] == EXIT_USAGE


def test_render(tmp_path, capsys):
    p = tmp_path / "r.png"
    code, out, _ = _run(capsys, ["render", "--quat", "1,0.1,0,0", "--t", "0,0,0.8", "--json",
                                 "--out", str(p)])
    assert code == EXIT_OK and p.is_file()
    assert json.loads(out)["object_pixels"] > 0
    assert _run(capsys, ["render", "--quat", "0,0,0,0", "--out", str(p)])[0] == EXIT_USAGE


def test_estimate_noise_free(gen_dir, capsys):
    code, out, _ = _run(capsys, ["estimate", "--data", str(gen_dir), "--json"])
    assert code == EXIT_OK
    rep = json.loads(out)["runs"][0]["report"]
    assert rep["rot_mae"] < 1e-3 and rep["trans_mae"] < 0.1
    assert rep["add_accuracy"] == 1.0 and rep["proj2d_accuracy"] == 1.0


def test_estimate_iou_sweep(gen_dir, tmp_path, capsys):
    out_dir = tmp_path / "sweep"
    code, out, _ = _run(capsys, ["estimate", "--data", str(gen_dir), "--sigma", "2", "--iou",
                                 "1.0,0.9,0.75", "--out", str(out_dir)])
    assert code == EXIT_OK
    assert out.count("# IoU") == 3
    for tag in ("1.00", "0.90", "0.75"):
        assert (out_dir / f"estimates_iou{tag}.json").is_file()
        assert (out_dir / f"report_iou{tag}.json").is_file()


def test_estimate_report_bytes_repeatable(gen_dir, tmp_path, capsys):
    for d in ("a", "b"):
        assert main(["estimate", "--data", str(gen_dir), "--sigma", "2", "--outliers", "0.2",
                     "--seed", "4", "--out", str(tmp_path / d)]) == EXIT_OK
    capsys.readouterr()
    for name in ("estimates_iou1.00.json", "report_iou1.00.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_estimate_unreadable_dataset(tmp_path, capsys):
    assert _run(capsys, ["estimate", "--data", str(tmp_path / "none")])[0] == EXIT_IO


def _write_estimates(path, entries):
    path.write_text(json.dumps({"format_version": "1", "estimates": entries}))


def _gt_entries(gen_dir):
    out = []
    for p in sorted((gen_dir / "samples").glob("*_meta.json")):
        m = json.loads(p.read_text())
        out.append({"sample_id": m["sample_id"], "pose.quat_wxyz": m["pose.quat_wxyz"],
                    "pose.t_m": m["pose.t_m"]})
    return out


def test_eval_identical(gen_dir, tmp_path, capsys):
    est = tmp_path / "gt.json"
    _write_estimates(est, _gt_entries(gen_dir))
    code, out, _ = _run(capsys, ["eval", "--data", str(gen_dir), "--estimates", str(est), "--json",
                                 "--out", str(tmp_path / "rep.json")])
    assert code == EXIT_OK
    rep = json.loads(out)
    assert rep["add_accuracy"] == 1.0 and rep["proj2d_accuracy"] == 1.0
    assert json.loads((tmp_path / "rep.json").read_text()) == rep


def test_eval_single_rotation_offset(gen_dir, tmp_path, capsys):
    entries = _gt_entries(gen_dir)[:1]
    q = quat_multiply(axis_angle_to_quat([0, 0, 1], math.radians(10)), entries[0]["pose.quat_wxyz"])
    entries[0]["pose.quat_wxyz"] = list(q)
    root = tmp_path / "one"
    # a one-sample copy of the dataset
    (root / "samples").mkdir(parents=True)
    for name in ("meta.json", "model.obj"):
        (root / name).write_bytes((gen_dir / name).read_bytes())
    for f in (gen_dir / "samples").glob("000000_*"):
        (root / "samples" / f.name).write_bytes(f.read_bytes())
    est = tmp_path / "off.json"
    _write_estimates(est, entries)
    code, out, _ = _run(capsys, ["eval", "--data", str(root), "--estimates", str(est), "--json"])
    assert code == EXIT_OK
    assert json.loads(out)["rot_mae"] == pytest.approx(10.0, abs=1e-6)


def test_eval_mismatched_ids(gen_dir, tmp_path, capsys):
    est = tmp_path / "part.json"
    _write_estimates(est, _gt_entries(gen_dir)[2:])
    code, _, err = _run(capsys, ["eval", "--data", str(gen_dir), "--estimates", str(est)])
    assert code == EXIT_USAGE and "missing" in err
    code, _, err = _run(capsys, ["eval", "--data", str(gen_dir), "--estimates", str(tmp_path / "no.json")])
    assert code == EXIT_IO


def test_check_grads_default(capsys):
    code, out, _ = _run(capsys, ["check-grads", "--n-seeds", "3", "--max-size", "8"])
    assert code == EXIT_OK and "FAIL" not in out


def test_check_grads_catches_bug(capsys):
    def sample(rng, max_size):
        return [rng.normal(size=5)]

    def evaluate(arrays):
        (x,) = arrays
        return float(np.sum(x ** 2)), [3.0 * x], None  # should be 2x

    code, _, err = _run(capsys, ["check-grads", "--n-seeds", "2"],
                        kernels=[GradKernel("buggy_square", sample, evaluate)])
    assert code == EXIT_VERIFY
    assert "buggy_square" in err and "seed" in err


def test_check_grads_repeatable(capsys):
    a = _run(capsys, ["check-grads", "--seed", "7", "--n-seeds", "2", "--max-size", "6", "--json"])
    b = _run(capsys, ["check-grads", "--seed", "7", "--n-seeds", "2", "--max-size", "6", "--json"])
    assert a[0] == b[0] == EXIT_OK and a[1] == b[1]


def test_bench_json(capsys):
    code, out, _ = _run(capsys, ["bench", "--n", "5", "--json"])
    assert code == EXIT_OK
    d = json.loads(out)
    assert {"pnp_ransac_refine", "render_primitive_640x480", "oracle_estimate", "within_budget"} <= set(d)


def test_config_precedence(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("n = 3\nseed = 5\n")
    code, out, err = _run(capsys, ["gen", "--config", str(cfg), "--n", "2", "--json",
                                   "--out", str(tmp_path / "d")])
    assert code == EXIT_OK
    assert json.loads(out)["n_samples"] == 2  # flag wins over the file
    assert "seed" in err  # the resolved config is logged


def test_bad_config(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("n_samples = 3\n")
    assert _run(capsys, ["gen", "--config", str(cfg), "--out", str(tmp_path / "d")])[0] == EXIT_USAGE
    cfg.write_text("n = lots\n")
    assert _run(capsys, ["gen", "--config", str(cfg), "--out", str(tmp_path / "d")])[0] == EXIT_USAGE
