"""End-to-end checks of the command-line verbs.

Everything drives cli.main(argv) in-process: exit codes, produced files,
and cross-checks of CLI numbers against direct library calls. Synthesis
and training fixtures are module-scoped because they are the slow parts.
"""

import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from camho import baselines, cli, scenario
from camho import trace as trace_store
from camho.channel import LinkBudget
from camho.process import ProcessConfig


def run(*argv):
    return cli.main([str(a) for a in argv])


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def read_json(path):
    return json.loads(Path(path).read_text())


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def crossing_trace(work):
    """Two-camera scene with pedestrian blockage, 120 epochs."""
    out = work / "crossing"
    assert run("synth", "--reference", "--epochs", 120, "--seed", 9,
               "--out", out) == 0
    return out


@pytest.fixture(scope="module")
def clean_scene_file(work):
    """One camera, no pedestrians, no jitter: BS 1 is always the best."""
    scene = scenario.SceneConfig(
        bs_positions=((6.0, 0.0), (0.0, 6.0)),
        sta_position=(0.0, 0.0),
        cameras=(scenario.CameraPose((0.8, -0.3), 0.0, math.radians(80.0)),),
        clear_sky_dbm=(-60.0, -65.0),
        budgets=(LinkBudget(40e6, -173.0),) * 2,
        num_epochs=60,
        seed=3,
    )
    path = work / "clean_scene.json"
    scenario.save_scene(scene, path)
    return path


@pytest.fixture(scope="module")
def clean_trace(work, clean_scene_file):
    out = work / "clean"
    assert run("synth", "--scene", clean_scene_file, "--out", out) == 0
    return out


@pytest.fixture(scope="module")
def trained_multi(work, crossing_trace):
    out = work / "train_multi"
    assert run("train", "--trace", crossing_trace, "--out", out,
               "--iterations", 2, "--seed", 5, "--tprime", 80) == 0
    return out


@pytest.fixture(scope="module")
def trained_single(work, crossing_trace):
    out = work / "train_single"
    assert run("train", "--trace", crossing_trace, "--out", out,
               "--iterations", 2, "--seed", 5, "--tprime", 80,
               "--cameras", "1") == 0
    return out


# -- argument handling ----------------------------------------------------------

def test_unknown_verb_is_an_input_error(capsys):
    assert run("frobnicate") == 2
    assert run() == 2


def test_unknown_flag_is_an_input_error():
    assert run("validate", "--trace", "x", "--bogus") == 2


def test_synth_needs_scene_or_reference(tmp_path, capsys):
    assert run("synth", "--out", tmp_path / "t") == 2
    assert "--scene" in capsys.readouterr().err


def test_malformed_scene_json(tmp_path, capsys):
    bad = tmp_path / "scene.json"
    bad.write_text('{"bs_positions": [[0, 0]]}')
    assert run("synth", "--scene", bad, "--out", tmp_path / "t") == 2
    assert "input error" in capsys.readouterr().err

    bad.write_text("{not json")
    assert run("synth", "--scene", bad, "--out", tmp_path / "t") == 2


# -- synth / validate -----------------------------------------------------------

def test_synth_layout_and_validate(crossing_trace, capsys):
    names = {p.name for p in Path(crossing_trace).iterdir()}
    assert {"manifest.json", "powers.csv", "camera_1.f32", "camera_2.f32",
            "run_manifest.json"} <= names
    assert run("validate", "--trace", crossing_trace) == 0
    assert "trace OK" in capsys.readouterr().out


def test_synth_is_reproducible_and_seed_sensitive(work):
    a, b, c = work / "rep_a", work / "rep_b", work / "rep_c"
    for out, seed in ((a, 1), (b, 1), (c, 2)):
        assert run("synth", "--reference", "--epochs", 40, "--seed", seed,
                   "--out", out) == 0
    assert cli._hash_path(a) == cli._hash_path(b)
    assert cli._hash_path(a) != cli._hash_path(c)


def test_validate_flags_corruption(work, clean_trace, capsys):
    import shutil

    broken = work / "broken"
    shutil.copytree(clean_trace, broken)
    raw = broken / "camera_1.f32"
    raw.write_bytes(raw.read_bytes()[:-8])
    assert run("validate", "--trace", broken) == 2
    assert "violation:" in capsys.readouterr().err


def test_validate_missing_directory():
    assert run("validate", "--trace", "/no/such/trace") == 2


# -- train ----------------------------------------------------------------------

def test_train_outputs(trained_multi):
    out = Path(trained_multi)
    assert (out / "checkpoint.npz").exists()
    rows = read_csv(out / "history.csv")
    assert list(rows[0].keys()) == ["iteration", "epsilon", "eval_avg_bps"]
    assert [int(r["iteration"]) for r in rows] == [0, 1]
    assert [float(r["epsilon"]) for r in rows] == [1.0, 0.99]
    manifest = read_json(out / "run_manifest.json")
    assert manifest["command"] == "train"
    assert manifest["seed"] == 5
    assert manifest["encoder_channels"] == 4  # two cameras x two frames
    assert manifest["config"]["iterations"] == 2
    assert "trace" in manifest["inputs"]
    best = manifest["best_iteration"]
    assert float(rows[best]["eval_avg_bps"]) == manifest["best_average_bps"]


def test_train_single_camera_halves_channels(trained_single):
    manifest = read_json(Path(trained_single) / "run_manifest.json")
    assert manifest["encoder_channels"] == 2
    assert manifest["config"]["cameras"] == [1]


def test_train_rerun_is_bit_identical(work, crossing_trace, trained_multi):
    out = work / "train_again"
    assert run("train", "--trace", crossing_trace, "--out", out,
               "--iterations", 2, "--seed", 5, "--tprime", 80) == 0
    first = (Path(trained_multi) / "checkpoint.npz").read_bytes()
    assert (out / "checkpoint.npz").read_bytes() == first


def test_train_rejects_unknown_config_key(work, crossing_trace, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"learning_rate_typo": 1}')
    assert run("train", "--trace", crossing_trace, "--out", tmp_path / "t",
               "--config", cfg, "--iterations", 1) == 2


def test_train_rejects_bad_split(crossing_trace, tmp_path):
    assert run("train", "--trace", crossing_trace, "--out", tmp_path / "t",
               "--iterations", 1, "--tprime", 0) == 2


# -- eval -----------------------------------------------------------------------

def test_eval_static_matches_library(work, clean_trace):
    out = work / "eval_static"
    assert run("eval", "--trace", clean_trace, "--baseline", "static-bs1",
               "--out", out) == 0
    tr = trace_store.load(clean_trace)
    pcfg = ProcessConfig(num_bs=2, num_cameras=1, disruption_time_ms=0)
    want = baselines.static_policy(tr.capacity_matrix(), pcfg, 1)
    summary = read_json(out / "summary.json")
    assert summary["average_bps"] == want.average_bps
    assert summary["method"] == "static-bs1"
    assert summary["handover_count"] == 0
    assert summary["num_steps"] == len(want.steps)


def test_eval_log_schema_and_recomputed_average(work, clean_trace):
    out = work / "eval_static"  # written by the previous test's command
    if not (out / "eval_log.csv").exists():
        assert run("eval", "--trace", clean_trace, "--baseline", "static-bs1",
                   "--out", out) == 0
    rows = read_csv(out / "eval_log.csv")
    assert list(rows[0].keys()) == ["t", "j", "c", "action", "reward_bps",
                                    "capacity_bs1_bps", "capacity_bs2_bps"]
    summary = read_json(out / "summary.json")
    rewards = np.array([float(r["reward_bps"]) for r in rows])
    assert abs(np.mean(rewards) - summary["average_bps"]) \
        <= 1e-9 * summary["average_bps"]
    # static on station 1 earns exactly the station-1 capacity column
    for r in rows:
        assert r["reward_bps"] == r["capacity_bs1_bps"]
        assert int(r["action"]) == 1 and int(r["c"]) == 0


def test_eval_window_restricts_epochs(work, clean_trace):
    out = work / "eval_window"
    assert run("eval", "--trace", clean_trace, "--baseline", "static-bs1",
               "--window", "20,60", "--out", out) == 0
    summary = read_json(out / "summary.json")
    assert summary["window"] == [20, 60]
    assert summary["num_steps"] == 38  # 40 epochs, first decision at t=1
    tr = trace_store.load(clean_trace).view(20, 60)
    pcfg = ProcessConfig(num_bs=2, num_cameras=1, disruption_time_ms=0)
    want = baselines.static_policy(tr.capacity_matrix(), pcfg, 1)
    assert summary["average_bps"] == want.average_bps


def test_eval_checkpoint_smoke(work, crossing_trace, trained_multi):
    out = work / "eval_ckpt"
    assert run("eval", "--trace", crossing_trace,
               "--checkpoint", Path(trained_multi) / "checkpoint.npz",
               "--tdis", 60, "--out", out) == 0
    summary = read_json(out / "summary.json")
    rows = read_csv(out / "eval_log.csv")
    assert summary["method"] == "checkpoint"
    assert summary["tdis_ms"] == 60
    assert len(rows) == summary["num_steps"] == 118
    actions = {int(r["action"]) for r in rows}
    assert actions <= {1, 2}
    for r in rows:  # disruption epochs never earn capacity
        if int(r["c"]) > 0:
            assert int(r["action"]) == int(r["j"])


def test_eval_tdis_changes_only_masked_epochs(work, crossing_trace,
                                              trained_multi):
    # one checkpoint, two disruption settings; each log must obey its own
    # masking rule and reproduce its own summary, nothing else may differ
    ckpt = Path(trained_multi) / "checkpoint.npz"
    logs = {}
    for tdis in (0, 60):
        out = work / f"eval_mask_{tdis}"
        assert run("eval", "--trace", crossing_trace, "--checkpoint", ckpt,
                   "--tdis", tdis, "--out", out) == 0
        rows = read_csv(out / "eval_log.csv")
        summary = read_json(out / "summary.json")
        rewards = np.array([float(r["reward_bps"]) for r in rows])
        assert abs(np.mean(rewards) - summary["average_bps"]) \
            <= 1e-9 * summary["average_bps"]
        logs[tdis] = rows

    def chosen_cap(row):
        return row[f"capacity_bs{int(row['action'])}_bps"]

    for r in logs[0]:
        assert int(r["c"]) == 0  # no disruption state ever entered
        assert r["reward_bps"] == chosen_cap(r)

    rows = logs[60]
    for here, after in zip(rows, rows[1:]):
        if int(after["c"]) > 0:
            assert float(here["reward_bps"]) == 0.0
        else:
            assert here["reward_bps"] == chosen_cap(here)
    last = rows[-1]
    if int(last["action"]) != int(last["j"]) or int(last["c"]) > 0:
        assert float(last["reward_bps"]) == 0.0
    else:
        assert last["reward_bps"] == chosen_cap(last)


def test_eval_checkpoint_trace_mismatch_is_exit_3(work, clean_trace,
                                                  trained_multi, capsys):
    out = work / "eval_mismatch"
    rc = run("eval", "--trace", clean_trace,
             "--checkpoint", Path(trained_multi) / "checkpoint.npz",
             "--out", out)
    assert rc == 3
    assert "compatibility error" in capsys.readouterr().err


def test_eval_needs_exactly_one_method(work, clean_trace, trained_multi):
    assert run("eval", "--trace", clean_trace, "--out", work / "x") == 2
    assert run("eval", "--trace", clean_trace, "--out", work / "x",
               "--baseline", "static-bs1",
               "--checkpoint", Path(trained_multi) / "checkpoint.npz") == 2


def test_eval_unknown_baseline(work, clean_trace, capsys):
    assert run("eval", "--trace", clean_trace, "--baseline", "psychic",
               "--out", work / "x") == 2
    assert "unknown baseline" in capsys.readouterr().err


def test_eval_bad_window(work, clean_trace):
    assert run("eval", "--trace", clean_trace, "--baseline", "static-bs1",
               "--window", "nope", "--out", work / "x") == 2


# -- oracle ---------------------------------------------------------------------

def test_oracle_log_and_summary(work, crossing_trace):
    out = work / "oracle_cross"
    assert run("oracle", "--trace", crossing_trace, "--tdis", 60,
               "--out", out) == 0
    rows = read_csv(out / "oracle_log.csv")
    assert list(rows[0].keys()) == ["t", "j", "c", "action", "reward_bps"]
    assert int(rows[0]["t"]) == 1 and int(rows[-1]["t"]) == 118
    summary = read_json(out / "summary.json")
    assert summary["num_steps"] == len(rows)
    rewards = np.array([float(r["reward_bps"]) for r in rows])
    assert abs(np.mean(rewards) - summary["average_bps"]) \
        <= 1e-9 * summary["average_bps"]
    hand = sum(1 for r in rows if r["action"] != r["j"])
    assert summary["handover_count"] == hand


def test_oracle_without_blockage_never_leaves_best_station(work, clean_trace):
    out_dp = work / "oracle_clean"
    out_static = work / "static_clean"
    assert run("oracle", "--trace", clean_trace, "--tdis", 120,
               "--out", out_dp) == 0
    assert run("eval", "--trace", clean_trace, "--baseline", "static-bs1",
               "--tdis", 120, "--out", out_static) == 0
    dp = read_json(out_dp / "summary.json")
    st = read_json(out_static / "summary.json")
    assert dp["handover_count"] == 0
    assert dp["average_bps"] == st["average_bps"]


# -- compare --------------------------------------------------------------------

@pytest.fixture(scope="module")
def compare_out(work, crossing_trace, trained_multi, trained_single):
    out = work / "compare"
    assert run("compare", "--trace", crossing_trace,
               "--checkpoint-multi", Path(trained_multi) / "checkpoint.npz",
               "--checkpoint-single", Path(trained_single) / "checkpoint.npz",
               "--out", out) == 0
    return out


def test_compare_report_structure(compare_out):
    report = read_json(compare_out / "report.json")
    assert report["tdis_ms"] == [0, 60, 120]
    methods = set(report["methods"])
    assert methods == {"multi-camera", "single-camera", "static-bs1",
                       "static-bs2", "reactive", "dp-oracle"}
    for m in methods:
        assert set(report["methods"][m]) == {"0", "60", "120"}


def test_compare_oracle_dominates_every_method(compare_out):
    report = read_json(compare_out / "report.json")
    for tdis in ("0", "60", "120"):
        oracle = report["methods"]["dp-oracle"][tdis]["average_bps"]
        for m, per_tdis in report["methods"].items():
            assert oracle + 1e-3 >= per_tdis[tdis]["average_bps"], (m, tdis)


def test_compare_csvs_reproduce_report_averages(compare_out):
    report = read_json(compare_out / "report.json")
    for m, per_tdis in report["methods"].items():
        for tdis, row in per_tdis.items():
            rows = read_csv(Path(compare_out) / row["csv"])
            rewards = np.array([float(r["reward_bps"]) for r in rows])
            assert abs(np.mean(rewards) - row["average_bps"]) \
                <= 1e-9 * max(row["average_bps"], 1.0)
            hand = sum(1 for r in rows if r["action"] != r["j"])
            assert row["handover_count"] == hand


def test_compare_reports_relative_improvement(compare_out):
    report = read_json(compare_out / "report.json")
    imp = report["relative_improvement_multi_vs_single"]
    assert set(imp) == {"0", "60", "120"}
    for tdis, value in imp.items():
        multi = report["methods"]["multi-camera"][tdis]["average_bps"]
        single = report["methods"]["single-camera"][tdis]["average_bps"]
        assert value == (multi - single) / single


def test_compare_without_checkpoints(work, clean_trace):
    out = work / "compare_baselines"
    assert run("compare", "--trace", clean_trace, "--tdis", "0,120",
               "--out", out) == 0
    report = read_json(out / "report.json")
    assert set(report["methods"]) == {"static-bs1", "static-bs2", "reactive",
                                      "dp-oracle"}
    assert report["relative_improvement_multi_vs_single"] == \
        {"0": None, "120": None}
    # blockage-free trace: nothing ever beats sitting on station 1
    for tdis in ("0", "120"):
        assert report["methods"]["dp-oracle"][tdis]["handover_count"] == 0
        assert report["methods"]["dp-oracle"][tdis]["average_bps"] == \
            report["methods"]["static-bs1"][tdis]["average_bps"]


def test_compare_bad_tdis_list(work, clean_trace):
    assert run("compare", "--trace", clean_trace, "--tdis", "sixty",
               "--out", work / "x") == 2


# -- manifests ------------------------------------------------------------------

def test_every_writing_command_leaves_a_manifest(crossing_trace, trained_multi,
                                                 compare_out, work):
    for out in (crossing_trace, trained_multi, compare_out,
                work / "eval_static", work / "oracle_cross"):
        manifest = read_json(Path(out) / "run_manifest.json")
        for key in ("command", "argv", "started", "finished", "config",
                    "inputs", "outputs"):
            assert key in manifest, (out, key)
        listed = set(manifest["outputs"])
        present = {p.name for p in Path(out).iterdir()} - {"run_manifest.json"}
        assert listed <= present


def test_validate_writes_nothing(clean_trace):
    before = sorted(p.name for p in Path(clean_trace).iterdir())
    assert run("validate", "--trace", clean_trace) == 0
    after = sorted(p.name for p in Path(clean_trace).iterdir())
    assert before == after
