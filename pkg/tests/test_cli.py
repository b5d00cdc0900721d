import json

import numpy as np
import pandas as pd
import pytest

from medlfdr import step_up_select
from medlfdr.cli import main

ALT_SCENARIO = {"kind": "case1", "n": 100, "m": 400, "tau": 1.5, "seed": 5,
                "pi_truth": "dense"}


def _write_csvs(tmp_path, n=40, m=6, seed=0, with_z=False):
    tmp_path.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    x = rng.normal(2, 0.75, n)
    m_mat = x[:, None] * 0.4 + rng.normal(size=(n, m))
    y_mat = m_mat * 0.5 + x[:, None] + rng.normal(size=(n, m))
    pd.DataFrame({"x": x}).to_csv(tmp_path / "exposure.csv", index=False)
    pd.DataFrame(m_mat, columns=[f"M{i}" for i in range(m)]) \
        .to_csv(tmp_path / "mediators.csv", index=False)
    pd.DataFrame(y_mat, columns=[f"Y{i}" for i in range(m)]) \
        .to_csv(tmp_path / "outcomes.csv", index=False)
    if with_z:
        pd.DataFrame({"z": rng.normal(size=n)}).to_csv(tmp_path / "confounders.csv",
                                                       index=False)
    return tmp_path


def _analyze_args(data_dir, out_dir, extra=()):
    return ["--mode", "analyze",
            "--exposure", str(data_dir / "exposure.csv"),
            "--mediators", str(data_dir / "mediators.csv"),
            "--outcomes", str(data_dir / "outcomes.csv"),
            "--out-dir", str(out_dir), "--no-figures", *extra]


def test_ingest_small_hand_written_csv(tmp_path):
    (tmp_path / "exposure.csv").write_text("x\n1.0\n2.0\n3.0\n4.0\n")
    (tmp_path / "mediators.csv").write_text("m1,m2\n1,2\n3,4\n5,6\n7,8\n")
    (tmp_path / "outcomes.csv").write_text("y1,y2\n0.5,1\n1.5,2\n2.5,3\n3.5,4\n")
    from medlfdr.cli import RunConfig, ingest
    config = RunConfig(mode="analyze", out_dir=tmp_path,
                       exposure=tmp_path / "exposure.csv",
                       mediators=tmp_path / "mediators.csv",
                       outcomes=tmp_path / "outcomes.csv", center=False)
    ds, names, manifest = ingest(config)
    np.testing.assert_array_equal(ds.x, [1, 2, 3, 4])
    np.testing.assert_array_equal(ds.m_mat, [[1, 2], [3, 4], [5, 6], [7, 8]])
    np.testing.assert_array_equal(ds.y_mat, [[0.5, 1], [1.5, 2], [2.5, 3], [3.5, 4]])
    assert names == ["y1", "y2"]
    assert manifest["rows_dropped_nan"] == 0


def test_ingest_prevalence_filter_drops_sparse_column(tmp_path):
    n = 20
    rng = np.random.default_rng(1)
    x = rng.normal(size=n) + 3
    m_mat = rng.normal(size=(n, 2))
    y = rng.uniform(1, 2, size=(n, 2))
    y[:, 1] = 0.0
    y[0, 1] = 5.0  # 5% nonzero prevalence
    pd.DataFrame({"x": x}).to_csv(tmp_path / "exposure.csv", index=False)
    pd.DataFrame(m_mat, columns=["m1", "m2"]).to_csv(tmp_path / "mediators.csv", index=False)
    pd.DataFrame(y, columns=["gene1", "gene2"]).to_csv(tmp_path / "outcomes.csv", index=False)
    from medlfdr.cli import RunConfig, ingest
    config = RunConfig(mode="analyze", out_dir=tmp_path,
                       exposure=tmp_path / "exposure.csv",
                       mediators=tmp_path / "mediators.csv",
                       outcomes=tmp_path / "outcomes.csv",
                       prevalence_filter=0.10)
    ds, names, manifest = ingest(config)
    assert names == ["gene1"]
    assert manifest["outcome_columns_dropped"] == ["gene2"]
    assert ds.m == 1


def test_ingest_clr_of_constant_row_is_zero(tmp_path):
    n = 4
    pd.DataFrame({"x": [1.0, 2.0, 3.0, 4.0]}).to_csv(tmp_path / "exposure.csv", index=False)
    pd.DataFrame(np.random.default_rng(2).normal(size=(n, 4)),
                 columns=list("abcd")).to_csv(tmp_path / "mediators.csv", index=False)
    pd.DataFrame(np.ones((n, 4)), columns=list("wxyz")) \
        .to_csv(tmp_path / "outcomes.csv", index=False)
    from medlfdr.cli import RunConfig, ingest
    config = RunConfig(mode="analyze", out_dir=tmp_path,
                       exposure=tmp_path / "exposure.csv",
                       mediators=tmp_path / "mediators.csv",
                       outcomes=tmp_path / "outcomes.csv",
                       pseudo_count=0.5, clr=True)
    ds, _, _ = ingest(config)
    np.testing.assert_allclose(ds.y_mat, 0.0, atol=1e-15)


def test_ingest_drops_nan_rows(tmp_path):
    _write_csvs(tmp_path, n=30, m=3)
    med = pd.read_csv(tmp_path / "mediators.csv")
    med.iloc[4, 1] = np.nan
    med.to_csv(tmp_path / "mediators.csv", index=False)
    from medlfdr.cli import RunConfig, ingest
    config = RunConfig(mode="analyze", out_dir=tmp_path,
                       exposure=tmp_path / "exposure.csv",
                       mediators=tmp_path / "mediators.csv",
                       outcomes=tmp_path / "outcomes.csv")
    ds, _, manifest = ingest(config)
    assert manifest["rows_dropped_nan"] == 1
    assert ds.n == 29


def test_simulate_then_analyze_round_trip(tmp_path):
    sim_dir = tmp_path / "sim"
    out_dir = tmp_path / "out"
    scenario = tmp_path / "scenario.json"
    scenario.write_text(json.dumps(ALT_SCENARIO))
    assert main(["--mode", "simulate", "--scenario-file", str(scenario),
                 "--out-dir", str(sim_dir), "--no-figures"]) == 0
    for name in ("exposure.csv", "mediators.csv", "outcomes.csv", "truth.csv",
                 "truth_model.json", "manifest.json"):
        assert (sim_dir / name).exists()

    assert main(_analyze_args(sim_dir, out_dir, ["--seed", "3"])) == 0
    table = pd.read_csv(out_dir / "hypotheses.csv")
    model = json.loads((out_dir / "model.json").read_text())
    assert len(table) == ALT_SCENARIO["m"]
    assert model["rejections"] == int(table["rejected"].sum())
    assert model["rejections"] > 0  # dense alternatives at tau = 1.5

    # stored lfdr values reproduce the same selection
    res = step_up_select(table["lfdr"].to_numpy(), 0.05)
    np.testing.assert_array_equal(res.rejected.astype(int), table["rejected"])
    assert res.cutoff == model["cutoff"]

    manifest = json.loads((out_dir / "manifest.json").read_text())
    assert manifest["resolved_seed"] == 3
    assert "alpha" in manifest["defaulted_options"]
    assert "seed" not in manifest["defaulted_options"]


def test_analyze_is_byte_identical_across_runs(tmp_path):
    data = _write_csvs(tmp_path / "data", n=50, m=8, seed=7)
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    assert main(_analyze_args(data, out1, ["--seed", "1"])) == 0
    assert main(_analyze_args(data, out2, ["--seed", "1"])) == 0
    assert (out1 / "hypotheses.csv").read_bytes() == (out2 / "hypotheses.csv").read_bytes()
    assert (out1 / "model.json").read_bytes() == (out2 / "model.json").read_bytes()


def test_permuted_exposure_kills_rejections(tmp_path):
    sim_dir = tmp_path / "sim"
    scenario = tmp_path / "scenario.json"
    scenario.write_text(json.dumps(ALT_SCENARIO))
    assert main(["--mode", "simulate", "--scenario-file", str(scenario),
                 "--out-dir", str(sim_dir), "--no-figures"]) == 0

    x = pd.read_csv(sim_dir / "exposure.csv")
    x["x"] = x["x"].sample(frac=1.0, random_state=99).to_numpy()
    x.to_csv(sim_dir / "exposure.csv", index=False)

    out_dir = tmp_path / "out"
    assert main(_analyze_args(sim_dir, out_dir)) == 0
    table = pd.read_csv(out_dir / "hypotheses.csv")
    assert table["rejected"].sum() <= 2


def test_evaluate_mode_writes_reports_and_figures(tmp_path):
    scenario = tmp_path / "scenario.json"
    scenario.write_text(json.dumps({"kind": "case1", "n": 60, "m": 150,
                                    "tau": 1.5, "seed": 9, "pi_truth": "dense"}))
    out_dir = tmp_path / "out"
    assert main(["--mode", "evaluate", "--scenario-file", str(scenario),
                 "--reps", "5", "--jobs", "2", "--out-dir", str(out_dir)]) == 0
    study = json.loads((out_dir / "study.json").read_text())
    assert len(study["replicates"]) == 5
    assert "fdr" in study["summary"]
    grid = pd.read_csv(out_dir / "fdr_power.tsv", sep="\t")
    assert {"alpha", "fdr", "fdr_se", "power", "power_se"} <= set(grid.columns)
    assert (out_dir / "fdr_power.png").exists()


def test_evaluate_mode_deterministic_across_jobs(tmp_path):
    scenario = tmp_path / "scenario.json"
    scenario.write_text(json.dumps({"kind": "case1", "n": 60, "m": 120,
                                    "tau": 1.2, "seed": 4}))
    outs = []
    for jobs, name in ((1, "a"), (2, "b")):
        out_dir = tmp_path / name
        assert main(["--mode", "evaluate", "--scenario-file", str(scenario),
                     "--reps", "4", "--jobs", str(jobs),
                     "--out-dir", str(out_dir), "--no-figures"]) == 0
        outs.append((out_dir / "study.json").read_bytes())
        outs.append((out_dir / "fdr_power.tsv").read_bytes())
    assert outs[0] == outs[2]
    assert outs[1] == outs[3]


def test_exit_codes(tmp_path):
    out = tmp_path / "o"
    # missing input file -> data error
    assert main(["--mode", "analyze", "--exposure", str(tmp_path / "nope.csv"),
                 "--mediators", str(tmp_path / "nope.csv"),
                 "--outcomes", str(tmp_path / "nope.csv"),
                 "--out-dir", str(out)]) == 3
    # bad alpha -> config error
    data = _write_csvs(tmp_path / "d", n=30, m=3)
    assert main(_analyze_args(data, out, ["--alpha", "1.5"])) == 2
    # conflicting EM options -> config error
    assert main(_analyze_args(data, out, ["--two-step", "off", "--d1", "2"])) == 2
    # EM starved of hypotheses -> numeric failure
    scenario = tmp_path / "s.json"
    scenario.write_text(json.dumps({"kind": "case1", "n": 30, "m": 3,
                                    "tau": 1.0, "seed": 1}))
    assert main(["--mode", "evaluate", "--scenario-file", str(scenario),
                 "--reps", "2", "--out-dir", str(out), "--no-figures"]) == 4
