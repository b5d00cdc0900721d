"""Batch front-end: CSV in, CSV/TSV + JSON + figures out.

Three modes share one flag surface:

    analyze    fit real (or previously simulated) data and screen mediators
    simulate   write one labeled synthetic data set
    evaluate   run a replicate study for a scenario and report FDR/power

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.  Every run writes a manifest recording the resolved seed and all
defaulted options.
"""

import argparse
import json
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .errors import ConfigError, DataError, NumericError
from .evaluate import replicate_study, score
from .mixture import EmConfig, GeneralMixtureModel, MixtureModel, fit_model
from .regression import Dataset, fit_binary, fit_interaction, fit_linear
from .report import (render_analysis_figure, render_fdr_power_figure,
                     write_fdr_power_table)
from .screening import compute_lfdr, step_up_select
from .simulate import LABEL_NAMES, SimScenario, generate

DEFAULT_ALPHA_GRID = [round(0.01 * k, 2) for k in range(1, 21)]


@dataclass
class RunConfig:
    """Resolved options for one invocation; serialized into the manifest."""

    mode: str
    out_dir: Path
    alpha: float = 0.05
    seed: int = 0
    exposure: Path | None = None
    mediators: Path | None = None
    outcomes: Path | None = None
    confounders: Path | None = None
    outcome_model: str = "auto"
    d1: int = 1
    d2: int = 1
    two_step: str = "auto"
    em_tol: float = 1e-8
    em_max_iter: int = 500
    restarts: int = 3
    prevalence_filter: float | None = None
    pseudo_count: float | None = None
    clr: bool = False
    center: bool = True
    scenario_file: Path | None = None
    reps: int = 100
    jobs: int = 1
    figures: bool = True
    defaulted: list = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie strictly between 0 and 1")
        if self.prevalence_filter is not None and not 0.0 <= self.prevalence_filter <= 1.0:
            raise ConfigError("prevalence filter threshold must lie in [0, 1]")
        if self.d1 < 1 or self.d2 < 1:
            raise ConfigError("d1 and d2 must be at least 1")
        if self.two_step not in ("auto", "on", "off"):
            raise ConfigError("two_step must be auto, on or off")
        if self.two_step == "off" and (self.d1 != 1 or self.d2 != 1):
            raise ConfigError("the standard EM supports only d1=1, d2=1; "
                              "drop --two-step off or the d1/d2 overrides")

    @property
    def two_step_flag(self) -> bool | None:
        return {"auto": None, "on": True, "off": False}[self.two_step]

    def em_config(self) -> EmConfig:
        return EmConfig(tol=self.em_tol, max_iter=self.em_max_iter,
                        restarts=self.restarts, seed=self.seed)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="medlfdr",
        description="Screen large-scale mediation hypotheses with joint local FDRs.")
    p.add_argument("--mode", required=True, choices=("analyze", "simulate", "evaluate"))
    p.add_argument("--exposure", type=Path, help="CSV with the exposure column")
    p.add_argument("--mediators", type=Path, help="CSV, one column per mediator")
    p.add_argument("--outcomes", type=Path, help="CSV, one column per outcome")
    p.add_argument("--confounders", type=Path, help="optional CSV of confounders")
    p.add_argument("--alpha", type=float, default=None, help="target FDR level (default 0.05)")
    p.add_argument("--seed", type=int, default=None, help="root seed (default 0)")
    p.add_argument("--d1", type=int, default=None, help="alternative components for a")
    p.add_argument("--d2", type=int, default=None, help="alternative components for b")
    p.add_argument("--two-step", choices=("auto", "on", "off"), default=None,
                   help="override the mixture-fit route")
    p.add_argument("--outcome-model", choices=("auto", "linear", "logistic", "interaction"),
                   default=None, help="outcome equation for analyze mode")
    p.add_argument("--prevalence-filter", type=float, nargs="?", const=0.10, default=None,
                   metavar="T", help="drop outcome columns with nonzero prevalence < T")
    p.add_argument("--pseudo-count", type=float, nargs="?", const=0.5, default=None,
                   metavar="C", help="add C to every outcome entry before transforms")
    p.add_argument("--clr", action="store_true",
                   help="centered log-ratio transform of each outcome row")
    p.add_argument("--no-center", action="store_true",
                   help="keep raw column means; the structural model has no "
                        "intercept, so uncentered inputs shift the estimates")
    p.add_argument("--scenario-file", type=Path, help="JSON scenario for simulate/evaluate")
    p.add_argument("--reps", type=int, default=None, help="replicates for evaluate mode")
    p.add_argument("--jobs", type=int, default=None, help="parallel workers for evaluate")
    p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    p.add_argument("--out-dir", type=Path, required=True)
    return p


def _resolve_config(args) -> RunConfig:
    defaults = {"alpha": 0.05, "seed": 0, "d1": 1, "d2": 1, "two_step": "auto",
                "outcome_model": "auto", "reps": 100, "jobs": 1}
    defaulted = []
    values = {}
    for name, default in defaults.items():
        given = getattr(args, name)
        if given is None:
            values[name] = default
            defaulted.append(name)
        else:
            values[name] = given
    return RunConfig(
        mode=args.mode, out_dir=args.out_dir,
        exposure=args.exposure, mediators=args.mediators, outcomes=args.outcomes,
        confounders=args.confounders,
        prevalence_filter=args.prevalence_filter,
        pseudo_count=args.pseudo_count, clr=args.clr,
        center=not args.no_center,
        scenario_file=args.scenario_file,
        figures=not args.no_figures,
        defaulted=defaulted,
        **values,
    )


def _read_csv(path: Path, what: str) -> pd.DataFrame:
    if path is None:
        raise ConfigError(f"--{what} is required in analyze mode")
    if not path.exists():
        raise DataError(f"{what} file not found: {path}")
    frame = pd.read_csv(path)
    if frame.shape[0] == 0:
        raise DataError(f"{what} file {path} is empty")
    bad = [c for c in frame.columns if not pd.api.types.is_numeric_dtype(frame[c])]
    if bad:
        raise DataError(f"non-numeric cells in {what} columns {bad}")
    return frame


def ingest(config: RunConfig):
    """Load and preprocess the CSV inputs for analyze mode.

    Returns (Dataset, hypothesis names, manifest dict).  Preprocessing, in
    order: drop rows containing NaN anywhere, drop low-prevalence outcome
    columns (and their paired mediators), add the pseudo-count, apply the
    per-row centered log-ratio transform.
    """
    exposure = _read_csv(config.exposure, "exposure")
    mediators = _read_csv(config.mediators, "mediators")
    outcomes = _read_csv(config.outcomes, "outcomes")
    confounders = _read_csv(config.confounders, "confounders") \
        if config.confounders else None

    n = len(exposure)
    for what, frame in (("mediators", mediators), ("outcomes", outcomes),
                        ("confounders", confounders)):
        if frame is not None and len(frame) != n:
            raise DataError(f"{what} row count {len(frame)} != exposure rows {n}")
    if mediators.shape[1] != outcomes.shape[1]:
        raise DataError("mediators and outcomes must have one column per hypothesis")

    blocks = [exposure, mediators, outcomes] + ([confounders] if confounders is not None else [])
    nan_mask = np.zeros(n, dtype=bool)
    for frame in blocks:
        nan_mask |= frame.isna().any(axis=1).to_numpy()
    kept_rows = ~nan_mask
    if kept_rows.sum() < 3:
        raise DataError("fewer than 3 complete rows after NaN removal")

    x = exposure.iloc[:, 0].to_numpy(float)[kept_rows]
    m_mat = mediators.to_numpy(float)[kept_rows]
    y_mat = outcomes.to_numpy(float)[kept_rows]
    z_mat = confounders.to_numpy(float)[kept_rows] if confounders is not None else None

    names = list(outcomes.columns)
    dropped = []
    if config.prevalence_filter is not None:
        prevalence = (y_mat != 0).mean(axis=0)
        keep = prevalence >= config.prevalence_filter
        dropped = [names[j] for j in np.flatnonzero(~keep)]
        y_mat = y_mat[:, keep]
        m_mat = m_mat[:, keep]
        names = [names[j] for j in np.flatnonzero(keep)]
        if y_mat.shape[1] == 0:
            raise DataError("prevalence filter removed every outcome column")
    if config.pseudo_count is not None:
        y_mat = y_mat + config.pseudo_count
    if config.clr:
        if np.any(y_mat <= 0):
            raise DataError("centered log-ratio needs positive outcomes; "
                            "consider --pseudo-count")
        logs = np.log(y_mat)
        y_mat = logs - logs.mean(axis=1, keepdims=True)

    binary = bool(np.isin(y_mat, (0.0, 1.0)).all())
    kind = {"auto": "binary" if binary else "continuous",
            "linear": "continuous", "logistic": "binary",
            "interaction": "continuous"}[config.outcome_model]
    if config.outcome_model == "logistic" and not binary:
        raise DataError("logistic outcome model requires 0/1 outcomes")
    if config.center:
        # the structural model carries no intercept; centering absorbs the
        # column means so null exposures stay null under permutation
        x = x - x.mean()
        m_mat = m_mat - m_mat.mean(axis=0, keepdims=True)
        if kind == "continuous":
            y_mat = y_mat - y_mat.mean(axis=0, keepdims=True)
        if z_mat is not None:
            z_mat = z_mat - z_mat.mean(axis=0, keepdims=True)
    ds = Dataset(x=x, m_mat=m_mat, y_mat=y_mat, z_mat=z_mat, outcome_kind=kind)
    manifest = {
        "rows_total": int(n),
        "rows_dropped_nan": int(nan_mask.sum()),
        "hypotheses_kept": names,
        "outcome_columns_dropped": dropped,
        "prevalence_filter": config.prevalence_filter,
        "pseudo_count": config.pseudo_count,
        "clr": config.clr,
        "centered": config.center,
        "outcome_kind": kind,
    }
    return ds, names, manifest


def _model_to_dict(model) -> dict:
    if isinstance(model, MixtureModel):
        return {"type": "standard", "pi": model.pi.tolist(), "mu": model.mu,
                "theta": model.theta, "kappa": model.kappa, "psi": model.psi}
    return {"type": "general", "pi_joint": model.pi_joint.tolist(),
            "mus": model.mus.tolist(), "thetas": model.thetas.tolist(),
            "kappas": model.kappas.tolist(), "psis": model.psis.tolist(),
            "class_probs": model.class_probs()}


def _write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _manifest(config: RunConfig, extra: dict, started: float) -> dict:
    cfg = asdict(config)
    for key, value in cfg.items():
        if isinstance(value, Path):
            cfg[key] = str(value)
    return {
        "version": __version__,
        "numpy_version": np.__version__,
        "resolved_seed": config.seed,
        "defaulted_options": sorted(config.defaulted),
        "config": cfg,
        "elapsed_seconds": round(time.time() - started, 3),
        **extra,
    }


def _load_scenario(config: RunConfig) -> SimScenario:
    if config.scenario_file is None:
        raise ConfigError("--scenario-file is required in this mode")
    if not config.scenario_file.exists():
        raise DataError(f"scenario file not found: {config.scenario_file}")
    spec = json.loads(config.scenario_file.read_text())
    if "seed" not in spec or "seed" not in config.defaulted:
        spec["seed"] = config.seed
    try:
        return SimScenario(**spec)
    except TypeError as exc:
        raise ConfigError(f"bad scenario file: {exc}") from None


def _run_analyze(config: RunConfig) -> dict:
    ds, names, ingest_manifest = ingest(config)
    fitter = {"continuous": fit_linear, "binary": fit_binary}[ds.outcome_kind]
    if config.outcome_model == "interaction":
        fitter = fit_interaction
    stats = fitter(ds)
    valid = stats.valid()
    model, trace = fit_model(valid, d1=config.d1, d2=config.d2,
                             two_step=config.two_step_flag, config=config.em_config())
    scores = compute_lfdr(stats, model)
    result = step_up_select(scores, config.alpha)

    flag_by_index = {f.index: f.code for f in stats.flags}
    root_n = np.sqrt(stats.n)
    table = pd.DataFrame({
        "id": names,
        "alpha_hat": stats.a / root_n,
        "beta_hat": stats.b / root_n,
        "a": stats.a,
        "b": stats.b,
        "var1": stats.var1,
        "var2": stats.var2,
        "lfdr": scores.scores,
        "rejected": result.rejected.astype(int),
        "flag": [flag_by_index.get(i, "") for i in range(stats.m)],
    })
    out = config.out_dir
    table.to_csv(out / "hypotheses.csv", index=False)
    _write_json({"model": _model_to_dict(model),
                 "converged": bool(trace.converged),
                 "loglik": float(trace.loglik[-1]),
                 "cutoff": result.cutoff,
                 "rejections": int(result.k),
                 "alpha": config.alpha}, out / "model.json")
    if config.figures:
        render_analysis_figure(table, result.cutoff, out / "analysis.png")
    return {"ingest": ingest_manifest, "rejections": int(result.k)}


def _run_simulate(config: RunConfig) -> dict:
    sc = _load_scenario(config)
    config.seed = sc.seed
    lds = generate(sc)
    out = config.out_dir
    m = lds.data.m
    cols = [f"M{i + 1}" for i in range(m)]
    pd.DataFrame({"x": lds.data.x}).to_csv(out / "exposure.csv", index=False)
    pd.DataFrame(lds.data.m_mat, columns=cols).to_csv(out / "mediators.csv", index=False)
    pd.DataFrame(lds.data.y_mat, columns=[f"Y{i + 1}" for i in range(m)]) \
        .to_csv(out / "outcomes.csv", index=False)
    if lds.data.z_mat is not None:
        pd.DataFrame(lds.data.z_mat,
                     columns=[f"Z{j + 1}" for j in range(lds.data.z_mat.shape[1])]) \
            .to_csv(out / "confounders.csv", index=False)
    pd.DataFrame({
        "hypothesis": [f"Y{i + 1}" for i in range(m)],
        "label": [LABEL_NAMES[int(l)] for l in lds.labels],
        "true_alpha": lds.true_alpha,
        "true_beta": lds.true_beta,
    }).to_csv(out / "truth.csv", index=False)
    _write_json(_model_to_dict(lds.truth_model), out / "truth_model.json")
    return {"scenario": _scenario_dict(sc), "m": m, "n": lds.data.n}


def _scenario_dict(sc: SimScenario) -> dict:
    pi = sc.pi_truth.tolist() if isinstance(sc.pi_truth, np.ndarray) else sc.pi_truth
    return {"kind": sc.kind, "n": sc.n, "m": sc.m, "tau": sc.tau,
            "seed": sc.seed, "pi_truth": pi, "hyper": sc.hyper}


def _run_evaluate(config: RunConfig) -> dict:
    sc = _load_scenario(config)
    config.seed = sc.seed
    grid = sorted(set(DEFAULT_ALPHA_GRID) | {config.alpha})
    study = replicate_study(sc, reps=config.reps, alpha=config.alpha,
                            d1=config.d1, d2=config.d2,
                            two_step=config.two_step_flag,
                            em=config.em_config(), alpha_grid=grid,
                            n_jobs=config.jobs)
    out = config.out_dir
    summary = study.summary()
    _write_json({"scenario": _scenario_dict(sc), "alpha": config.alpha,
                 "reps": config.reps, "summary": summary,
                 "replicates": [
                     {"seed": r.seed, "fdp": r.fdp, "power": r.power,
                      "rejections": r.r, "oracle_fdp": o.fdp, "oracle_power": o.power,
                      "amle_ratio": ratio}
                     for r, o, ratio in zip(study.adaptive, study.oracle,
                                            study.amle_ratios)],
                 "failures": study.failures},
                out / "study.json")
    write_fdr_power_table(study, out / "fdr_power.tsv")
    if config.figures:
        render_fdr_power_figure(study, out / "fdr_power.png")
    return {"scenario": _scenario_dict(sc), "summary": summary}


def run(config: RunConfig) -> int:
    """Execute one mode; returns the process exit code."""
    started = time.time()
    config.out_dir.mkdir(parents=True, exist_ok=True)
    try:
        extra = {"analyze": _run_analyze, "simulate": _run_simulate,
                 "evaluate": _run_evaluate}[config.mode](config)
    except ConfigError as exc:
        print(f"medlfdr: configuration error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"medlfdr: data error: {exc}", file=sys.stderr)
        return 3
    except (NumericError, np.linalg.LinAlgError) as exc:
        print(f"medlfdr: numerical failure: {exc}", file=sys.stderr)
        return 4
    _write_json(_manifest(config, extra or {}, started), config.out_dir / "manifest.json")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _resolve_config(args)
    except ConfigError as exc:
        print(f"medlfdr: configuration error: {exc}", file=sys.stderr)
        return 2
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
