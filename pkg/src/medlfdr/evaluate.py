"""Scoring against ground truth and Monte Carlo verification studies.

``replicate_study`` drives the full pipeline (generate, fit, mixture,
scores, selection) across independent replicates and aggregates empirical
FDR and power with their Monte Carlo standard errors.  Replicates receive
sub-seeds derived from the scenario seed, so results are identical whether
they run serially or across workers.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed

from .errors import NumericError
from .mixture import EmConfig, amle_ratio, fit_model
from .regression import CoefStats, fit_for_kind
from .screening import ScreeningResult, compute_lfdr, oracle_select, step_up_select
from .simulate import H11, SimScenario, generate, sample_stats

# fraction of replicates allowed to fail before the whole study does
MAX_FAILURE_RATE = 0.05


@dataclass(frozen=True)
class EvalReport:
    """Realized error/power bookkeeping for one selection outcome.

    counts: v = false rejections, r = rejections, p = missed alternatives;
    w_stat is the summed score mass over the rejected set and q_tilde the
    realized false discovery proportion v / max(r, 1).
    """

    fdp: float
    power: float
    v: int
    r: int
    p: int
    w_stat: float
    q_tilde: float
    alpha: float
    seed: int | None = None
    scenario: str | None = None

    def __post_init__(self):
        if not (0.0 <= self.fdp <= 1.0 and 0.0 <= self.power <= 1.0):
            raise ValueError("fdp and power must lie in [0, 1]")
        if self.v > self.r:
            raise ValueError("false rejections cannot exceed rejections")


def score(result: ScreeningResult, truth_labels, alpha: float | None = None,
          seed: int | None = None, scenario: str | None = None) -> EvalReport:
    """Count V, R, P and derive fdp / power / W for one selection."""
    labels = np.asarray(truth_labels)
    rejected = result.rejected
    if labels.shape[0] != rejected.shape[0]:
        raise ValueError("labels and rejections disagree on length")
    is_alt = labels == H11
    r = int(rejected.sum())
    v = int((rejected & ~is_alt).sum())
    p = int((is_alt & ~rejected).sum())
    n_alt = int(is_alt.sum())
    fdp = v / max(r, 1)
    power = (r - v) / n_alt if n_alt else 0.0
    w_stat = float(result.k * result.fdr_path[result.k - 1]) if result.k else 0.0
    return EvalReport(fdp=fdp, power=power, v=v, r=r, p=p, w_stat=w_stat,
                      q_tilde=fdp, alpha=alpha if alpha is not None else result.alpha,
                      seed=seed, scenario=scenario)


@dataclass
class StudyReport:
    """Aggregate of a replicate study; per-replicate records retained."""

    scenario: SimScenario
    alpha: float
    reps: int
    adaptive: list = field(default_factory=list)
    oracle: list = field(default_factory=list)
    amle_ratios: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    alpha_grid: np.ndarray | None = None
    grid_fdp: np.ndarray | None = None    # (reps, len(grid)) adaptive fdp
    grid_power: np.ndarray | None = None

    @staticmethod
    def _mean_se(values):
        arr = np.asarray(values, dtype=float)
        if arr.size == 0:
            return float("nan"), float("nan")
        se = arr.std(ddof=1) / np.sqrt(arr.size) if arr.size > 1 else 0.0
        return float(arr.mean()), float(se)

    def summary(self) -> dict:
        fdr, fdr_se = self._mean_se([r.fdp for r in self.adaptive])
        power, power_se = self._mean_se([r.power for r in self.adaptive])
        ofdr, ofdr_se = self._mean_se([r.fdp for r in self.oracle])
        opower, opower_se = self._mean_se([r.power for r in self.oracle])
        ratios = np.asarray(self.amle_ratios, dtype=float)
        out = {
            "fdr": fdr, "fdr_se": fdr_se,
            "power": power, "power_se": power_se,
            "oracle_fdr": ofdr, "oracle_fdr_se": ofdr_se,
            "oracle_power": opower, "oracle_power_se": opower_se,
            "amle_nonneg_prop": float((ratios >= 0).mean()) if ratios.size else float("nan"),
            "median_rejections": float(np.median([r.r for r in self.adaptive]))
            if self.adaptive else float("nan"),
            "n_completed": len(self.adaptive),
            "n_failed": len(self.failures),
        }
        return out

    def grid_summary(self):
        """Mean fdp/power per alpha-grid value, with standard errors."""
        if self.alpha_grid is None:
            return None
        rows = []
        for j, a in enumerate(self.alpha_grid):
            f_mean, f_se = self._mean_se(self.grid_fdp[:, j])
            p_mean, p_se = self._mean_se(self.grid_power[:, j])
            rows.append({"alpha": float(a), "fdr": f_mean, "fdr_se": f_se,
                         "power": p_mean, "power_se": p_se})
        return rows


def _replicate_seeds(seed: int, reps: int) -> list[int]:
    return [int(child.generate_state(1)[0])
            for child in np.random.SeedSequence(seed).spawn(reps)]


def run_pipeline(sc: SimScenario, alpha: float, d1: int = 1, d2: int = 1,
                 two_step: bool | None = None, em: EmConfig = EmConfig()):
    """One full generate-fit-screen pass; returns the intermediate objects."""
    lds = generate(sc)
    stats = fit_for_kind(lds.data, sc.kind)
    model, trace = fit_model(stats.valid(), d1=d1, d2=d2, two_step=two_step, config=em)
    scores = compute_lfdr(stats, model)
    result = step_up_select(scores, alpha)
    return lds, stats, model, trace, scores, result


def _one_replicate(sc: SimScenario, rep_seed: int, alpha: float, d1, d2,
                   two_step, em: EmConfig, alpha_grid):
    sc_r = replace(sc, seed=rep_seed, hyper=dict(sc.hyper),
                   pi_truth=sc.pi_truth)
    em_r = replace(em, seed=rep_seed + 1)
    lds, stats, model, trace, scores, result = run_pipeline(
        sc_r, alpha, d1=d1, d2=d2, two_step=two_step, em=em_r)
    adaptive = score(result, lds.labels, seed=rep_seed, scenario=sc.kind)
    oracle_res = oracle_select(stats, lds.truth_model, alpha)
    oracle = score(oracle_res, lds.labels, seed=rep_seed, scenario=sc.kind)
    ratio = amle_ratio(stats.valid(), model, lds.truth_model)
    grid_fdp = grid_power = None
    if alpha_grid is not None:
        grid_fdp = np.empty(len(alpha_grid))
        grid_power = np.empty(len(alpha_grid))
        for j, a in enumerate(alpha_grid):
            rep = score(step_up_select(scores, float(a)), lds.labels)
            grid_fdp[j] = rep.fdp
            grid_power[j] = rep.power
    return adaptive, oracle, ratio, grid_fdp, grid_power


def replicate_study(sc: SimScenario, reps: int, alpha: float, *,
                    d1: int = 1, d2: int = 1, two_step: bool | None = None,
                    em: EmConfig = EmConfig(), alpha_grid=None,
                    n_jobs: int = 1) -> StudyReport:
    """Run the pipeline over independent replicates and aggregate.

    Per-replicate failures are recorded and excluded; the study aborts when
    more than 5% of replicates fail.  Same scenario seed implies an
    identical report for any ``n_jobs``.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    seeds = _replicate_seeds(sc.seed, reps)
    if alpha_grid is not None:
        alpha_grid = np.asarray(alpha_grid, dtype=float)

    def job(rep_seed):
        try:
            return rep_seed, _one_replicate(sc, rep_seed, alpha, d1, d2,
                                            two_step, em, alpha_grid), None
        except Exception as exc:  # noqa: BLE001 - recorded, capped below
            return rep_seed, None, f"{type(exc).__name__}: {exc}"

    if n_jobs == 1:
        outcomes = [job(s) for s in seeds]
    else:
        outcomes = Parallel(n_jobs=n_jobs)(delayed(job)(s) for s in seeds)

    report = StudyReport(scenario=sc, alpha=alpha, reps=reps)
    grid_fdp_rows, grid_power_rows = [], []
    for rep_seed, payload, err in outcomes:
        if err is not None:
            report.failures.append({"seed": rep_seed, "error": err})
            continue
        adaptive, oracle, ratio, gf, gp = payload
        report.adaptive.append(adaptive)
        report.oracle.append(oracle)
        report.amle_ratios.append(ratio)
        if alpha_grid is not None:
            grid_fdp_rows.append(gf)
            grid_power_rows.append(gp)
    if len(report.failures) > MAX_FAILURE_RATE * reps:
        raise NumericError(
            f"{len(report.failures)} of {reps} replicates failed: "
            f"{report.failures[0]['error']}")
    if alpha_grid is not None:
        report.alpha_grid = alpha_grid
        report.grid_fdp = np.vstack(grid_fdp_rows) if grid_fdp_rows else np.empty((0, len(alpha_grid)))
        report.grid_power = np.vstack(grid_power_rows) if grid_power_rows else np.empty((0, len(alpha_grid)))
    return report


@dataclass(frozen=True)
class WCheck:
    """Two independent Monte Carlo estimates of the same selection mass."""

    lhs: float
    rhs: float
    z_score: float
    lhs_se: float
    rhs_se: float


def w_unbiasedness_check(model, var1, var2, delta: float, reps: int,
                         seed: int = 0) -> WCheck:
    """Check the score-mass identity behind the selection estimator.

    The mean of (1/m) * sum of scores over {score <= delta}, with data drawn
    from the full model, must match the null-weighted mixture of conditional
    CDFs P(score <= delta | component), each estimated from its own stream.
    Returns both estimates and the z-score of their difference.
    """
    var1 = np.asarray(var1, dtype=float)
    var2 = np.asarray(var2, dtype=float)
    m = var1.shape[0]
    gen = model.to_general() if hasattr(model, "to_general") else model
    root = np.random.SeedSequence(seed)
    ss_lhs, ss_rhs = root.spawn(2)

    lhs_vals = np.empty(reps)
    for r, child in enumerate(ss_lhs.spawn(reps)):
        stats, _ = sample_stats(model, var1, var2,
                                seed=int(child.generate_state(1)[0]))
        s = compute_lfdr(stats, model).scores
        lhs_vals[r] = np.sum(s[s <= delta]) / m

    # null components: (u, v) with u == 0 or v == 0, weighted by pi_uv
    rng = np.random.default_rng(ss_rhs)
    rhs_vals = np.zeros(reps)
    for u in range(gen.d1 + 1):
        for v in range(gen.d2 + 1):
            if u > 0 and v > 0:
                continue
            weight = gen.pi_joint[u, v]
            for r in range(reps):
                a = rng.normal(gen.mus[u], np.sqrt(var1 + gen.kappas[u]))
                b = rng.normal(gen.thetas[v], np.sqrt(var2 + gen.psis[v]))
                stats = CoefStats(a=a, b=b, var1=var1, var2=var2, n=1)
                s = compute_lfdr(stats, model).scores
                rhs_vals[r] += weight * np.mean(s <= delta)

    lhs, lhs_se = StudyReport._mean_se(lhs_vals)
    rhs, rhs_se = StudyReport._mean_se(rhs_vals)
    denom = np.hypot(lhs_se, rhs_se)
    z = (lhs - rhs) / denom if denom > 0 else 0.0
    return WCheck(lhs=lhs, rhs=rhs, z_score=float(z), lhs_se=lhs_se, rhs_se=rhs_se)


