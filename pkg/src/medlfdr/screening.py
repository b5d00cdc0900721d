"""Joint local FDR scores and the step-up selection rule.

The score of hypothesis i is the posterior probability that it belongs to
the composite null (any component with u = 0 or v = 0), evaluated at
(a_i, b_i) with its own plug-in variances.  Densities are combined in log
space, so scores stay accurate far into the tails where the stored density
columns may underflow to zero.

Selection sorts the scores ascending and rejects the longest prefix whose
running mean stays at or below the target level; that is equivalent to
thresholding at the supremum cutoff of the estimated marginal FDR curve.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .mixture import log_component_matrix, null_component_mask
from .regression import CoefStats


@dataclass(frozen=True)
class LfdrScores:
    """Per-hypothesis local FDR values and the densities behind them.

    ``flagged`` marks hypotheses whose score was forced to 1, either because
    the fit stage excluded them or because the total density vanished; the
    density columns underflow gracefully to 0 for extreme statistics while
    ``scores`` remains exact.
    """

    scores: np.ndarray
    null_density_mass: np.ndarray
    total_density: np.ndarray
    flagged: np.ndarray

    @property
    def m(self) -> int:
        return self.scores.shape[0]


@dataclass(frozen=True)
class ScreeningResult:
    """Outcome of the step-up rule at a target level.

    ``cutoff`` is the k-th smallest score (0 when nothing is rejected),
    ``fdr_path`` the running mean of the sorted scores at every rank.
    """

    cutoff: float
    rejected: np.ndarray
    k: int
    fdr_path: np.ndarray
    alpha: float


def compute_lfdr(stats: CoefStats, model) -> LfdrScores:
    """Posterior composite-null probability at every hypothesis.

    Works for both the standard and the general model; for the latter the
    null mass sums every component with u = 0 or v = 0.
    """
    ok = stats.ok
    m = stats.m
    scores = np.ones(m)
    null_mass = np.zeros(m)
    total = np.zeros(m)

    sub = stats.valid()
    if sub.m > 0:
        logn = log_component_matrix(sub, model)
        null_mask = null_component_mask(model)
        with np.errstate(invalid="ignore"):
            lse_all = logsumexp(logn, axis=1)
            lse_null = logsumexp(logn[:, null_mask], axis=1)
        good = np.isfinite(lse_all)
        sub_scores = np.ones(sub.m)
        sub_scores[good] = np.exp(np.minimum(lse_null[good] - lse_all[good], 0.0))
        scores[ok] = sub_scores
        null_mass[ok] = np.exp(lse_null)
        total[ok] = np.exp(lse_all)
        sub_flagged = ~good
    else:
        sub_flagged = np.zeros(0, dtype=bool)

    flagged = ~ok
    flagged[ok] |= sub_flagged
    return LfdrScores(scores=scores, null_density_mass=null_mass,
                      total_density=total, flagged=flagged)


def _score_vector(scores) -> np.ndarray:
    if isinstance(scores, LfdrScores):
        return scores.scores
    return np.asarray(scores, dtype=float)


def step_up_select(scores, alpha: float, tie_break: str = "index",
                   seed: int | None = None) -> ScreeningResult:
    """Reject the longest ascending prefix whose mean score stays <= alpha.

    Parameters
    ----------
    scores : LfdrScores or array of floats in [0, 1]
    alpha : float
        Target level in (0, 1).
    tie_break : str
        "index" resolves ties deterministically by hypothesis index;
        "random" permutes tied hypotheses using ``seed``.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie strictly between 0 and 1")
    s = _score_vector(scores)
    m = s.shape[0]
    if tie_break == "index":
        key = np.arange(m)
    elif tie_break == "random":
        key = np.random.default_rng(seed).permutation(m)
    else:
        raise ValueError(f"unknown tie_break {tie_break!r}")
    order = np.lexsort((key, s))
    sorted_scores = s[order]
    path = np.cumsum(sorted_scores) / np.arange(1, m + 1)
    below = np.nonzero(path <= alpha)[0]
    k = int(below[-1] + 1) if below.size else 0
    rejected = np.zeros(m, dtype=bool)
    rejected[order[:k]] = True
    cutoff = float(sorted_scores[k - 1]) if k else 0.0
    return ScreeningResult(cutoff=cutoff, rejected=rejected, k=k,
                           fdr_path=path, alpha=alpha)


def oracle_select(stats: CoefStats, truth, alpha: float) -> ScreeningResult:
    """Step-up selection with scores computed from the true hyperparameters."""
    return step_up_select(compute_lfdr(stats, truth), alpha)
