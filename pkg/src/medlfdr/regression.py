"""Per-hypothesis coefficient estimates for the mediation structural model.

For every hypothesis i the mediator equation regresses M_i on the exposure
(plus confounders) and the outcome equation regresses Y_i on (M_i, exposure,
confounders).  All fits are intercept-free, matching the structural model.
The module reports root-n scaled coefficients together with the plug-in
conditional variances that the empirical-Bayes layer consumes:

    a_i    = sqrt(n) * alpha_hat_i
    b_i    = sqrt(n) * beta_hat_i
    var1_i = n * sigma2_a_hat_i * [(D1'D1)^-1]_xx
    var2_i = n * sigma2_b_hat_i * [(D2'D2)^-1]_mm

Residual variances are estimated as RSS / (n - p).  Hypotheses whose fit
degenerates (rank-deficient design, zero residual variance, separation in the
logistic solver) are flagged and excluded from downstream estimation instead
of poisoning it.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from .errors import DataError

FLAG_RANK_DEFICIENT = "rank_deficient"
FLAG_ZERO_VARIANCE = "zero_variance"
FLAG_CONSTANT_MEDIATOR = "constant_mediator"
FLAG_SEPARATION = "separation"
FLAG_NO_CONVERGENCE = "no_convergence"

# IRLS settings for the logistic outcome equation.
LOGIT_MAX_ITER = 50
LOGIT_TOL = 1e-8
LOGIT_SEPARATION_BOUND = 30.0

# Relative eigenvalue threshold below which a Gram matrix counts as singular.
_RANK_RTOL = 1e-10

# Cap on floats held by a stacked design block, to bound memory at large m.
_BLOCK_BUDGET = 2_000_000


@dataclass(frozen=True)
class FitFlag:
    """Per-hypothesis diagnostic record for an excluded or degenerate fit."""

    index: int
    code: str
    message: str


@dataclass(frozen=True)
class Dataset:
    """Raw inputs of the structural model.

    Parameters
    ----------
    x : ndarray
        Exposure, shape (n,).  A per-hypothesis exposure matrix of shape
        (n, m) is accepted as a variant; column i is then the exposure for
        hypothesis i.
    m_mat : ndarray
        Mediators, shape (n, m); column i is mediator M_i.
    y_mat : ndarray
        Outcomes, shape (n, m); column i is outcome Y_i.
    z_mat : ndarray or None
        Optional confounders, shape (n, q).  Confounders enter both the
        mediator and the outcome equations.
    outcome_kind : str
        "continuous" or "binary".
    """

    x: np.ndarray
    m_mat: np.ndarray
    y_mat: np.ndarray
    z_mat: np.ndarray | None = None
    outcome_kind: str = "continuous"

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        m_mat = np.asarray(self.m_mat, dtype=float)
        if m_mat.ndim == 1:
            m_mat = m_mat[:, None]
        y_mat = np.asarray(self.y_mat, dtype=float)
        if y_mat.ndim == 1:
            y_mat = y_mat[:, None]
        z_mat = self.z_mat
        if z_mat is not None:
            z_mat = np.asarray(z_mat, dtype=float)
            if z_mat.ndim == 1:
                z_mat = z_mat[:, None]
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "m_mat", m_mat)
        object.__setattr__(self, "y_mat", y_mat)
        object.__setattr__(self, "z_mat", z_mat)

        if self.outcome_kind not in ("continuous", "binary"):
            raise DataError(f"unknown outcome_kind {self.outcome_kind!r}")
        n = m_mat.shape[0]
        if x.shape[0] != n or y_mat.shape[0] != n:
            raise DataError("exposure, mediators and outcomes disagree on sample count")
        if m_mat.shape[1] != y_mat.shape[1]:
            raise DataError("mediator and outcome matrices disagree on hypothesis count")
        if x.ndim == 2 and x.shape[1] != m_mat.shape[1]:
            raise DataError("per-hypothesis exposure matrix must have one column per hypothesis")
        q = 0 if z_mat is None else z_mat.shape[1]
        if z_mat is not None and z_mat.shape[0] != n:
            raise DataError("confounder matrix disagrees on sample count")
        if n < 3 or n <= q + 2:
            raise DataError(f"need n > q + 2 and n >= 3, got n={n}, q={q}")
        if self.outcome_kind == "binary" and not np.isin(y_mat, (0.0, 1.0)).all():
            raise DataError("binary outcomes must contain only 0/1 entries")
        xcols = x if x.ndim == 2 else x[:, None]
        if np.any(np.einsum("ij,ij->j", xcols, xcols) <= 0.0):
            raise DataError("exposure has zero sample second moment")

    @property
    def n(self) -> int:
        return self.m_mat.shape[0]

    @property
    def m(self) -> int:
        return self.m_mat.shape[1]

    def exposure_column(self, i: int) -> np.ndarray:
        return self.x[:, i] if self.x.ndim == 2 else self.x


@dataclass(frozen=True)
class CoefStats:
    """Root-n scaled coefficient estimates and their plug-in variances.

    Arrays have length m; entries of flagged hypotheses hold NaN where the
    quantity could not be computed (the zero-variance case keeps the
    coefficient but reports variance 0).  ``ok`` masks the usable rows.
    """

    a: np.ndarray
    b: np.ndarray
    var1: np.ndarray
    var2: np.ndarray
    n: int
    flags: tuple[FitFlag, ...] = ()

    @property
    def m(self) -> int:
        return self.a.shape[0]

    @property
    def ok(self) -> np.ndarray:
        mask = np.ones(self.m, dtype=bool)
        for flag in self.flags:
            mask[flag.index] = False
        return mask

    def valid(self) -> "CoefStats":
        """Subset of unflagged hypotheses, for estimation stages."""
        keep = self.ok
        return CoefStats(
            a=self.a[keep], b=self.b[keep], var1=self.var1[keep],
            var2=self.var2[keep], n=self.n, flags=(),
        )


def _gram_is_singular(gram: np.ndarray) -> np.ndarray:
    """Boolean mask of (stacked) Gram matrices that are numerically singular."""
    eig = np.linalg.eigvalsh(gram)
    lo, hi = eig[..., 0], eig[..., -1]
    return (lo <= hi * _RANK_RTOL) | (hi <= 0.0)


def _shared_mediator_fit(ds: Dataset):
    """OLS of every mediator column on the shared [x, Z] design."""
    design = ds.x[:, None] if ds.z_mat is None else np.column_stack([ds.x, ds.z_mat])
    gram = design.T @ design
    if _gram_is_singular(gram):
        raise DataError("mediator design [x, Z] is rank-deficient")
    p = design.shape[1]
    if ds.n <= p:
        raise DataError(f"too few samples for the mediator design: n={ds.n}, p={p}")
    coef = np.linalg.solve(gram, design.T @ ds.m_mat)
    resid = ds.m_mat - design @ coef
    rss = np.einsum("ij,ij->j", resid, resid)
    sigma2 = rss / (ds.n - p)
    gram_inv_xx = np.linalg.inv(gram)[0, 0]
    a = np.sqrt(ds.n) * coef[0]
    var1 = ds.n * sigma2 * gram_inv_xx
    return a, var1, rss

def _per_hypothesis_mediator_fit(ds: Dataset, flags: list[FitFlag]):
    """Mediator OLS when each hypothesis carries its own exposure column."""
    n, m = ds.n, ds.m
    a = np.full(m, np.nan)
    var1 = np.full(m, np.nan)
    rss = np.full(m, np.nan)
    z = ds.z_mat
    p = 1 + (0 if z is None else z.shape[1])
    if n <= p:
        raise DataError(f"too few samples for the mediator design: n={n}, p={p}")
    for i in range(m):
        xi = ds.x[:, i]
        design = xi[:, None] if z is None else np.column_stack([xi, z])
        gram = design.T @ design
        if _gram_is_singular(gram):
            flags.append(FitFlag(i, FLAG_RANK_DEFICIENT, "mediator design rank-deficient"))
            continue
        coef = np.linalg.solve(gram, design.T @ ds.m_mat[:, i])
        res = ds.m_mat[:, i] - design @ coef
        r = float(res @ res)
        a[i] = np.sqrt(n) * coef[0]
        var1[i] = n * (r / (n - p)) * np.linalg.inv(gram)[0, 0]
        rss[i] = r
    return a, var1, rss


def _outcome_designs(ds: Dataset, interaction: bool, idx: np.ndarray) -> np.ndarray:
    """Stacked outcome designs, shape (len(idx), n, p), first column M_i."""
    cols = [ds.m_mat[:, idx].T[:, :, None]]
    if ds.x.ndim == 2:
        xcol = ds.x[:, idx].T[:, :, None]
    else:
        xcol = np.broadcast_to(ds.x, (len(idx), ds.n))[:, :, None]
    cols.append(xcol)
    if interaction:
        cols.append(cols[0] * xcol)
    if ds.z_mat is not None:
        cols.append(np.broadcast_to(ds.z_mat, (len(idx), *ds.z_mat.shape)))
    return np.concatenate(cols, axis=2)


def _linear_outcome_fit(ds: Dataset, interaction: bool, flags: list[FitFlag]):
    """Batched OLS of Y_i on [M_i, x, (M_i*x), Z], reporting the M_i slot."""
    n, m = ds.n, ds.m
    p = 2 + int(interaction) + (0 if ds.z_mat is None else ds.z_mat.shape[1])
    if n <= p:
        raise DataError(f"too few samples for the outcome design: n={n}, p={p}")
    b = np.full(m, np.nan)
    var2 = np.full(m, np.nan)
    rss = np.full(m, np.nan)
    block = max(1, _BLOCK_BUDGET // (n * p))
    for start in range(0, m, block):
        idx = np.arange(start, min(start + block, m))
        designs = _outcome_designs(ds, interaction, idx)
        grams = np.einsum("knp,knq->kpq", designs, designs)
        bad = _gram_is_singular(grams)
        for j in idx[bad]:
            flags.append(FitFlag(int(j), FLAG_RANK_DEFICIENT, "outcome design rank-deficient"))
        good = ~bad
        if not good.any():
            continue
        sub = idx[good]
        y = ds.y_mat[:, sub].T
        rhs = np.einsum("knp,kn->kp", designs[good], y)
        coef = np.linalg.solve(grams[good], rhs[:, :, None])[:, :, 0]
        resid = y - np.einsum("knp,kp->kn", designs[good], coef)
        r = np.einsum("kn,kn->k", resid, resid)
        inv_mm = np.linalg.inv(grams[good])[:, 0, 0]
        b[sub] = np.sqrt(n) * coef[:, 0]
        var2[sub] = n * (r / (n - p)) * inv_mm
        rss[sub] = r
    return b, var2, rss


def _flag_degenerate_mediators(ds: Dataset, flags: list[FitFlag]) -> None:
    spread = np.ptp(ds.m_mat, axis=0)
    for i in np.flatnonzero(spread == 0.0):
        flags.append(FitFlag(int(i), FLAG_CONSTANT_MEDIATOR, "mediator column is constant"))


def _flag_zero_variances(var1, var2, flagged: set[int], flags: list[FitFlag]) -> None:
    for i in range(var1.shape[0]):
        if i in flagged:
            continue
        v1, v2 = var1[i], var2[i]
        if (np.isfinite(v1) and v1 <= 0.0) or (np.isfinite(v2) and v2 <= 0.0):
            flags.append(FitFlag(i, FLAG_ZERO_VARIANCE, "zero residual variance"))


def _dedupe(flags: list[FitFlag]) -> tuple[FitFlag, ...]:
    seen: dict[int, FitFlag] = {}
    for flag in flags:
        seen.setdefault(flag.index, flag)
    return tuple(seen[i] for i in sorted(seen))


def _fit_continuous(ds: Dataset, interaction: bool) -> CoefStats:
    if ds.outcome_kind != "continuous":
        raise DataError("continuous fit requires a continuous outcome")
    flags: list[FitFlag] = []
    _flag_degenerate_mediators(ds, flags)
    if ds.x.ndim == 2:
        a, var1, rss1 = _per_hypothesis_mediator_fit(ds, flags)
    else:
        a, var1, rss1 = _shared_mediator_fit(ds)
    b, var2, rss2 = _linear_outcome_fit(ds, interaction, flags)
    flagged = {f.index for f in flags}
    _flag_zero_variances(var1, var2, flagged, flags)
    return CoefStats(a=a, b=b, var1=var1, var2=var2, n=ds.n, flags=_dedupe(flags))


def fit_linear(ds: Dataset) -> CoefStats:
    """OLS estimates for the linear outcome model.

    The mediator equation regresses M_i on [x, Z]; the outcome equation
    regresses Y_i on [M_i, x, Z].  Reported coefficients and variances refer
    to the exposure slot and the mediator slot respectively.

    Raises
    ------
    DataError
        If the shared design is rank-deficient or n is too small.
    """
    return _fit_continuous(ds, interaction=False)


def fit_interaction(ds: Dataset) -> CoefStats:
    """OLS estimates when the outcome design includes the M_i * x regressor.

    b and var2 still refer to the M_i main-effect coefficient, which is the
    screening target.
    """
    return _fit_continuous(ds, interaction=True)


def _logistic_newton(design: np.ndarray, y: np.ndarray):
    """Newton-Raphson ML fit of an intercept-free logistic model.

    Returns (coef, info, status) where info is the observed Fisher
    information at the estimate and status is None or a flag code.
    """
    p = design.shape[1]
    beta = np.zeros(p)
    info = None
    for _ in range(LOGIT_MAX_ITER):
        eta = design @ beta
        prob = expit(eta)
        w = prob * (1.0 - prob)
        info = (design * w[:, None]).T @ design
        grad = design.T @ (y - prob)
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            return beta, info, FLAG_RANK_DEFICIENT
        beta = beta + step
        if np.max(np.abs(beta)) > LOGIT_SEPARATION_BOUND:
            return beta, info, FLAG_SEPARATION
        if np.max(np.abs(step)) < LOGIT_TOL:
            eta = design @ beta
            prob = expit(eta)
            w = prob * (1.0 - prob)
            info = (design * w[:, None]).T @ design
            return beta, info, None
    return beta, info, FLAG_NO_CONVERGENCE


def fit_binary(ds: Dataset) -> CoefStats:
    """Least squares for the mediator equation, logistic ML for the outcome.

    b_i is sqrt(n) times the logistic coefficient of M_i and var2_i is n
    times the (M_i, M_i) entry of the inverse observed Fisher information.
    Separated or non-convergent hypotheses are flagged and excluded.
    """
    if ds.outcome_kind != "binary":
        raise DataError("fit_binary requires a binary outcome")
    n, m = ds.n, ds.m
    flags: list[FitFlag] = []
    _flag_degenerate_mediators(ds, flags)
    if ds.x.ndim == 2:
        a, var1, rss1 = _per_hypothesis_mediator_fit(ds, flags)
    else:
        a, var1, rss1 = _shared_mediator_fit(ds)

    b = np.full(m, np.nan)
    var2 = np.full(m, np.nan)
    flagged = {f.index for f in flags}
    for i in range(m):
        if i in flagged:
            continue
        xi = ds.exposure_column(i)
        cols = [ds.m_mat[:, i], xi]
        if ds.z_mat is not None:
            cols.extend(ds.z_mat.T)
        design = np.column_stack(cols)
        gram = design.T @ design
        if _gram_is_singular(gram):
            flags.append(FitFlag(i, FLAG_RANK_DEFICIENT, "outcome design rank-deficient"))
            continue
        coef, info, status = _logistic_newton(design, ds.y_mat[:, i])
        if status is not None:
            flags.append(FitFlag(i, status, f"logistic fit failed: {status}"))
            continue
        b[i] = np.sqrt(n) * coef[0]
        var2[i] = n * np.linalg.inv(info)[0, 0]
    flagged = {f.index for f in flags}
    _flag_zero_variances(var1, var2, flagged, flags)
    return CoefStats(a=a, b=b, var1=var1, var2=var2, n=n, flags=_dedupe(flags))


def fit_for_kind(ds: Dataset, kind: str) -> CoefStats:
    """Dispatch to the fitter matching a scenario or run kind."""
    if kind == "binary":
        return fit_binary(ds)
    if kind == "interaction":
        return fit_interaction(ds)
    return fit_linear(ds)


def drop_hypotheses(stats: CoefStats, extra_flags: list[FitFlag]) -> CoefStats:
    """Return stats with additional flagged hypotheses recorded."""
    return replace(stats, flags=_dedupe(list(stats.flags) + list(extra_flags)))
