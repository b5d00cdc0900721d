"""Empirical-Bayes mixture fitting for the scaled coefficient pairs.

The working model: conditional on a latent state (u, v), the scaled
estimates satisfy

    a_i ~ N(mu_u,    var1_i + kappa_u)      independently of
    b_i ~ N(theta_v, var2_i + psi_v)

with component 0 pinned at mean 0 and prior variance 0.  The standard model
has one alternative component per margin; the general model allows d1 and d2
alternative components and is fitted by a two-step procedure: univariate
mixtures per margin first, then an EM over the joint mixing weights alone.

M-steps follow the weighted-mean updates for the location parameters and a
one-dimensional grid search for the prior variances.  Because the grid
points are fixed for a given data set, the grid objective reduces to two
matrix-vector products per iteration, which keeps the fit cheap at large m.

All reductions run over a canonical ordering of the hypotheses (sorted by
(a, b, var1, var2)), so fitted values are bitwise independent of the input
order and of any outer parallelism.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp
from scipy.stats import trim_mean

from .errors import NumericError
from .regression import CoefStats

_LOG_2PI = float(np.log(2.0 * np.pi))

# Mixing-weight floor; keeps every local FDR well-defined.
PI_FLOOR = 1e-6


@dataclass(frozen=True)
class MixtureModel:
    """Hyperparameters of the four-component model.

    ``pi`` is a (2, 2) simplex array indexed as pi[u, v] with u the a-state
    and v the b-state: pi[0, 0] is the double-null weight, pi[1, 1] the
    double-alternative weight.  A 4-vector in the order
    (pi00, pi10, pi01, pi11) is accepted and reshaped.
    """

    pi: np.ndarray
    mu: float
    theta: float
    kappa: float
    psi: float

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float)
        if pi.shape == (4,):
            pi = pi_matrix(pi)
        object.__setattr__(self, "pi", pi)
        if pi.shape != (2, 2):
            raise ValueError("pi must be a (2, 2) array or a 4-vector")
        if np.any(pi < 0.0) or abs(float(pi.sum()) - 1.0) > 1e-12:
            raise ValueError("pi must lie on the simplex")
        if self.kappa < 0.0 or self.psi < 0.0:
            raise ValueError("prior variances must be nonnegative")

    def pi_vector(self) -> np.ndarray:
        """Weights in the order (pi00, pi10, pi01, pi11)."""
        p = self.pi
        return np.array([p[0, 0], p[1, 0], p[0, 1], p[1, 1]])

    def to_general(self) -> "GeneralMixtureModel":
        return GeneralMixtureModel(
            pi_joint=self.pi.copy(),
            mus=np.array([0.0, self.mu]),
            thetas=np.array([0.0, self.theta]),
            kappas=np.array([0.0, self.kappa]),
            psis=np.array([0.0, self.psi]),
        )


@dataclass(frozen=True)
class GeneralMixtureModel:
    """Hyperparameters of the (d1+1) x (d2+1) component model.

    Index 0 of every parameter vector is the null component, pinned at zero.
    """

    pi_joint: np.ndarray
    mus: np.ndarray
    thetas: np.ndarray
    kappas: np.ndarray
    psis: np.ndarray

    def __post_init__(self):
        for name in ("pi_joint", "mus", "thetas", "kappas", "psis"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        d1p, d2p = self.pi_joint.shape
        if self.mus.shape != (d1p,) or self.kappas.shape != (d1p,):
            raise ValueError("mus/kappas length must match pi_joint rows")
        if self.thetas.shape != (d2p,) or self.psis.shape != (d2p,):
            raise ValueError("thetas/psis length must match pi_joint columns")
        if np.any(self.pi_joint < 0.0) or abs(float(self.pi_joint.sum()) - 1.0) > 1e-12:
            raise ValueError("pi_joint must lie on the simplex")
        for vec in (self.mus, self.thetas, self.kappas, self.psis):
            if vec[0] != 0.0:
                raise ValueError("component 0 must be pinned at zero")
        if np.any(self.kappas < 0.0) or np.any(self.psis < 0.0):
            raise ValueError("prior variances must be nonnegative")

    @property
    def d1(self) -> int:
        return self.pi_joint.shape[0] - 1

    @property
    def d2(self) -> int:
        return self.pi_joint.shape[1] - 1

    def class_probs(self) -> dict:
        """Hypothesis-class probabilities implied by the joint weights."""
        pj = self.pi_joint
        return {
            "H00": float(pj[0, 0]),
            "H10": float(pj[1:, 0].sum()),
            "H01": float(pj[0, 1:].sum()),
            "H11": float(pj[1:, 1:].sum()),
        }


@dataclass(frozen=True)
class Responsibilities:
    """Posterior component probabilities, one row per hypothesis.

    Columns run row-major over the (u, v) grid; for the standard model the
    order is (0,0), (0,1), (1,0), (1,1).
    """

    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        object.__setattr__(self, "q", q)
        if np.any(q < -1e-12) or np.any(q > 1.0 + 1e-12):
            raise ValueError("responsibilities must lie in [0, 1]")
        if np.max(np.abs(q.sum(axis=1) - 1.0)) > 1e-10:
            raise ValueError("responsibility rows must sum to 1")


@dataclass(frozen=True)
class EmConfig:
    """Knobs for the EM fits; defaults match the documented policy."""

    tol: float = 1e-8
    max_iter: int = 500
    grid_size: int = 50
    refine_size: int = 10
    grid_lo: float = 1e-3
    grid_hi_factor: float = 100.0
    pi_floor: float = PI_FLOOR
    restarts: int = 3
    seed: int = 0
    init: MixtureModel | None = None


@dataclass
class EmTrace:
    """Per-iteration observed-data log-likelihood of the winning restart."""

    loglik: np.ndarray
    n_iter: int
    converged: bool
    pi_floor_hit: bool = False
    restart_logliks: tuple = ()


def pi_matrix(vec4) -> np.ndarray:
    """(pi00, pi10, pi01, pi11) vector -> (2, 2) array indexed [u, v]."""
    v = np.asarray(vec4, dtype=float)
    return np.array([[v[0], v[2]], [v[1], v[3]]])


def _norm_logpdf(x, mean, var):
    return -0.5 * (_LOG_2PI + np.log(var)) - 0.5 * (x - mean) ** 2 / var


def _as_general(model) -> GeneralMixtureModel:
    return model.to_general() if isinstance(model, MixtureModel) else model


def log_component_matrix(stats: CoefStats, model) -> np.ndarray:
    """log(pi_uv) + log f_uv(a_i, b_i), flattened row-major to (m, K).

    Zero mixing weights map to -inf columns.
    """
    gen = _as_general(model)
    la = _norm_logpdf(stats.a[:, None], gen.mus[None, :],
                      stats.var1[:, None] + gen.kappas[None, :])
    lb = _norm_logpdf(stats.b[:, None], gen.thetas[None, :],
                      stats.var2[:, None] + gen.psis[None, :])
    with np.errstate(divide="ignore"):
        lpi = np.log(gen.pi_joint)
    return (la[:, :, None] + lb[:, None, :] + lpi[None, :, :]).reshape(stats.a.shape[0], -1)


def null_component_mask(model) -> np.ndarray:
    """Flattened mask of components belonging to the composite null."""
    gen = _as_general(model)
    u = np.arange(gen.d1 + 1)[:, None]
    v = np.arange(gen.d2 + 1)[None, :]
    return ((u == 0) | (v == 0)).reshape(-1)


def loglik(stats: CoefStats, model) -> float:
    """Observed-data log-likelihood of the mixture at the given stats."""
    lse = logsumexp(log_component_matrix(stats, model), axis=1)
    if not np.all(np.isfinite(lse)):
        raise NumericError("mixture density vanished at some hypothesis")
    return float(np.sum(lse))


def amle_ratio(stats: CoefStats, fitted, truth) -> float:
    """loglik(fitted) - loglik(truth); nonnegative when the fit dominates."""
    return loglik(stats, fitted) - loglik(stats, truth)


def responsibilities(stats: CoefStats, model) -> Responsibilities:
    """E-step posteriors of the latent component for each hypothesis."""
    logn = log_component_matrix(stats, model)
    lse = logsumexp(logn, axis=1)
    return Responsibilities(q=np.exp(logn - lse[:, None]))


# ---------------------------------------------------------------------------
# grid search machinery


class _VarGrid:
    """Fixed candidate grid for one prior-variance parameter.

    Precomputes, per grid point and hypothesis, the log total variance and
    its reciprocal, so each coarse M-step evaluation is two matrix-vector
    products.  Constant terms common to all candidates are dropped.
    """

    def __init__(self, x, s, config: EmConfig):
        hi = max(config.grid_hi_factor * float(np.var(x)), 10.0 * config.grid_lo)
        self.points = np.geomspace(config.grid_lo, hi, config.grid_size)
        self.refine_size = config.refine_size
        self.x = x
        self.s = s
        d = s[:, None] + self.points[None, :]
        self._log_d = np.log(d)
        self._inv_d = 1.0 / d

    def _objective(self, r, quad, points):
        d = self.s[:, None] + np.asarray(points)[None, :]
        return -0.5 * (r @ np.log(d)) - 0.5 * (quad @ (1.0 / d))

    def search(self, r, mean, incumbent) -> float:
        """Best prior-variance candidate given responsibilities r."""
        quad = r * (self.x - mean) ** 2
        obj = -0.5 * (r @ self._log_d) - 0.5 * (quad @ self._inv_d)
        j = int(np.argmax(obj))
        best, best_obj = float(self.points[j]), float(obj[j])
        lo = self.points[max(j - 1, 0)]
        hi = self.points[min(j + 1, len(self.points) - 1)]
        if hi > lo:
            local = np.geomspace(lo, hi, self.refine_size)
            lobj = self._objective(r, quad, local)
            jj = int(np.argmax(lobj))
            if lobj[jj] > best_obj:
                best, best_obj = float(local[jj]), float(lobj[jj])
        # keep the incumbent when no candidate beats it, so the expected
        # complete log-likelihood never decreases
        if float(self._objective(r, quad, [incumbent])[0]) >= best_obj:
            best = float(incumbent)
        return best


def _canonical_order(*keys):
    return np.lexsort(tuple(reversed(keys)))


def _default_location_scale(x, s, grid_lo):
    """Initial location/prior-variance guesses from the top-decile tail."""
    absx = np.abs(x)
    cut = np.quantile(absx, 0.9)
    tail = x[absx >= cut]
    if tail.size == 0:
        tail = x
    loc = float(trim_mean(tail, 0.1)) if tail.size >= 3 else float(np.mean(tail))
    scale = max(grid_lo, float(np.var(tail)) - float(np.mean(s)))
    return loc, scale


# the tail init is contaminated by nulls, which biases locations toward
# zero and inflates scales; the first perturbation band jumps far out along
# the likely bias direction, later bands wiggle locally
_PERTURB_BANDS = ((1.3, 2.0, 0.15, 0.5), (0.8, 1.3, 0.5, 1.5))


def _perturbed(loc, scale, rng, band=0):
    lo_l, hi_l, lo_s, hi_s = _PERTURB_BANDS[band % len(_PERTURB_BANDS)]
    loc_p = loc * rng.uniform(lo_l, hi_l)
    if rng.uniform() < 0.15:
        loc_p = -loc_p
    return loc_p, scale * rng.uniform(lo_s, hi_s) + 0.05


def _floor_pi(pi, floor):
    """Clamp weights at the floor; untouched inputs pass through exactly."""
    if not np.any(pi < floor):
        return pi, False
    clipped = np.maximum(pi, floor)
    return clipped / clipped.sum(), True


# ---------------------------------------------------------------------------
# standard four-component EM


def _estep_standard(a, b, s1, s2, la0, lb0, model: MixtureModel):
    """Log numerators in component order (0,0), (1,0), (0,1), (1,1)."""
    la1 = _norm_logpdf(a, model.mu, s1 + model.kappa)
    lb1 = _norm_logpdf(b, model.theta, s2 + model.psi)
    with np.errstate(divide="ignore"):
        lpi = np.log(model.pi)
    return np.stack([
        lpi[0, 0] + la0 + lb0,
        lpi[1, 0] + la1 + lb0,
        lpi[0, 1] + la0 + lb1,
        lpi[1, 1] + la1 + lb1,
    ], axis=1)


def _mstep_standard(a, b, s1, s2, q, model: MixtureModel, config: EmConfig,
                    grid_a: _VarGrid, grid_b: _VarGrid):
    pi_new = pi_matrix(q.mean(axis=0))
    pi_new, hit = _floor_pi(pi_new, config.pi_floor)
    r_a = q[:, 1] + q[:, 3]
    r_b = q[:, 2] + q[:, 3]
    w = r_a / (s1 + model.kappa)
    v = r_b / (s2 + model.psi)
    mu = float((w @ a) / w.sum()) if w.sum() > 0 else model.mu
    theta = float((v @ b) / v.sum()) if v.sum() > 0 else model.theta
    kappa = grid_a.search(r_a, mu, model.kappa)
    psi = grid_b.search(r_b, theta, model.psi)
    return MixtureModel(pi=pi_new, mu=mu, theta=theta, kappa=kappa, psi=psi), hit


def em_step(stats: CoefStats, model: MixtureModel,
            config: EmConfig = EmConfig()) -> tuple[MixtureModel, Responsibilities]:
    """One full E+M iteration of the standard fit, in the given data order.

    Exposed so single iterations can be checked against independent
    arithmetic; ``em_fit`` is the convergent driver.
    """
    a, b, s1, s2 = stats.a, stats.b, stats.var1, stats.var2
    la0 = _norm_logpdf(a, 0.0, s1)
    lb0 = _norm_logpdf(b, 0.0, s2)
    grid_a = _VarGrid(a, s1, config)
    grid_b = _VarGrid(b, s2, config)
    logn = _estep_standard(a, b, s1, s2, la0, lb0, model)
    lse = logsumexp(logn, axis=1)
    q = np.exp(logn - lse[:, None])
    new_model, _ = _mstep_standard(a, b, s1, s2, q, model, config, grid_a, grid_b)
    # report responsibilities in the documented row-major (u, v) order
    return new_model, Responsibilities(q=q[:, [0, 2, 1, 3]])


def _em_once(a, b, s1, s2, init: MixtureModel, config: EmConfig,
             grid_a: _VarGrid, grid_b: _VarGrid):
    model = init
    la0 = _norm_logpdf(a, 0.0, s1)
    lb0 = _norm_logpdf(b, 0.0, s2)
    trace = []
    floor_hit = False
    converged = False
    for _ in range(config.max_iter):
        logn = _estep_standard(a, b, s1, s2, la0, lb0, model)
        lse = logsumexp(logn, axis=1)
        trace.append(float(np.sum(lse)))
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) <= config.tol * abs(trace[-2]):
            converged = True
            break
        q = np.exp(logn - lse[:, None])
        model, hit = _mstep_standard(a, b, s1, s2, q, model, config, grid_a, grid_b)
        floor_hit |= hit
    else:
        # ran out of iterations; record the likelihood of the final iterate
        logn = _estep_standard(a, b, s1, s2, la0, lb0, model)
        trace.append(float(np.sum(logsumexp(logn, axis=1))))
    return model, np.array(trace), converged, floor_hit


def _check_em_input(a, b, s1, s2):
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))
            and np.all(s1 > 0) and np.all(s2 > 0)):
        raise NumericError("EM input contains flagged or non-finite hypotheses; "
                           "pass stats.valid()")


def em_fit(stats: CoefStats, config: EmConfig = EmConfig()) -> tuple[MixtureModel, EmTrace]:
    """Fit the four-component model by EM with restarts.

    Returns the model with the best final observed-data log-likelihood over
    the restarts plus the log-likelihood trace of that run.  Non-convergence
    within ``max_iter`` is reported on the trace, not raised.
    """
    if stats.m < 4:
        raise NumericError("EM needs at least 4 valid hypotheses")
    order = _canonical_order(stats.a, stats.b, stats.var1, stats.var2)
    a, b = stats.a[order], stats.b[order]
    s1, s2 = stats.var1[order], stats.var2[order]
    _check_em_input(a, b, s1, s2)

    grid_a = _VarGrid(a, s1, config)
    grid_b = _VarGrid(b, s2, config)

    if config.init is not None:
        base = config.init
    else:
        mu0, kappa0 = _default_location_scale(a, s1, config.grid_lo)
        theta0, psi0 = _default_location_scale(b, s2, config.grid_lo)
        base = MixtureModel(pi=np.array([0.85, 0.05, 0.05, 0.05]),
                            mu=mu0, theta=theta0, kappa=kappa0, psi=psi0)
    inits = [base]
    rng = np.random.default_rng(config.seed)
    for j in range(max(0, config.restarts - 1)):
        mu_p, kappa_p = _perturbed(base.mu, base.kappa, rng, band=j)
        theta_p, psi_p = _perturbed(base.theta, base.psi, rng, band=j)
        inits.append(replace(base, mu=mu_p, theta=theta_p, kappa=kappa_p, psi=psi_p))

    best = None
    finals = []
    for init in inits:
        out = _em_once(a, b, s1, s2, init, config, grid_a, grid_b)
        finals.append(out[1][-1])
        if best is None or out[1][-1] > best[1][-1]:
            best = out
    model, tr, conv, hit = best
    return model, EmTrace(loglik=tr, n_iter=len(tr), converged=conv,
                          pi_floor_hit=hit, restart_logliks=tuple(finals))


# ---------------------------------------------------------------------------
# two-step EM for the general model


def _marginal_init(x, s, d, grid_lo):
    """Spread d alternative components over the sorted top-decile tail."""
    absx = np.abs(x)
    cut = np.quantile(absx, 0.9)
    tail = np.sort(x[absx >= cut])
    if tail.size < d:
        tail = np.sort(x)
    locs, scales = [], []
    for chunk in np.array_split(tail, d):
        if chunk.size == 0:
            locs.append(0.0)
            scales.append(grid_lo)
            continue
        locs.append(float(trim_mean(chunk, 0.1)) if chunk.size >= 3 else float(np.mean(chunk)))
        scales.append(max(grid_lo, float(np.var(chunk)) - float(np.mean(s))))
    return np.array(locs), np.array(scales)


def _marginal_em_once(x, s, locs0, scales0, pis0, config: EmConfig, grid: _VarGrid):
    """Univariate (d+1)-component fit; component 0 pinned at N(0, s_i)."""
    d = locs0.shape[0]
    locs, scales, pis = locs0.copy(), scales0.copy(), pis0.copy()
    trace = []
    converged = False
    for _ in range(config.max_iter):
        var = s[:, None] + np.concatenate([[0.0], scales])[None, :]
        means = np.concatenate([[0.0], locs])[None, :]
        with np.errstate(divide="ignore"):
            logn = np.log(pis)[None, :] + _norm_logpdf(x[:, None], means, var)
        lse = logsumexp(logn, axis=1)
        trace.append(float(np.sum(lse)))
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) <= config.tol * abs(trace[-2]):
            converged = True
            break
        q = np.exp(logn - lse[:, None])
        pis, _ = _floor_pi(q.mean(axis=0), config.pi_floor)
        for u in range(d):
            w = q[:, u + 1] / (s + scales[u])
            if w.sum() > 0:
                locs[u] = float((w @ x) / w.sum())
            scales[u] = grid.search(q[:, u + 1], locs[u], scales[u])
    return locs, scales, pis, np.array(trace), converged


def _fit_marginal(x, s, d, config: EmConfig):
    grid = _VarGrid(x, s, config)
    locs0, scales0 = _marginal_init(x, s, d, config.grid_lo)
    pis0 = np.concatenate([[0.85], np.full(d, 0.15 / d)])
    candidates = [(locs0, scales0)]
    rng = np.random.default_rng(config.seed + 1)
    for j in range(max(0, config.restarts - 1)):
        pert = [_perturbed(l, sc, rng, band=j) for l, sc in zip(locs0, scales0)]
        candidates.append((np.array([p[0] for p in pert]), np.array([p[1] for p in pert])))
    best = None
    for locs_c, scales_c in candidates:
        out = _marginal_em_once(x, s, locs_c, scales_c, pis0, config, grid)
        if best is None or out[3][-1] > best[3][-1]:
            best = out
    return best


def em_fit_two_step(stats: CoefStats, d1: int, d2: int,
                    config: EmConfig = EmConfig()) -> tuple[GeneralMixtureModel, EmTrace]:
    """Two-step fit of the general model.

    Step 1 fits the two marginal univariate mixtures independently.  Step 2
    freezes their location/scale estimates and runs EM over the joint mixing
    weights only.  The returned trace covers step 2; the marginal final
    log-likelihoods are reported in ``restart_logliks``.
    """
    if d1 < 1 or d2 < 1:
        raise ValueError("d1 and d2 must be at least 1")
    if stats.m < (d1 + 1) * (d2 + 1):
        raise NumericError("too few hypotheses for the requested component counts")
    order = _canonical_order(stats.a, stats.b, stats.var1, stats.var2)
    a, b = stats.a[order], stats.b[order]
    s1, s2 = stats.var1[order], stats.var2[order]
    _check_em_input(a, b, s1, s2)

    mus_alt, kappas_alt, pi_a, tr_a, conv_a = _fit_marginal(a, s1, d1, config)
    thetas_alt, psis_alt, pi_b, tr_b, conv_b = _fit_marginal(b, s2, d2, config)

    mus = np.concatenate([[0.0], mus_alt])
    kappas = np.concatenate([[0.0], kappas_alt])
    thetas = np.concatenate([[0.0], thetas_alt])
    psis = np.concatenate([[0.0], psis_alt])

    # frozen per-component log densities for the joint weight updates
    la = _norm_logpdf(a[:, None], mus[None, :], s1[:, None] + kappas[None, :])
    lb = _norm_logpdf(b[:, None], thetas[None, :], s2[:, None] + psis[None, :])
    ld = (la[:, :, None] + lb[:, None, :]).reshape(a.shape[0], -1)

    pi_joint, floor_hit = _floor_pi(np.outer(pi_a, pi_b), config.pi_floor)
    trace = []
    converged = False
    for _ in range(config.max_iter):
        logn = np.log(pi_joint).reshape(1, -1) + ld
        lse = logsumexp(logn, axis=1)
        trace.append(float(np.sum(lse)))
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) <= config.tol * abs(trace[-2]):
            converged = True
            break
        q = np.exp(logn - lse[:, None])
        pi_joint, hit = _floor_pi(q.mean(axis=0).reshape(d1 + 1, d2 + 1), config.pi_floor)
        floor_hit |= hit

    model = GeneralMixtureModel(pi_joint=pi_joint, mus=mus, thetas=thetas,
                                kappas=kappas, psis=psis)
    return model, EmTrace(loglik=np.array(trace), n_iter=len(trace),
                          converged=converged and conv_a and conv_b,
                          pi_floor_hit=floor_hit,
                          restart_logliks=(float(tr_a[-1]), float(tr_b[-1])))


def fit_model(stats: CoefStats, d1: int = 1, d2: int = 1, two_step: bool | None = None,
              config: EmConfig = EmConfig()):
    """Policy dispatcher: standard EM when d1 = d2 = 1, two-step otherwise.

    ``two_step=True`` forces the two-step route; ``two_step=False`` demands
    the standard one and therefore requires d1 = d2 = 1.
    """
    if two_step is None:
        two_step = not (d1 == 1 and d2 == 1)
    if not two_step and (d1 != 1 or d2 != 1):
        raise ValueError("the standard EM supports only d1 = d2 = 1")
    if two_step:
        return em_fit_two_step(stats, d1, d2, config)
    return em_fit(stats, config)
