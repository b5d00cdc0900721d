"""Synthetic data generators for every supported experimental regime.

Each scenario draws latent hypothesis classes i.i.d. from the mixing
weights, builds coefficients accordingly, then simulates the structural
equations with unit-variance noises.  Randomness is organized as one root
seed split into named substreams (shared draws) plus one substream per
hypothesis, so generation is reproducible regardless of how the
per-hypothesis work is scheduled.

Scenario kinds
--------------
case1              continuous outcome, no confounder
case2_confounded   adds Z entering both equations with coefficients 1.5/0.3
binary             Bernoulli outcome through a logit link
interaction        outcome carries an extra M_i * x term
composite          both coefficient priors are two-component normal mixtures
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import ConfigError
from .mixture import GeneralMixtureModel, MixtureModel
from .regression import CoefStats, Dataset

H00, H10, H01, H11 = 0, 1, 2, 3
LABEL_NAMES = {H00: "H00", H10: "H10", H01: "H01", H11: "H11"}

PI_DENSE = (0.4, 0.2, 0.2, 0.2)
PI_SPARSE = (0.88, 0.05, 0.05, 0.02)

KINDS = ("case1", "case2_confounded", "binary", "interaction", "composite")

# defaults shared by the non-composite scenarios
_BASE_HYPER = {
    "kappa": 1.0,
    "psi": 4.0,
    "alpha_scale": 0.2,      # alpha_i = alpha_scale * tau + noise under the alternative
    "beta_scale": 0.3,
    "x_mean": 2.0,
    "x_sd": 0.75,
    "gamma_mean": 1.0,
    "gamma_var": 0.5,
    "sigma_a": 1.0,
    "sigma_b": 1.0,
    "conf_m_coef": 1.5,      # Z coefficient in the mediator equation
    "conf_y_coef": 0.3,
    "theta_int_mean": 2.0,   # interaction coefficient distribution
    "theta_int_var": 0.25,
}

# composite scenario: two alternative components per margin, means are
# multiples of tau on the root-n scale
_COMPOSITE_HYPER = {
    "p": (0.8, 0.1, 0.1),
    "q": (0.8, 0.1, 0.1),
    "mu_mult": (0.2, 1.1),
    "theta_mult": (-1.2, 0.3),
    "kappas": (1.0, 2.0),
    "psis": (4.0, 2.0),
    "x_mean": 2.0,
    "x_sd": 0.75,
    "gamma_mean": 1.0,
    "gamma_var": 0.5,
    "sigma_a": 1.0,
    "sigma_b": 1.0,
}


@dataclass
class SimScenario:
    """Specification of one synthetic regime.

    ``pi_truth`` takes a 4-vector (pi00, pi10, pi01, pi11), or the names
    "dense"/"sparse".  Composite scenarios ignore it and use the marginal
    weight vectors ``hyper["p"]`` and ``hyper["q"]`` instead.  ``hyper``
    entries override the per-kind defaults.
    """

    kind: str
    n: int
    m: int
    tau: float
    seed: int = 0
    pi_truth: object = "sparse"
    hyper: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown scenario kind {self.kind!r}")
        if self.n < 1 or self.m < 1:
            raise ConfigError("n and m must be positive")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        base = _COMPOSITE_HYPER if self.kind == "composite" else _BASE_HYPER
        unknown = set(self.hyper) - set(base)
        if unknown:
            raise ConfigError(f"unknown hyper keys {sorted(unknown)}")
        self.hyper = {**base, **self.hyper}
        if self.kind != "composite":
            if isinstance(self.pi_truth, str):
                named = {"dense": PI_DENSE, "sparse": PI_SPARSE}
                if self.pi_truth not in named:
                    raise ConfigError(f"unknown pi_truth name {self.pi_truth!r}")
                self.pi_truth = np.array(named[self.pi_truth])
            else:
                self.pi_truth = np.asarray(self.pi_truth, dtype=float)
            if self.pi_truth.shape != (4,) or np.any(self.pi_truth < 0) \
                    or abs(self.pi_truth.sum() - 1.0) > 1e-9:
                raise ConfigError("pi_truth must be a 4-vector on the simplex")


@dataclass
class LabeledDataset:
    """A generated data set plus the ground truth that produced it."""

    data: Dataset
    labels: np.ndarray
    true_alpha: np.ndarray
    true_beta: np.ndarray
    truth_model: object

    def __post_init__(self):
        want = (self.true_alpha != 0).astype(int) + 2 * (self.true_beta != 0).astype(int)
        # want encodes (alpha!=0) + 2*(beta!=0): 0=H00 1=H10 2=H01 3=H11
        if not np.array_equal(want, self.labels):
            raise ValueError("labels inconsistent with the coefficient pattern")


def natural_indirect_effect(alpha_i: float, beta_i: float, theta_i: float,
                            x: float, x_star: float) -> float:
    """Mediator-carried effect of moving the exposure from x_star to x.

    With an interaction coefficient theta_i the product-of-coefficients
    term picks up an exposure-dependent correction:
    alpha*beta*(x - x*) + theta*alpha*x*(x - x*).
    """
    return alpha_i * beta_i * (x - x_star) + theta_i * alpha_i * x * (x - x_star)


def _spawn_streams(seed: int, m: int):
    root = np.random.SeedSequence(seed)
    shared, per_hyp = root.spawn(2)
    shared_rngs = [np.random.default_rng(s) for s in shared.spawn(3)]
    hyp_rngs = [np.random.default_rng(s) for s in per_hyp.spawn(m)]
    return shared_rngs, hyp_rngs


def _truth_model_standard(sc: SimScenario) -> MixtureModel:
    h = sc.hyper
    root_n = math.sqrt(sc.n)
    return MixtureModel(pi=np.asarray(sc.pi_truth),
                        mu=h["alpha_scale"] * sc.tau * root_n,
                        theta=h["beta_scale"] * sc.tau * root_n,
                        kappa=h["kappa"], psi=h["psi"])


def _truth_model_composite(sc: SimScenario) -> GeneralMixtureModel:
    h = sc.hyper
    p = np.asarray(h["p"], dtype=float)
    q = np.asarray(h["q"], dtype=float)
    if p.shape != (3,) or q.shape != (3,) or np.any(p < 0) or np.any(q < 0) \
            or abs(p.sum() - 1) > 1e-9 or abs(q.sum() - 1) > 1e-9:
        raise ConfigError("composite marginal weights must be 3-vectors on the simplex")
    return GeneralMixtureModel(
        pi_joint=np.outer(p, q),
        mus=np.concatenate([[0.0], sc.tau * np.asarray(h["mu_mult"])]),
        thetas=np.concatenate([[0.0], sc.tau * np.asarray(h["theta_mult"])]),
        kappas=np.concatenate([[0.0], np.asarray(h["kappas"])]),
        psis=np.concatenate([[0.0], np.asarray(h["psis"])]),
    )


def generate(sc: SimScenario) -> LabeledDataset:
    """Draw one labeled data set for the scenario.

    Equal seeds give bitwise-identical output; the per-hypothesis draws come
    from independent substreams of the root seed.
    """
    h = sc.hyper
    n, m = sc.n, sc.m
    root_n = math.sqrt(n)
    (rng_label, rng_x, rng_z), hyp_rngs = _spawn_streams(sc.seed, m)

    x = rng_x.normal(h["x_mean"], h["x_sd"], size=n)
    z = rng_z.normal(0.0, 1.0, size=n) if sc.kind == "case2_confounded" else None

    if sc.kind == "composite":
        truth = _truth_model_composite(sc)
        u = rng_label.choice(3, size=m, p=np.asarray(h["p"], dtype=float))
        v = rng_label.choice(3, size=m, p=np.asarray(h["q"], dtype=float))
        labels = np.where(u > 0, 1, 0) + 2 * np.where(v > 0, 1, 0)
        mus, thetas = truth.mus, truth.thetas
        kappas, psis = truth.kappas, truth.psis
    else:
        truth = _truth_model_standard(sc)
        labels = rng_label.choice(4, size=m, p=np.asarray(sc.pi_truth))
        u = np.isin(labels, (H10, H11)).astype(int)
        v = np.isin(labels, (H01, H11)).astype(int)
        mus = np.array([0.0, truth.mu])
        thetas = np.array([0.0, truth.theta])
        kappas = np.array([0.0, truth.kappa])
        psis = np.array([0.0, truth.psi])

    true_alpha = np.zeros(m)
    true_beta = np.zeros(m)
    m_mat = np.empty((n, m))
    y_mat = np.empty((n, m))
    interaction = sc.kind == "interaction"
    binary = sc.kind == "binary"

    for i in range(m):
        rng = hyp_rngs[i]
        alpha_i = (mus[u[i]] + rng.normal(0.0, math.sqrt(kappas[u[i]]))) / root_n \
            if u[i] > 0 else 0.0
        beta_i = (thetas[v[i]] + rng.normal(0.0, math.sqrt(psis[v[i]]))) / root_n \
            if v[i] > 0 else 0.0
        gamma_i = rng.normal(h["gamma_mean"], math.sqrt(h["gamma_var"]))
        # drawn unconditionally to keep the stream layout identical across
        # the continuous scenario kinds
        theta_draw = rng.normal(h.get("theta_int_mean", 0.0),
                                math.sqrt(h.get("theta_int_var", 0.0)))
        theta_i = theta_draw if interaction else 0.0
        e_i = rng.normal(0.0, h["sigma_a"], size=n)
        eps_i = rng.normal(0.0, h["sigma_b"], size=n)

        mi = x * alpha_i + e_i
        if z is not None:
            mi = mi + h["conf_m_coef"] * z
        lin = mi * beta_i + x * gamma_i
        if interaction:
            lin = lin + mi * x * theta_i
        if z is not None:
            lin = lin + h["conf_y_coef"] * z
        if binary:
            # the latent noise sits inside the link, matching the scenario
            # equation; the fitter deliberately omits it
            yi = (rng.uniform(size=n) < expit(lin)).astype(float)
        else:
            yi = lin + eps_i

        true_alpha[i] = alpha_i
        true_beta[i] = beta_i
        m_mat[:, i] = mi
        y_mat[:, i] = yi

    data = Dataset(x=x, m_mat=m_mat, y_mat=y_mat,
                   z_mat=None if z is None else z[:, None],
                   outcome_kind="binary" if binary else "continuous")
    return LabeledDataset(data=data, labels=labels, true_alpha=true_alpha,
                          true_beta=true_beta, truth_model=truth)


def sample_stats(model, var1, var2, seed: int, n: int = 1):
    """Draw (a, b) pairs directly from a mixture model.

    Used wherever statistics generated exactly from the working model are
    needed: estimator-recovery checks and Monte Carlo verification of the
    selection identities.  Returns (CoefStats, labels) where labels follow
    the H00/H10/H01/H11 coding.
    """
    var1 = np.asarray(var1, dtype=float)
    var2 = np.asarray(var2, dtype=float)
    m = var1.shape[0]
    gen = model.to_general() if isinstance(model, MixtureModel) else model
    rng = np.random.default_rng(seed)
    flat_pi = gen.pi_joint.reshape(-1)
    comp = rng.choice(flat_pi.size, size=m, p=flat_pi)
    u, v = np.divmod(comp, gen.pi_joint.shape[1])
    a = rng.normal(gen.mus[u], np.sqrt(var1 + gen.kappas[u]))
    b = rng.normal(gen.thetas[v], np.sqrt(var2 + gen.psis[v]))
    labels = np.where(u > 0, 1, 0) + 2 * np.where(v > 0, 1, 0)
    stats = CoefStats(a=a, b=b, var1=var1, var2=var2, n=n)
    return stats, labels
