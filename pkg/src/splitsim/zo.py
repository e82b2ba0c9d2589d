"""Client-side zeroth-order machinery.

Scalar projections from seeded perturbed forwards, gradient reconstruction
from aggregated scalars, the two-point full-model baseline estimator, and
the closed-form second-moment/bias constants with their empirical checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model, prng
from .errors import DimensionMismatchError, NumericalError
from .prng import axpy, gaussian_block, gaussian_vector


@dataclass(frozen=True)
class ZoConfig:
    """Perturbation count and smoothing scale for the client estimator."""

    P: int = 5
    mu: float = 1e-3

    def __post_init__(self):
        if self.P < 1:
            raise ValueError("P must be at least 1")
        if not 0.0 < self.mu < 1.0:
            raise ValueError("mu must lie in (0, 1)")


@dataclass
class ScalarProjections:
    """The P finite-difference scalars one client reports for one round."""

    values: tuple
    round: int = -1
    client_id: int = -1

    def __post_init__(self):
        self.values = tuple(float(v) for v in self.values)
        if not all(np.isfinite(self.values)):
            raise NumericalError("scalar projections must be finite")


def zo_scalars(theta_c: np.ndarray, lam: np.ndarray, z_anchor: np.ndarray, batch,
               seeds, zo: ZoConfig, cfg: model.SplitModelConfig,
               perturb_fn=gaussian_vector, round: int = -1,
               client_id: int = -1) -> ScalarProjections:
    """Finite-difference projections along P seeded Gaussian directions.

    v_p = <lam, f_c(theta_c + mu * u_p) - z_anchor> with u_p regenerated
    from seeds[p]. The caller supplies z_anchor = f_c(theta_c); exactly P
    extra forward passes run here and theta_c is never modified.
    """
    seeds = list(seeds)
    if len(seeds) != zo.P:
        raise DimensionMismatchError(f"expected {zo.P} seeds, got {len(seeds)}")
    theta_c = np.asarray(theta_c, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    z_anchor = np.asarray(z_anchor, dtype=np.float64)
    if lam.shape != z_anchor.shape:
        raise DimensionMismatchError(
            f"lambda {lam.shape} and anchor {z_anchor.shape} disagree"
        )
    values = []
    for seed in seeds:
        u = perturb_fn(seed, cfg.d_c)
        z_tilde = model.client_forward(theta_c + zo.mu * u, batch, cfg)
        v = float(np.einsum("bd,bd->", lam, z_tilde - z_anchor))
        if not np.isfinite(v):
            raise NumericalError("non-finite scalar projection")
        values.append(v)
    return ScalarProjections(tuple(values), round=round, client_id=client_id)


def reconstruct_gradient(aggregated_scalars, seeds, zo: ZoConfig, d_c: int,
                         perturb_fn=gaussian_vector) -> np.ndarray:
    """Rebuild the client update direction from broadcast (scalar, seed) pairs.

    g = (1 / (P * mu)) * sum_p v_p * u_p, accumulated in perturbation order
    and scaled once at the end. This exact order is the replay contract:
    live rounds and catch-up replay both go through here.
    """
    scalars = [float(v) for v in aggregated_scalars]
    seeds = list(seeds)
    if len(scalars) != zo.P or len(seeds) != zo.P:
        raise DimensionMismatchError(
            f"need {zo.P} scalars and seeds, got {len(scalars)} and {len(seeds)}"
        )
    acc = np.zeros(d_c)
    for v, seed in zip(scalars, seeds):
        acc = axpy(v, perturb_fn(seed, d_c), acc)
    return acc / np.float64(zo.P * zo.mu)


def spsa_estimate(theta: np.ndarray, batch: model.Batch, mu: float, seed: int,
                  cfg: model.SplitModelConfig, perturb_fn=gaussian_vector) -> np.ndarray:
    """Two-point central-difference estimate of the full-model gradient.

    g = [L(theta + mu*z) - L(theta - mu*z)] / (2*mu) * z, two forward passes
    of the composite model and no backward pass.
    """
    if mu <= 0:
        raise ValueError("mu must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    z = perturb_fn(seed, cfg.d)
    plus = model.full_loss(theta + mu * z, batch, cfg)
    minus = model.full_loss(theta - mu * z, batch, cfg)
    if not (np.isfinite(plus) and np.isfinite(minus)):
        raise NumericalError("non-finite loss in two-point estimate")
    return ((plus - minus) / (2.0 * mu)) * z


# -----------------------------------------------------------------------------
# Closed-form constants and empirical diagnostics
# -----------------------------------------------------------------------------

@dataclass(frozen=True)
class TheoryBounds:
    """Second-moment expansion factor, variance floor, and squared bias bound."""

    c1: float
    sigma_zo_sq: float
    bias_bound_sq: float
    d_c: int
    P: int
    mu: float
    gamma: float


@dataclass(frozen=True)
class TheoryConstants:
    """User-supplied analysis-side constants; not consumed at runtime."""

    gamma: float = 0.0
    sigma_sq: float = 0.0
    kappa_sq: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        for name in ("gamma", "sigma_sq", "kappa_sq", "beta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def theory_bounds(d_c: int, P: int, mu: float, gamma: float) -> TheoryBounds:
    """Closed-form constants governing the client estimator.

    c1 = 2 * (1 + (d_c + 1) / P)
    sigma_zo_sq = (mu^2 / 2) * d_c * (d_c + 2) * (d_c + 4) * gamma^4
    bias_bound_sq = (mu^2 * gamma^4 / 4) * (d_c + 3)^3
    """
    if d_c <= 0 or P <= 0 or mu <= 0 or gamma <= 0:
        raise ValueError("all inputs must be positive")
    c1 = 2.0 * (1.0 + (d_c + 1) / P)
    sigma_zo_sq = (mu ** 2 / 2.0) * d_c * (d_c + 2) * (d_c + 4) * gamma ** 4
    bias_bound_sq = (mu ** 2 * gamma ** 4 / 4.0) * (d_c + 3) ** 3
    return TheoryBounds(c1, sigma_zo_sq, bias_bound_sq, d_c, P, mu, gamma)


def measure_regularity_bound(theta: np.ndarray, batch: model.Batch,
                             cfg: model.SplitModelConfig, n_probe: int = 32,
                             step: float = 1e-4, seed: int = 0) -> float:
    """Instance-level regularity constant.

    Max of the feedback norm, the client Jacobian operator norm, and a
    finite-difference probe of the client Hessian operator norm along
    random directions.
    """
    theta = np.asarray(theta, dtype=np.float64)
    theta_c = theta[: cfg.d_c]
    z = model.client_forward(theta_c, batch, cfg)
    _, _, lam = model.server_forward_backward(theta[cfg.d_c:], z, batch.labels, cfg)
    lam_norm = float(np.linalg.norm(lam))
    jac = model.client_jacobian(theta_c, batch, cfg).reshape(-1, cfg.d_c)
    jac_norm = float(np.linalg.norm(jac, 2))
    hess = 0.0
    for i in range(n_probe):
        v = gaussian_vector(prng.derive_stream(seed, prng.STREAM_PROBE, i), cfg.d_c)
        v = v / np.linalg.norm(v)
        zp = model.client_forward(theta_c + step * v, batch, cfg)
        zm = model.client_forward(theta_c - step * v, batch, cfg)
        hvv = (zp - 2.0 * z + zm) / step ** 2
        hess = max(hess, float(np.linalg.norm(hvv)))
    return max(lam_norm, jac_norm, hess)


def _projection_block(theta_c, lam, z_anchor, batch, directions, mu, cfg):
    """v_i = <lam, f_c(theta_c + mu * U_i) - z_anchor> for a stack of directions."""
    z_tilde = model.client_forward_multi(theta_c[None, :] + mu * directions, batch, cfg)
    return np.einsum("nbd,bd->n", z_tilde - z_anchor[None], lam)


@dataclass(frozen=True)
class EstimatorDiagnostics:
    """Monte Carlo summary of the client estimator on one instance."""

    empirical_bias_sq: float
    empirical_second_moment: float
    true_g_c_norm_sq: float
    n_trials: int


def estimator_diagnostics(cfg: model.SplitModelConfig, theta: np.ndarray,
                          batch: model.Batch, zo: ZoConfig, n_trials: int,
                          seed: int = 0, chunk: int = 20000) -> EstimatorDiagnostics:
    """Monte Carlo over fresh seeds: mean estimate vs the analytic gradient.

    Each trial draws P fresh directions, forms the P-average estimate, and
    contributes to the running mean estimate and mean squared norm.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    theta = np.asarray(theta, dtype=np.float64)
    theta_c = theta[: cfg.d_c]
    z = model.client_forward(theta_c, batch, cfg)
    _, _, lam = model.server_forward_backward(theta[cfg.d_c:], z, batch.labels, cfg)
    g_true = model.client_backward_from_lambda(theta_c, batch, lam, cfg)

    sum_g = np.zeros(cfg.d_c)
    sum_sq = 0.0
    done = 0
    while done < n_trials:
        n = min(chunk, n_trials - done)
        seeds = [prng.derive_stream(seed, prng.STREAM_DIAG, done + t, p)
                 for t in range(n) for p in range(zo.P)]
        u = gaussian_block(seeds, cfg.d_c).reshape(n, zo.P, cfg.d_c)
        v = _projection_block(theta_c, lam, z, batch,
                              u.reshape(n * zo.P, cfg.d_c), zo.mu, cfg)
        v = v.reshape(n, zo.P)
        g_hat = np.einsum("np,npd->nd", v, u) / (zo.P * zo.mu)
        sum_g += g_hat.sum(axis=0)
        sum_sq += float(np.sum(g_hat * g_hat))
        done += n
    mean_g = sum_g / n_trials
    bias = mean_g - g_true
    return EstimatorDiagnostics(
        empirical_bias_sq=float(bias @ bias),
        empirical_second_moment=sum_sq / n_trials,
        true_g_c_norm_sq=float(g_true @ g_true),
        n_trials=n_trials,
    )


def bias_curve(cfg: model.SplitModelConfig, theta: np.ndarray, batch: model.Batch,
               mus, n_pairs: int = 20000, seed: int = 0) -> list:
    """Empirical estimator bias norm at each smoothing scale.

    Uses antithetic direction pairs with common random numbers across scales
    and subtracts the known linear term (standard variance reduction; the
    estimate of E[g_hat] - g_c stays unbiased). Returns one bias norm per mu.
    """
    theta = np.asarray(theta, dtype=np.float64)
    theta_c = theta[: cfg.d_c]
    z = model.client_forward(theta_c, batch, cfg)
    _, _, lam = model.server_forward_backward(theta[cfg.d_c:], z, batch.labels, cfg)
    g_true = model.client_backward_from_lambda(theta_c, batch, lam, cfg)
    seeds = [prng.derive_stream(seed, prng.STREAM_DIAG, i) for i in range(n_pairs)]
    u = gaussian_block(seeds, cfg.d_c)
    lin = u @ g_true
    out = []
    for mu in mus:
        v_plus = _projection_block(theta_c, lam, z, batch, u, mu, cfg)
        v_minus = _projection_block(theta_c, lam, z, batch, -u, mu, cfg)
        resid = v_plus - v_minus - 2.0 * mu * lin
        bias_vec = (resid[:, None] * u).sum(axis=0) / (2.0 * n_pairs * mu)
        out.append(float(np.linalg.norm(bias_vec)))
    return out
