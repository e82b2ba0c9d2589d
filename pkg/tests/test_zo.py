"""Zeroth-order estimator: worked values, oracles, and theory-bound checks."""

import numpy as np
import pytest

from splitsim import model, prng, zo
from splitsim.errors import DimensionMismatchError
from splitsim.model import Batch, SplitModelConfig, analytic_client_gradient, client_forward
from splitsim.zo import (
    ScalarProjections,
    TheoryConstants,
    ZoConfig,
    estimator_diagnostics,
    measure_regularity_bound,
    reconstruct_gradient,
    spsa_estimate,
    theory_bounds,
    zo_scalars,
)


def _forced_ones(seed, dim):
    return np.ones(dim)


def _rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


LINEAR_1D = SplitModelConfig((1, 1, 1), "identity", 1, "squared_error", bias=False)


class TestScalarProjections:
    def test_worked_linear_example(self):
        # z = theta * x with theta=2, x=1; lambda=3, mu=0.1, u=1 -> v = 3 * 0.1 = 0.3
        proj = zo_scalars(np.array([2.0]), np.array([[3.0]]), np.array([[2.0]]),
                          np.array([[1.0]]), [99], ZoConfig(P=1, mu=0.1), LINEAR_1D,
                          perturb_fn=_forced_ones)
        assert proj.values[0] == pytest.approx(0.3, rel=1e-12)

    def test_zero_feedback_zero_scalars(self):
        rng = _rng(0)
        cfg = SplitModelConfig((3, 4, 2), "tanh", 1)
        theta_c = rng.standard_normal(cfg.d_c)
        x = rng.standard_normal((2, 3))
        z = client_forward(theta_c, x, cfg)
        seeds = [prng.derive_stream(5, p) for p in range(4)]
        proj = zo_scalars(theta_c, np.zeros_like(z), z, x, seeds, ZoConfig(P=4, mu=1e-3), cfg)
        assert proj.values == (0.0, 0.0, 0.0, 0.0)

    def test_matches_definitional_oracle(self):
        # v_p literally equals lam . f(theta + mu u) - lam . f(theta)
        rng = _rng(1)
        cfg = SplitModelConfig((2, 3, 1), "tanh", 1)
        theta_c = rng.standard_normal(cfg.d_c)
        x = rng.standard_normal((3, 2))
        lam = rng.standard_normal((3, cfg.cut_width))
        z = client_forward(theta_c, x, cfg)
        mu = 1e-2
        seeds = [prng.derive_stream(6, p) for p in range(3)]
        proj = zo_scalars(theta_c, lam, z, x, seeds, ZoConfig(P=3, mu=mu), cfg)
        for p, seed in enumerate(seeds):
            u = prng.gaussian_vector(seed, cfg.d_c)
            direct = float(np.sum(lam * client_forward(theta_c + mu * u, x, cfg))
                           - np.sum(lam * z))
            assert abs(proj.values[p] - direct) <= 1e-12

    def test_theta_never_mutated(self):
        rng = _rng(2)
        cfg = SplitModelConfig((3, 3, 1), "relu", 1)
        theta_c = rng.standard_normal(cfg.d_c)
        before = theta_c.tobytes()
        x = rng.standard_normal((2, 3))
        z = client_forward(theta_c, x, cfg)
        zo_scalars(theta_c, np.ones_like(z), z, x, [1, 2], ZoConfig(P=2, mu=1e-3), cfg)
        assert theta_c.tobytes() == before

    def test_exactly_p_extra_forwards(self, monkeypatch):
        calls = {"n": 0}
        real = model.client_forward

        def counting(*args, **kwargs):
            calls["n"] += 1
            return real(*args, **kwargs)

        monkeypatch.setattr(model, "client_forward", counting)
        rng = _rng(3)
        cfg = SplitModelConfig((2, 2, 1), "tanh", 1)
        theta_c = rng.standard_normal(cfg.d_c)
        x = rng.standard_normal((2, 2))
        z = real(theta_c, x, cfg)
        zo_scalars(theta_c, np.ones_like(z), z, x, list(range(7)), ZoConfig(P=7, mu=1e-3), cfg)
        assert calls["n"] == 7

    def test_seed_count_must_match_p(self):
        with pytest.raises(DimensionMismatchError):
            zo_scalars(np.zeros(1), np.zeros((1, 1)), np.zeros((1, 1)),
                       np.ones((1, 1)), [1, 2], ZoConfig(P=3, mu=1e-3), LINEAR_1D)


class TestReconstruction:
    def test_zero_scalars_zero_vector(self):
        g = reconstruct_gradient([0.0, 0.0], [1, 2], ZoConfig(P=2, mu=1e-3), 5)
        assert np.all(g == 0.0)

    def test_worked_example_recovers_true_gradient(self):
        # continues the linear example: v=0.3, u=1, mu=0.1 -> g = 3 = lambda * x
        g = reconstruct_gradient([0.3], [99], ZoConfig(P=1, mu=0.1), 1,
                                 perturb_fn=_forced_ones)
        assert g.item() == pytest.approx(3.0, rel=1e-12)

    def test_linearity_doubling(self):
        seeds = [prng.derive_stream(9, p) for p in range(4)]
        v = [0.5, -1.25, 2.0, 0.125]
        cfgz = ZoConfig(P=4, mu=1e-2)
        a = reconstruct_gradient(v, seeds, cfgz, 6)
        b = reconstruct_gradient([2 * x for x in v], seeds, cfgz, 6)
        assert np.array_equal(2.0 * a, b)

    def test_length_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            reconstruct_gradient([1.0], [1, 2], ZoConfig(P=2, mu=1e-3), 3)

    def test_aggregation_reconstruction_commutes(self):
        # reconstructing from averaged scalars equals averaging reconstructions
        seeds = [prng.derive_stream(10, p) for p in range(3)]
        cfgz = ZoConfig(P=3, mu=1e-3)
        per_client = [[0.3, -0.1, 0.7], [0.2, 0.4, -0.5], [-0.9, 0.0, 0.1]]
        v_bar = [sum(col) / 3 for col in zip(*per_client)]
        direct = reconstruct_gradient(v_bar, seeds, cfgz, 8)
        averaged = np.mean([reconstruct_gradient(v, seeds, cfgz, 8) for v in per_client], axis=0)
        assert np.abs(direct - averaged).max() < 1e-12


class TestSpsa:
    def test_exact_on_quadratic(self):
        # L(theta_c) = theta_c^2 at theta_c=1 with direction (1, 0): estimate = 2
        batch = Batch(np.array([[1.0]]), np.array([[0.0]]))
        est = spsa_estimate(np.array([1.0, 1.0]), batch, 0.1, 0, LINEAR_1D,
                            perturb_fn=lambda s, d: np.array([1.0, 0.0]))
        assert est[0] == pytest.approx(2.0, rel=1e-9)
        assert est[1] == 0.0

    def test_constant_loss_zero_estimate(self):
        # all-zero inputs and labels make the loss identically zero
        batch = Batch(np.zeros((2, 1)), np.zeros((2, 1)))
        est = spsa_estimate(np.array([1.0, 1.0]), batch, 0.1, 3, LINEAR_1D)
        assert np.all(est == 0.0)

    def test_expectation_approaches_true_gradient(self):
        rng = _rng(4)
        cfg = SplitModelConfig((2, 1, 1), "identity", 1, "squared_error", bias=False)
        theta = rng.standard_normal(cfg.d)
        batch = Batch(rng.standard_normal((8, 2)), rng.standard_normal((8, 1)))
        # analytic full gradient via client gradient + server FD-free path
        g_c = analytic_client_gradient(theta, batch, cfg)
        z = client_forward(theta[: cfg.d_c], batch, cfg)
        _, g_s, _ = model.server_forward_backward(theta[cfg.d_c:], z, batch.labels, cfg)
        g_true = np.concatenate([g_c, g_s])
        n = 100000
        acc = np.zeros(cfg.d)
        for i in range(n):
            acc += spsa_estimate(theta, batch, 1e-4, prng.derive_stream(70, i), cfg)
        rel = np.linalg.norm(acc / n - g_true) / np.linalg.norm(g_true)
        assert rel < 0.02


class TestTheoryBounds:
    def test_expansion_factor_value(self):
        assert theory_bounds(3, 2, 1e-3, 1.0).c1 == 6.0

    def test_variance_floor_value(self):
        assert theory_bounds(1, 1, 0.1, 1.0).sigma_zo_sq == pytest.approx(0.075)

    def test_bias_bound_value(self):
        assert theory_bounds(1, 1, 0.1, 1.0).bias_bound_sq == pytest.approx(0.16)

    def test_positivity_validation(self):
        with pytest.raises(ValueError):
            theory_bounds(0, 1, 0.1, 1.0)

    def test_constants_record_validation(self):
        with pytest.raises(ValueError):
            TheoryConstants(gamma=-1.0)


class TestEstimatorDiagnostics:
    def test_linear_client_unbiased(self):
        # linear client: v = mu u.g exactly, so the estimator mean converges to g
        rng = _rng(5)
        cfg = SplitModelConfig((3, 2, 2), "identity", 1, "squared_error", bias=False)
        theta = rng.standard_normal(cfg.d)
        batch = Batch(rng.standard_normal((4, 3)), rng.standard_normal((4, 2)))
        diag = estimator_diagnostics(cfg, theta, batch, ZoConfig(P=1, mu=1e-3),
                                     n_trials=100000, seed=11)
        assert diag.empirical_bias_sq <= 1e-3 * diag.true_g_c_norm_sq

    def test_linear_client_mean_within_one_percent(self):
        # empirical mean over 1e5 fresh seeds lands within 1% of the true gradient
        rng = _rng(21)
        cfg = SplitModelConfig((2, 2, 1), "identity", 1, "squared_error", bias=False)
        theta = rng.standard_normal(cfg.d)
        batch = Batch(rng.standard_normal((4, 2)), rng.standard_normal((4, 1)))
        diag = estimator_diagnostics(cfg, theta, batch, ZoConfig(P=1, mu=1e-3),
                                     n_trials=100000, seed=77)
        rel = np.sqrt(diag.empirical_bias_sq / diag.true_g_c_norm_sq)
        assert rel < 0.01

    def test_bias_shrinks_quadratically_in_mu(self):
        # curved client: bias norm scales like mu^2, so halving mu cuts
        # the squared bias by about 16x
        rng = _rng(6)
        cfg = SplitModelConfig((2, 3, 1), "tanh", 1, "squared_error", bias=True)
        theta = rng.standard_normal(cfg.d)
        batch = Batch(rng.standard_normal((4, 2)), rng.standard_normal((4, 1)))
        hi, lo = zo.bias_curve(cfg, theta, batch, [2e-2, 1e-2], n_pairs=30000, seed=12)
        ratio = (hi / lo) ** 2
        assert 12.0 < ratio < 20.0

    def test_bias_log_log_slope_is_two(self):
        rng = _rng(7)
        cfg = SplitModelConfig((2, 3, 1), "tanh", 1, "squared_error", bias=True)
        theta = rng.standard_normal(cfg.d)
        batch = Batch(rng.standard_normal((4, 2)), rng.standard_normal((4, 1)))
        mus = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3]
        curve = zo.bias_curve(cfg, theta, batch, mus, n_pairs=20000, seed=13)
        slope = np.polyfit(np.log(mus), np.log(curve), 1)[0]
        assert abs(slope - 2.0) <= 0.2

    def test_variance_reduction_in_p(self):
        # total estimator variance shrinks by roughly P when P goes 1 -> 10
        rng = _rng(8)
        cfg = SplitModelConfig((3, 2, 1), "identity", 1, "squared_error", bias=False)
        theta = rng.standard_normal(cfg.d)
        batch = Batch(rng.standard_normal((4, 3)), rng.standard_normal((4, 1)))
        out = {}
        for P in (1, 10):
            diag = estimator_diagnostics(cfg, theta, batch, ZoConfig(P=P, mu=1e-3),
                                         n_trials=40000, seed=14)
            out[P] = diag.empirical_second_moment - diag.true_g_c_norm_sq
        ratio = out[1] / out[10]
        assert 5.0 <= ratio <= 15.0

    def test_second_moment_within_bound_on_random_instances(self):
        rng = _rng(9)
        hits = 0
        for i in range(20):
            act = ("tanh", "identity", "relu")[i % 3]
            cfg = SplitModelConfig(
                (int(rng.integers(2, 4)), int(rng.integers(2, 4)), 2),
                act, 1, "squared_error", bias=True,
            )
            theta = rng.standard_normal(cfg.d) * 0.7
            batch = Batch(rng.standard_normal((3, cfg.n_in)),
                          rng.standard_normal((3, 2)))
            zcfg = ZoConfig(P=4, mu=1e-3)
            diag = estimator_diagnostics(cfg, theta, batch, zcfg, n_trials=3000,
                                         seed=100 + i)
            gamma = measure_regularity_bound(theta, batch, cfg, seed=i)
            tb = theory_bounds(cfg.d_c, zcfg.P, zcfg.mu, gamma)
            if diag.empirical_second_moment <= tb.c1 * diag.true_g_c_norm_sq + tb.sigma_zo_sq:
                hits += 1
        assert hits >= 19

    def test_projection_metadata(self):
        proj = ScalarProjections((1.0, 2.0), round=3, client_id=7)
        assert proj.round == 3 and proj.client_id == 7
