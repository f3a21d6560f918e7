from dataclasses import dataclass, replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from epmcmc.model import GaussianConjugate, GaussianMixtureMeans, Target, full_target, generate_synthetic, partition
from epmcmc.sampler import (
    WORKERS_ENV,
    MHConfig,
    SamplerError,
    burn_in_count,
    remove_burn_in,
    run_mh,
    run_subposteriors,
    worker_limit,
)


def standard_normal_target(d=1):
    return Target(GaussianConjugate(dim=d, prior_var=1.0), np.empty((0, d)))


@dataclass(frozen=True)
class DoubleWell:
    """``log p(x) = -depth * (x^2 - 1)^2``, symmetric wells at +-1."""

    depth: float = 2.0
    kind = "double_well"
    dim = 1
    label_blocks = None

    def log_prior(self, theta):
        return float(-self.depth * (theta[0] ** 2 - 1.0) ** 2)

    def log_lik(self, records, theta):
        return 0.0

    def init_point(self):
        return np.zeros(1)


def test_standard_normal_moments():
    out = run_mh(standard_normal_target(), cfg=MHConfig(iterations=50_000, proposal_scale=2.4, seed=1))
    x = remove_burn_in(out.samples)[:, 0]
    assert abs(x.mean()) < 0.05
    assert abs(x.var() - 1.0) < 0.1
    assert 0.2 < out.accept_rate < 0.6


def test_tiny_proposal_accepts_almost_everything():
    out = run_mh(standard_normal_target(), init=[0.3], cfg=MHConfig(iterations=2000, proposal_scale=1e-8, seed=0))
    assert out.accept_rate > 0.999
    assert np.ptp(out.samples) < 1e-5


def test_chain_is_deterministic():
    cfg = MHConfig(iterations=500, proposal_scale=0.7, seed=42, adapt=True, adapt_steps=300)
    a = run_mh(standard_normal_target(2), cfg=cfg)
    b = run_mh(standard_normal_target(2), cfg=cfg)
    np.testing.assert_array_equal(a.samples, b.samples)
    assert a.n_accept == b.n_accept
    c = run_mh(standard_normal_target(2), cfg=replace(cfg, seed=43))
    assert not np.array_equal(a.samples, c.samples)


def test_accept_count_consistent_with_path():
    out = run_mh(standard_normal_target(), init=[0.0], cfg=MHConfig(iterations=3000, proposal_scale=1.0, seed=5))
    moves = np.count_nonzero(np.any(np.diff(np.vstack([[0.0], out.samples]), axis=0) != 0, axis=1))
    assert moves == out.n_accept
    assert out.accept_rate == pytest.approx(out.n_accept / 3000)
    assert np.all(np.isfinite(out.samples))
    assert np.all(np.diff(out.times) >= 0)


def test_double_well_occupancy_is_symmetric():
    target = Target(DoubleWell(), np.empty((0, 1)))
    out = run_mh(target, cfg=MHConfig(iterations=300_000, proposal_scale=1.0, seed=3))
    right = np.mean(out.samples[:, 0] > 0)
    assert abs(right - 0.5) < 0.02


def test_init_outside_support_is_rejected():
    target = Target(DoubleWell(depth=np.inf), np.empty((0, 1)))
    with pytest.raises(SamplerError):
        run_mh(target, init=[0.5], cfg=MHConfig(iterations=10))


def test_nonfinite_proposals_are_rejected_and_counted():
    from epmcmc.model import PoissonGamma

    model = PoissonGamma()
    ds, _ = generate_synthetic(model, 30, seed=0)
    out = run_mh(full_target(model, ds), cfg=MHConfig(iterations=400, proposal_scale=300.0, seed=2))
    assert out.n_nonfinite > 0
    assert np.all(np.isfinite(out.samples))


def test_adaptation_moves_scale_toward_target_rate():
    cfg = MHConfig(iterations=4000, proposal_scale=50.0, seed=0, adapt=True, adapt_steps=2000)
    out = run_mh(standard_normal_target(), cfg=cfg)
    assert out.adapt_iterations == 2000
    assert out.proposal_scale[0] < 10.0
    assert 0.1 < out.accept_rate < 0.6
    assert len(out.samples) == 4000


def test_label_permutation_visits_both_labelings():
    model = GaussianMixtureMeans(K=2, data_dim=1)
    ds, _ = generate_synthetic(model, 200, seed=0, true_params=[-3.0, 3.0])
    cfg = MHConfig(iterations=4000, proposal_scale=0.2, seed=1, permute_labels=True)
    out = run_mh(full_target(model, ds), init=[-3.0, 3.0], cfg=cfg)
    first = out.samples[:, 0]
    assert np.mean(first > 0) > 0.3 and np.mean(first < 0) > 0.3
    with pytest.raises(SamplerError):
        run_mh(standard_normal_target(), cfg=MHConfig(iterations=5, permute_labels=True))


@pytest.mark.parametrize("bad", [{"iterations": 0}, {"proposal_scale": 0.0}, {"proposal_scale": (1.0, -1.0)}])
def test_config_validation(bad):
    with pytest.raises(SamplerError):
        MHConfig(**bad)


# -- burn-in --------------------------------------------------------------------


def test_burn_in_six_rows_keeps_five():
    x = np.arange(6.0)[:, None]
    np.testing.assert_array_equal(remove_burn_in(x), x[1:])


def test_burn_in_five_rows_keeps_all():
    x = np.arange(5.0)[:, None]
    np.testing.assert_array_equal(remove_burn_in(x), x)


def test_burn_in_zero_fraction_is_identity():
    x = np.random.default_rng(0).normal(size=(7, 2))
    np.testing.assert_array_equal(remove_burn_in(x, 0.0), x)


def test_burn_in_errors():
    with pytest.raises(SamplerError):
        remove_burn_in(np.empty((0, 1)))
    with pytest.raises(SamplerError):
        remove_burn_in(np.ones((3, 1)), 1.0)


@given(T=st.integers(1, 100_000))
def test_burn_in_count_is_floor_of_a_sixth(T):
    assert burn_in_count(T) == T // 6
    assert len(remove_burn_in(np.zeros((T, 1)))) == T - T // 6


# -- subposterior fan-out ----------------------------------------------------------


def _conjugate_shards(M, N=400, seed=0):
    model = GaussianConjugate(dim=1, prior_var=4.0, lik_var=1.0)
    ds, _ = generate_synthetic(model, N, seed=seed)
    return model, ds, partition(ds, M, seed=1)


def test_single_machine_is_full_posterior_chain():
    model, ds, shards = _conjugate_shards(1)
    cfg = MHConfig(iterations=600, proposal_scale=0.1, seed=0)
    (sub,) = run_subposteriors(model, shards, cfg, base_seed=10)
    full = run_mh(full_target(model, ds), cfg=replace(cfg, seed=11))
    np.testing.assert_array_equal(sub.samples, remove_burn_in(full.samples))
    assert (sub.m, sub.M, sub.seed) == (1, 1, 11)


def test_serial_and_parallel_runs_agree(monkeypatch):
    model, _, shards = _conjugate_shards(3)
    cfg = MHConfig(iterations=800, proposal_scale=0.1, seed=0)
    serial = run_subposteriors(model, shards, cfg, base_seed=5, workers=1)
    monkeypatch.setenv(WORKERS_ENV, "3")
    parallel = run_subposteriors(model, shards, cfg, base_seed=5)
    for a, b in zip(serial, parallel):
        assert a.samples.tobytes() == b.samples.tobytes()
        assert a.seed == b.seed == 5 + a.m


def test_subposterior_chain_means_match_conjugacy():
    model, _, shards = _conjugate_shards(2, N=1000, seed=4)
    cfg = MHConfig(iterations=30_000, proposal_scale=0.1, seed=0, adapt=True)
    subs = run_subposteriors(model, shards, cfg, base_seed=0)
    for sub, shard in zip(subs, shards):
        mean, var = model.posterior(shard.records, prior_weight=1.0 / shard.M)
        x = sub.samples[:, 0]
        # effective sample size from lag autocorrelations (initial positive sequence)
        xc = x - x.mean()
        acf = np.correlate(xc[:5000], xc[:5000], "full")[4999:] / (xc[:5000] @ xc[:5000])
        tau = 1 + 2 * sum(r for r in acf[1:500] if r > 0)
        se = np.sqrt(var / (len(x) / tau))
        assert abs(x.mean() - mean[0]) < 3 * se


def test_chain_errors_name_the_shard():
    model, _, shards = _conjugate_shards(2)
    with pytest.raises(SamplerError, match="shard 1 of 2"):
        run_subposteriors(model, shards, MHConfig(iterations=10), base_seed=0, init=[np.inf])


def test_mixed_datasets_rejected():
    model, _, a = _conjugate_shards(2, seed=0)
    _, _, b = _conjugate_shards(2, seed=1)
    b = [replace(s, parent_id="other") for s in b]
    with pytest.raises(SamplerError):
        run_subposteriors(model, [a[0], b[1]], MHConfig(iterations=10), base_seed=0)


def test_worker_limit_reads_environment(monkeypatch):
    monkeypatch.setenv(WORKERS_ENV, "4")
    assert worker_limit() == 4
    assert worker_limit(2) == 2
    monkeypatch.setenv(WORKERS_ENV, "0")
    assert worker_limit() == 1
