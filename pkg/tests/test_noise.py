import json
import math

import numpy as np
import pytest

from aaphase.control import ControlSignal, loop_control
from aaphase.dynamics import MASS_RB87, AtomPairState, Setup, integrate
from aaphase.noise import (QUANTITIES, NoiseParams, fd_histogram, langevin_integrate,
                           ou_coefficients, realization_rng, run_ensemble)
from aaphase.optimal_control import Problem, Weights
from aaphase.tweezer import TweezerField
from aaphase.units import C3_DEFAULT, millikelvin_to_rad_per_us

B = (0.0, 19.0)
FIELDS = (TweezerField.from_millikelvin(10, 2.0), TweezerField.from_millikelvin(4, 2.0, B))
REST = AtomPairState((0.0, 0.0), B, psi=[1, 0, 0, 0])


def short_problem(T=3.0):
    return Problem(Setup(FIELDS), (0.0, 0.0), B, [1, 0, 0, 0], Weights(), T=T, n=30)


def test_params_validation():
    with pytest.raises(ValueError):
        NoiseParams(-1.0, 0.1)
    with pytest.raises(ValueError):
        NoiseParams(1e-4, -0.1)
    with pytest.raises(ValueError):
        NoiseParams(1e-4, 0.1, n_realizations=0)
    with pytest.raises(ValueError):
        NoiseParams(1e-4, 0.1, seed=2**64)


def test_unit_conversions():
    p = NoiseParams(1e-4, 0.05)
    assert p.kT == pytest.approx(millikelvin_to_rad_per_us(0.1))
    assert p.gamma == pytest.approx(5e-5)


def test_ou_coefficients():
    p = NoiseParams(1e-4, 1000.0)
    damp, sd = ou_coefficients(p, 1e-3, MASS_RB87)
    assert damp == pytest.approx(math.exp(-1e-3))
    assert sd**2 == pytest.approx(p.kT * MASS_RB87 * (1 - math.exp(-2e-3)))
    assert ou_coefficients(NoiseParams(1e-4, 0.0), 1e-3, MASS_RB87) == (1.0, 0.0)


def test_lambda_zero_is_bit_identical_to_deterministic():
    ctrl = loop_control(3.0, 30, (0.0, 0.0), (0.0, -0.5), (0.5, 0.5))
    det = integrate(REST, ctrl, FIELDS)
    noisy = langevin_integrate(REST, ctrl, FIELDS, C3_DEFAULT, NoiseParams(1e-4, 0.0, seed=5),
                               1e-3)
    np.testing.assert_array_equal(noisy.y, det.y)
    np.testing.assert_array_equal(noisy.psi, det.psi)


def test_fixed_seed_is_deterministic():
    ctrl = ControlSignal.constant(3.0, 30, (0.0, 0.0))
    p = NoiseParams(1e-4, 100.0, seed=11)
    a = langevin_integrate(REST, ctrl, FIELDS, 0.0, p, 1e-3, index=3)
    b = langevin_integrate(REST, ctrl, FIELDS, 0.0, p, 1e-3, index=3)
    c = langevin_integrate(REST, ctrl, FIELDS, 0.0, p, 1e-3, index=4)
    np.testing.assert_array_equal(a.y, b.y)
    assert np.any(a.y != c.y)


def test_substreams_do_not_depend_on_ensemble_size():
    x = realization_rng(7, 2).standard_normal(5)
    np.testing.assert_array_equal(x, realization_rng(7, 2).standard_normal(5))
    prob = short_problem()
    ctrl = ControlSignal.constant(3.0, 30, (0.0, 0.0))
    small = run_ensemble(ctrl, prob, NoiseParams(1e-4, 100.0, seed=3, n_realizations=3))
    large = run_ensemble(ctrl, prob, NoiseParams(1e-4, 100.0, seed=3, n_realizations=5))
    assert small.rows == large.rows[:3]


def test_worker_count_does_not_change_results():
    prob = short_problem()
    ctrl = ControlSignal.constant(3.0, 30, (0.0, 0.0))
    a = run_ensemble(ctrl, prob, NoiseParams(1e-4, 100.0, seed=3, n_realizations=6))
    b = run_ensemble(ctrl, prob, NoiseParams(1e-4, 100.0, seed=3, n_realizations=6, workers=3))
    assert a.rows == b.rows and a.mean == b.mean


def test_noise_free_ensemble_has_zero_spread():
    ctrl = loop_control(3.0, 30, (0.0, 0.0), (0.0, -0.5), (0.5, 0.5))
    stats = run_ensemble(ctrl, short_problem(), NoiseParams(0.0, 0.0, n_realizations=5))
    assert all(stats.std[q] == 0.0 for q in QUANTITIES)
    assert stats.n_lost == 0


def test_moments_and_histograms_consistent(tmp_path):
    prob = short_problem()
    ctrl = ControlSignal.constant(3.0, 30, (0.0, 0.0))
    stats = run_ensemble(ctrl, prob, NoiseParams(1e-4, 100.0, seed=9, n_realizations=20))
    for q in QUANTITIES:
        x = stats.values(q)
        assert stats.mean[q] == pytest.approx(np.mean(x), rel=1e-12, abs=1e-12)
        assert stats.std[q] == pytest.approx(np.std(x), rel=1e-12, abs=1e-12)
        assert stats.histograms[q].counts.sum() == x.size
    stats.to_json(tmp_path / "s.json")
    stats.to_csv(tmp_path / "s.csv")
    d = json.loads((tmp_path / "s.json").read_text())
    assert d["metadata"]["rng"].startswith("numpy.random.Philox")
    assert len((tmp_path / "s.csv").read_text().strip().splitlines()) == 21


def test_histogram_binning():
    x = np.random.default_rng(0).normal(size=500)
    h = fd_histogram(x)
    np.testing.assert_allclose(h.edges, np.histogram_bin_edges(x, bins="fd"))
    # a single far outlier would give thousands of FD bins: Sturges takes over
    y = np.concatenate([np.zeros(100) + np.linspace(0, 1e-6, 100), [1.0]])
    assert fd_histogram(y).edges.size - 1 <= 200


def test_escape_counts_as_loss():
    # move the tweezer away abruptly: the atom is left behind, far from every trap
    t = np.linspace(0, 3.0, 31)
    ux = np.where(t > 0.15, 10.0, 0.0)
    ux[-1] = 10.0
    ctrl = ControlSignal(t, ux, np.zeros_like(t))
    stats = run_ensemble(ctrl, short_problem(), NoiseParams(0.0, 0.0, n_realizations=2))
    assert stats.n_lost == 2
    assert all(r["reason"] == "escape" for r in stats.rows)
    assert math.isnan(stats.mean["eps1"])


def _mean_kinetic_per_dof(temperature_k, n=100, T=12.0, burn=4.0):
    noise = NoiseParams(temperature_k, 1000.0, seed=1)
    ctrl = ControlSignal.constant(T, 120, (0.0, 0.0))
    vals = []
    for i in range(n):
        rec = langevin_integrate(REST, ctrl, FIELDS, 0.0, noise, 1e-3, index=i)
        keep = rec.t >= burn
        p = rec.y[keep, 4:8]
        vals.append(np.mean(p**2, axis=0) / (2 * MASS_RB87))
    vals = np.array(vals)
    return vals.mean(), vals.mean(axis=1).std(ddof=1) / math.sqrt(n), noise.kT


def test_equipartition():
    ke, err, kT = _mean_kinetic_per_dof(1e-4)
    assert ke == pytest.approx(0.5 * kT, rel=0.10)


def test_temperature_scaling_of_momentum_variance():
    k1, e1, _ = _mean_kinetic_per_dof(1e-4, n=60)
    k2, e2, _ = _mean_kinetic_per_dof(2e-4, n=60)
    ratio = k2 / k1
    sigma = ratio * math.hypot(e1 / k1, e2 / k2)
    assert abs(ratio - 2.0) <= 3 * sigma
