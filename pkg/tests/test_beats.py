import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qbeats.beats import (CorrelationTrace, NormalizationError, antibunching_end, click,
                          conditional_state_after_click, default_tau_grid, extrema,
                          fringe_metrics, g2_fixed_coupling, g2_undriven, mean_photon,
                          pre_click_state, predictability_of, qubit_block, spectral_peak,
                          truncation_convergence)
from qbeats.hilbert import AtomicLevel, build_basis
from qbeats.liouville import (DensityMatrix, SystemParams, make_generator, pumping_rate_estimate,
                              steady_state)

L = AtomicLevel


def synthetic(values_fn, tau_max=40.0, n=4001, **meta):
    tau = np.linspace(0, tau_max, n)
    return CorrelationTrace(tau, values_fn(tau), "normalized-g2", meta)


# -- trace container -------------------------------------------------------------------------

def test_csv_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(3)
    tr = CorrelationTrace(np.linspace(0, 1, 11), rng.random(11), "normalized-g2", {},
                          rng.random(11))
    text = tr.to_csv(tmp_path / "t.csv", comments={"config_sha256": "abc"})
    assert text.splitlines()[0] == "# config_sha256=abc"
    assert text.splitlines()[1] == "tau,gvalue,stderr"
    back = CorrelationTrace.from_csv(tmp_path / "t.csv")
    assert np.array_equal(back.values, tr.values) and np.array_equal(back.stderr, tr.stderr)
    assert tr.to_csv(stderr=False).splitlines()[0] == "tau,gvalue"


@pytest.mark.parametrize("tau, values", [
    ([0, 1, 3], [1, 1, 1]),          # non-uniform
    ([0, 1, 1], [1, 1, 1]),          # not increasing
    ([0, 1, 2], [1, -1e-3, 1]),      # negative intensity
])
def test_trace_invariants(tau, values):
    with pytest.raises(ValueError):
        CorrelationTrace(np.array(tau, float), np.array(values, float), "normalized-g2")


# -- fringe analysis on synthetic signals ---------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(vis=st.floats(0.1, 0.95), omega=st.floats(0.6, 2.0), phase=st.floats(0, 2 * math.pi))
def test_visibility_and_frequency_of_pure_cosine(vis, omega, phase):
    tr = synthetic(lambda t: 1 + vis * np.cos(omega * t + phase), tau_max=60, n=6001)
    fm = fringe_metrics(tr, window=(5.0, 5.0 + 2 * 2 * math.pi / omega + 0.5))
    assert fm.visibility == pytest.approx(vis, abs=2e-3)
    assert fm.beat_frequency == pytest.approx(omega, rel=1e-3)
    mins = np.array(fm.minima_positions)
    expect = (math.pi - phase) / omega
    assert np.allclose(np.mod(mins - expect + math.pi / omega, 2 * math.pi / omega),
                       math.pi / omega, atol=2e-3)


def test_flat_trace_reports_zero_visibility():
    fm = fringe_metrics(synthetic(lambda t: 1 - np.exp(-t)), predictability=1.0)
    assert fm.flat and fm.visibility == 0.0
    assert fm.complementarity == 1.0


def test_spectral_peak_of_synthetic_trend_plus_beat():
    tr = synthetic(lambda t: 2 - np.exp(-t / 3) + 0.5 * np.cos(1.0 * t), tau_max=160, n=4096)
    assert spectral_peak(tr, trend_period=2 * math.pi) == pytest.approx(1.0, rel=5e-3)


def test_extrema_refinement_is_subgrid():
    tr = synthetic(lambda t: 1 + np.cos(t - 0.123), tau_max=20, n=201)
    maxima, minima = extrema(tr)
    assert maxima[0][0] == pytest.approx(0.123 + 2 * math.pi, abs=2e-3)


# -- states ---------------------------------------------------------------------------------

def test_mean_photon_of_fock_states():
    b = build_basis(n1_max=3, n2_max=2)
    assert mean_photon(DensityMatrix.basis_state(b, L.B_0), "undriven") == 0
    assert mean_photon(DensityMatrix.basis_state(b, L.B_0, 1, 2), "undriven") == 2
    assert mean_photon(DensityMatrix.basis_state(b, L.B_0, 3, 0), "driven") == 3


def test_weak_drive_intensity_bound(rho_ss):
    assert 0 < mean_photon(rho_ss) < 1e-3


def test_click_is_photon_subtraction():
    b = build_basis(n1_max=1, n2_max=2)
    x = click(DensityMatrix.basis_state(b, L.B_M1, 1, 2), b)
    assert np.isclose(x[b.index(L.B_M1, 1, 1), b.index(L.B_M1, 1, 1)], 2.0)
    assert np.isclose(np.trace(x).real, 2.0)


def test_click_without_photons_raises():
    b = build_basis(n1_max=1, n2_max=1)
    with pytest.raises(NormalizationError):
        conditional_state_after_click(DensityMatrix.basis_state(b, L.B_0, 1, 0))


def test_heralded_superposition(rho_ss):
    c = conditional_state_after_click(rho_ss)
    q = qubit_block(c)
    p_m, p_p = q[0, 0].real, q[1, 1].real
    assert abs(p_m - p_p) < 0.01 * max(p_m, p_p)
    assert abs(q[1, 0]) / p_m >= 0.95
    assert predictability_of(c) < 0.01


@pytest.mark.parametrize("delta, kappa", [(0.5, 0.5), (0.25, 0.5), (0.5, 0.25)])
def test_heralded_phase_is_cavity_filter_phase(basis, delta, kappa):
    """The relative b+1/b-1 phase equals 2 arctan(delta / kappa) (Lorentzian filter of the two paths)."""
    gen = make_generator(SystemParams(delta=delta, kappa=kappa), basis)
    q = qubit_block(conditional_state_after_click(pre_click_state(gen, "pumped")))
    assert cmath.phase(q[1, 0]) == pytest.approx(2 * math.atan(delta / kappa), abs=2e-3)


# -- correlation traces ---------------------------------------------------------------------

def test_g2_weak_drive_regime(g2_trace):
    assert g2_trace.metadata["flags"] == []
    fm = fringe_metrics(g2_trace)
    assert not fm.flat
    maxima, _ = extrema(g2_trace)
    assert g2_trace.values[0] < maxima[0][1]
    # minima of the fully developed beat sit at odd multiples of pi / (2 delta)
    for m in fm.minima_positions[:4]:
        n = round((m * 0.5 / (math.pi / 2) - 1) / 2)
        assert m == pytest.approx((2 * n + 1) * math.pi, rel=0.02)
    assert fm.beat_frequency == pytest.approx(1.0, rel=0.02)
    assert antibunching_end(g2_trace) == pytest.approx(maxima[0][0])


def test_g2_zero_intensity_raises(basis):
    gen = make_generator(SystemParams(g=0.0), basis)
    rho = DensityMatrix.basis_state(basis, L.B_0)
    with pytest.raises(NormalizationError):
        g2_undriven(rho, gen, default_tau_grid(1.0, 11))


def test_g2_relaxes_to_unity_on_pumping_time(basis):
    params = SystemParams(drive=0.25)
    t_end = 50.0 / pumping_rate_estimate(params)
    tau = np.linspace(0.0, t_end, 201)
    tr = g2_fixed_coupling(params, basis, tau)
    assert tr.values[-1] == pytest.approx(1.0, rel=0.05)


def test_drive_visibility_monotone(basis):
    vis = []
    for drive in (1 / 64, 1 / 16, 1 / 4):
        tr = g2_fixed_coupling(SystemParams(drive=drive), basis, default_tau_grid())
        vis.append(fringe_metrics(tr).visibility)
    assert vis[0] > vis[1] > vis[2]


def test_truncation_convergence(params):
    change = truncation_convergence(params, default_tau_grid(25.0, 2048), 3, 2,
                                    window=(5.0, 25.0))
    assert change < 5e-3


def test_truncation_doubling_default_base(params):
    """Doubling both truncations from (3, 2) to (6, 4)."""
    change = truncation_convergence(params, default_tau_grid(25.0, 2048), 3, 2,
                                    window=(5.0, 25.0), doubled=True)
    assert change < 5e-3


def test_krylov_steady_state_matches_direct(params, basis):
    from qbeats.liouville import _solve_stationary_krylov
    gen = make_generator(params, basis)
    direct = steady_state(gen).matrix
    assert np.max(np.abs(_solve_stationary_krylov(gen, 1e-10) - direct)) < 1e-9
