import numpy as np
import pytest

from dmpfeedback.canonical import (
    CanonicalParams,
    PhaseState,
    canonical_step,
    default_kernel_bank,
    kernel_matrix,
    normalized_kernels,
    phase_kernels,
    phase_rollout,
)
from dmpfeedback.errors import ValidationError


def test_single_step_arithmetic():
    params = CanonicalParams(tau=1.0)
    nxt = canonical_step(PhaseState(), params, 1e-3)
    assert nxt.p == 1.0
    assert nxt.u == pytest.approx(-0.15625, abs=1e-15)


def test_converges_within_ten_tau():
    params = CanonicalParams(tau=0.7)
    dt = 1e-3 * params.tau
    p, u = phase_rollout(params, dt, 10_000)
    assert abs(p[-1]) < 1e-3 and abs(u[-1]) < 1e-3
    assert p.min() > -1e-6           # critical damping: no undershoot
    assert u[0] == 0.0 and abs(u).max() > 0.1  # velocity peaks in the interior


def test_matches_finer_step_oracle():
    params = CanonicalParams(tau=1.0)
    coarse_p, coarse_u = phase_rollout(params, 1e-3, 1000)
    fine_p, fine_u = phase_rollout(params, 1e-4, 10_000)
    # compare at shared times; explicit Euler at tau/1000 stays within ~1e-2
    assert np.abs(coarse_p - fine_p[::10]).max() < 2e-2
    assert np.abs(coarse_u - fine_u[::10]).max() < 2e-1


def test_time_rescaling():
    # stepping the 2*tau system at dt equals stepping tau at dt/2
    slow = CanonicalParams(tau=2.0)
    fast = CanonicalParams(tau=1.0)
    p_slow, u_slow = phase_rollout(slow, 1e-3, 2000)
    p_fast, u_fast = phase_rollout(fast, 5e-4, 2000)
    assert np.abs(p_slow - p_fast).max() < 1e-12
    assert np.abs(u_slow - u_fast).max() < 1e-12


def test_kernels_basic_properties():
    params = CanonicalParams(tau=1.0)
    bank = default_kernel_bank(25, params)
    for i in (0, 12, 24):
        psi = phase_kernels(bank.centers[i], bank)
        assert psi[i] == pytest.approx(1.0)
    rng = np.random.default_rng(0)
    for p in rng.uniform(-0.2, 1.2, size=20):
        psi = phase_kernels(p, bank)
        # mathematically strictly positive; the narrowest tail kernels
        # underflow to +0.0 in float64 far from their centers
        assert np.all(psi >= 0.0) and np.all(psi <= 1.0) and psi.max() > 0.0
        assert normalized_kernels(p, bank).sum() == pytest.approx(1.0, abs=1e-12)


def test_kernel_matrix_matches_pointwise():
    params = CanonicalParams(tau=1.0)
    bank = default_kernel_bank(10, params)
    ps = np.linspace(0, 1, 7)
    mat = kernel_matrix(ps, bank)
    for i, p in enumerate(ps):
        assert np.allclose(mat[i], normalized_kernels(p, bank))


def test_default_bank_centers():
    params = CanonicalParams(tau=1.0)
    bank = default_kernel_bank(25, params)
    assert bank.centers[0] == pytest.approx(1.0)      # t=0 maps to p=1
    assert np.all(np.diff(bank.centers) < 0.0)        # strictly decreasing
    assert np.all(bank.widths > 0.0)
    # centers sit on the phase trajectory at 25 equally spaced times,
    # verified against a 10x finer rollout
    fine_p, _ = phase_rollout(params, 1e-4, 10_000)
    fine_t = np.linspace(0.0, 1.0, 10_001)
    expected = np.interp(np.linspace(0.0, 1.0, 25), fine_t, fine_p)
    assert np.abs(bank.centers - expected).max() < 2e-2


def test_default_bank_span_argument():
    params = CanonicalParams(tau=5.0)
    bank = default_kernel_bank(25, params, span=1.0)
    full = default_kernel_bank(25, params)
    # spanning only the first fifth of tau keeps centers well above the tail
    assert bank.centers[-1] > full.centers[-1]
    assert bank.centers[0] == pytest.approx(1.0)


def test_validation():
    params = CanonicalParams(tau=1.0)
    with pytest.raises(ValidationError):
        default_kernel_bank(1, params)
    with pytest.raises(ValidationError):
        CanonicalParams(tau=-1.0)
    with pytest.raises(ValidationError):
        canonical_step(PhaseState(), params, 0.0)
    with pytest.raises(ValidationError):
        default_kernel_bank(5, params, span=2.0 * params.tau)
