import math
import os

import mpmath
import numpy as np
import pytest
from flint import acb, acb_mat, arb, ctx
from hypothesis import given, strategies as st

from qddlab import hpmath as hm

from conftest import bloch_to_rho, random_density_matrix, random_hermitian


def test_default_precision_is_120_digits():
    assert hm.current_digits() == 120


def test_env_var_sets_default(monkeypatch):
    monkeypatch.setenv(hm.DIGITS_ENV, "60")
    assert hm.default_digits() == 60
    monkeypatch.setenv(hm.DIGITS_ENV, "ten")
    with pytest.raises(ValueError):
        hm.default_digits()
    monkeypatch.setenv(hm.DIGITS_ENV, "5")
    with pytest.raises(ValueError):
        hm.default_digits()


def test_working_precision_restores():
    before = ctx.prec
    with hm.working_precision(40):
        assert hm.current_digits() == 40
        with hm.working_precision(200):
            assert hm.current_digits() == 200
        assert hm.current_digits() == 40
    assert ctx.prec == before


def test_hp_parses_decimals_at_working_precision():
    mpmath.mp.dps = 130
    got = hm.to_decimal(hm.hp("0.1") * 3, 110)
    assert mpmath.mpf(got) == pytest.approx(mpmath.mpf("0.3"), abs=mpmath.mpf(10) ** -115)
    assert hm.hp(0.5) == arb(1) / 2
    with pytest.raises(ValueError):
        hm.hp("abc")
    with pytest.raises(ValueError):
        hm.hp(float("nan"))


def test_log10_and_factorial():
    assert hm.log10(hm.hp("1e-300")) == pytest.approx(-300)
    assert hm.log10(arb(0)) == -math.inf
    assert hm.factorial(5) == 120


def test_kron_matches_numpy(rng):
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(3, 2)) + 1j
    got = hm.to_numpy(hm.kron(hm.from_numpy(a), hm.from_numpy(b)))
    assert np.allclose(got, np.kron(a, b), atol=1e-14)


@given(st.floats(1e-6, 300), st.integers(0, 2**32 - 1))
def test_expm_matches_flint_oracle(scale, seed):
    # flint's own exponential is an independent implementation
    h = hm.from_numpy(random_hermitian(np.random.default_rng(seed), 4, scale))
    a = (h * acb(0, -1)).mid()
    diff = hm.max_abs(hm.expm(a) - a.exp())
    assert diff < hm.tolerance(10)


def test_expm_zero_and_diagonal():
    assert hm.max_abs(hm.expm(hm.zeros(3)) - hm.identity(3)) == 0
    d = hm.from_entries([[acb(2), 0], [0, acb(0, 1)]])
    e = hm.expm(d)
    assert abs(e[0, 0] - arb(2).exp()) < hm.tolerance(5)
    assert abs(e[1, 1] - acb(0, 1).exp()) < hm.tolerance(5)
    assert abs(e[0, 1]) < hm.tolerance(5)


@given(st.integers(0, 2**32 - 1), st.floats(1e-8, 50))
def test_propagator_is_unitary(seed, t):
    h = hm.from_numpy(random_hermitian(np.random.default_rng(seed), 8))
    u = hm.mat_exp_i(h, t)
    assert hm.max_abs(u * hm.dagger(u) - hm.identity(8)) < hm.tolerance(12)


def test_mat_exp_i_rejects_non_hermitian():
    with pytest.raises(ValueError):
        hm.mat_exp_i(hm.from_numpy(np.array([[0, 1], [0, 0]])), 1)


@given(st.integers(0, 2**32 - 1), st.floats(1e-9, 20))
def test_direct_action_matches_matrix(seed, t):
    r = np.random.default_rng(seed)
    h = hm.from_numpy(random_hermitian(r, 8))
    v = hm.from_numpy(r.normal(size=(8, 1)) + 0j)
    diff = hm.max_abs(hm.exp_i_apply(h, t, v) - hm.mat_exp_i(h, t) * v)
    assert diff < hm.tolerance(12) * hm.vector_norm(v)


def test_partial_trace_matches_numpy(rng):
    psi = rng.normal(size=16) + 1j * rng.normal(size=16)
    psi /= np.linalg.norm(psi)
    m = psi.reshape(2, 8)
    want = np.einsum("ib,jb->ij", m, m.conj())
    got = hm.to_numpy(hm.partial_trace_bath(hm.from_numpy(psi.reshape(16, 1)), 3))
    assert np.allclose(got, want, atol=1e-14)
    with pytest.raises(ValueError):
        hm.partial_trace_bath(hm.from_numpy(np.ones((6, 1))))
    with pytest.raises(ValueError):
        hm.partial_trace_bath(hm.from_numpy(psi.reshape(16, 1)), 4)


def _numpy_trace_distance(a, b):
    return 0.5 * np.abs(np.linalg.eigvalsh(a - b)).sum()


def _numpy_fidelity(a, b):
    w, v = np.linalg.eigh(a)
    sa = v @ np.diag(np.sqrt(np.clip(w, 0, None))) @ v.conj().T
    return np.sqrt(np.clip(np.linalg.eigvalsh(sa @ b @ sa), 0, None)).sum()


@given(st.integers(0, 2**32 - 1))
def test_metrics_match_eigenvalue_oracle(seed):
    r = np.random.default_rng(seed)
    a, b = random_density_matrix(r), random_density_matrix(r)
    na, nb = hm.to_numpy(a), hm.to_numpy(b)
    assert float(hm.trace_distance(a, b)) == pytest.approx(_numpy_trace_distance(na, nb), abs=1e-12)
    assert float(hm.fidelity(a, b)) == pytest.approx(_numpy_fidelity(na, nb), abs=1e-7)


def test_metric_edge_cases():
    up, down = bloch_to_rho([0, 0, 1]), bloch_to_rho([0, 0, -1])
    mixed = bloch_to_rho([0, 0, 0])
    assert hm.trace_distance(up, down) == 1
    assert hm.trace_distance(up, up) == 0
    assert hm.fidelity(up, down) == 0
    assert hm.fidelity(up, up) == 1
    assert abs(hm.fidelity(up, mixed) ** 2 - arb(1) / 2) < hm.tolerance(5)
    with pytest.raises(ValueError):
        hm.trace_distance(hm.identity(4), hm.identity(4))


def test_bloch_vector_of_pauli_eigenstates():
    for v in ([1, 0, 0], [0, 1, 0], [0, 0, 1]):
        got = [float(c) for c in hm.bloch_vector(bloch_to_rho(v))]
        assert got == pytest.approx(v)


@given(st.integers(0, 2**32 - 1), st.sampled_from([2, 8, 32]))
def test_spectral_norm_estimate_matches_eigvalsh(seed, dim):
    a = random_hermitian(np.random.default_rng(seed), dim, 3.0)
    want = np.abs(np.linalg.eigvalsh(a)).max()
    assert float(hm.spectral_norm_estimate(hm.from_numpy(a))) == pytest.approx(want, rel=2e-3)


def test_taylor_plan_error_bound():
    for norm in (1e-9, 0.3, 5.0, 400.0):
        s, k = hm.taylor_plan(norm, hm.ctx.prec)
        theta = norm / 2**s
        log_err = math.log(2) + (k + 1) * math.log(theta) - math.lgamma(k + 2)
        assert log_err <= -hm.ctx.prec * math.log(2) - s * math.log(2) + 1e-9
