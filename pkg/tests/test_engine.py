import csv
import io

import numpy as np
import pytest
from flint import acb
from hypothesis import given, strategies as st

from qddlab import analysis
from qddlab import engine as E
from qddlab import hpmath as hm
from qddlab import model
from qddlab import sequences as sq
from qddlab.sequences import I, X, Y, Z

from conftest import random_hermitian

PAULI = {"I": np.eye(2), "X": np.array([[0, 1], [1, 0]]), "Y": np.array([[0, -1j], [1j, 0]]),
         "Z": np.diag([1.0, -1.0])}


def _numpy_evolve(seq, h, tau, psi):
    """Double-precision reference: eigendecomposition propagators."""
    w, v = np.linalg.eigh(h)
    dim = h.shape[0]
    for d, p in zip(seq.float_intervals(), seq.pulses):
        psi = v @ (np.exp(-1j * w * d * tau) * (v.conj().T @ psi))
        psi = np.kron(PAULI[p.name], np.eye(dim // 2)) @ psi
    return psi


@pytest.mark.parametrize("axis", [X, Y, Z, I])
def test_apply_pulse_matches_kron(axis, rng):
    v = rng.normal(size=8) + 1j * rng.normal(size=8)
    got = hm.to_numpy(E.apply_pulse(axis, hm.from_numpy(v.reshape(8, 1)))).ravel()
    assert np.allclose(got, np.kron(PAULI[axis.name], np.eye(4)) @ v, atol=1e-15)


def test_free_evolution_with_zero_hamiltonian():
    psi = model.random_joint_state(3, 8)
    out = E.evolve(sq.free_evolution(), hm.zeros(8), 1, psi)
    assert hm.max_abs(out - psi) == 0


@pytest.mark.parametrize("seq", [sq.qdd(2, 2), sq.cdd(2), sq.udd(3, Y), sq.cudd(2)], ids=str)
def test_evolve_matches_numpy_reference(seq, rng):
    h = random_hermitian(rng, 8, 0.2)
    psi = rng.normal(size=8) + 1j * rng.normal(size=8)
    psi /= np.linalg.norm(psi)
    want = _numpy_evolve(seq, h, 0.05, psi)
    got = E.evolve(seq, hm.from_numpy(h), "0.05", hm.from_numpy(psi.reshape(8, 1)))
    assert np.allclose(hm.to_numpy(got).ravel(), want, atol=1e-12)


@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2, 3]), st.sampled_from(["1e-3", "0.2", "3"]))
def test_cache_transparency(seed, n, tau):
    r = np.random.default_rng(seed)
    h = hm.from_numpy(random_hermitian(r, 8))
    psi = hm.from_numpy((r.normal(size=8) + 0j).reshape(8, 1))
    psi = (psi * (1 / hm.vector_norm(psi))).mid()
    seq = sq.qdd(n, n)
    cached = E.evolve(seq, h, tau, psi, cache=True)
    direct = E.evolve(seq, h, tau, psi, cache=False)
    forced = E.PropagatorCache(h, tau)
    via_matrices = psi
    for d, p in zip(seq.intervals, seq.pulses):
        via_matrices = E.apply_pulse(p, (forced.get(d) * via_matrices).mid())
    for other in (direct, via_matrices):
        assert hm.max_abs(cached - other) < hm.tolerance(12)


@pytest.mark.parametrize("n", range(0, 6))
def test_distinct_durations_bound(n):
    h = hm.identity(2)
    cache = E.PropagatorCache(h, 1)
    keys = {cache.key(d) for d in sq.qdd(n, n).intervals}
    assert len(keys) <= (n + 1) * (n + 2) // 2


def test_norm_preserved_through_qdd4():
    cfg = E.ExperimentConfig(n=4, J="1e-2", beta="1e-2")
    real = E._Realization(cfg, 0)
    h = real.hamiltonian(E.params_of(cfg))
    out = E.evolve(sq.qdd(4, 4), h, 1, real.psi0)
    assert abs(hm.vector_norm(out) - 1) < hm.hp("1e-100")


def test_evolve_dimension_checks():
    with pytest.raises(ValueError):
        E.evolve(sq.pdd(1), hm.zeros(8), 1, hm.zeros(4, 1))
    with pytest.raises(ValueError):
        E.evolve(sq.pdd(1), hm.zeros(3), 1, hm.zeros(3, 1))


@pytest.mark.parametrize("seq", [sq.qdd(2, 2), sq.pdd(3), sq.cdd(2), sq.qdd(3, 3)], ids=str)
def test_no_coupling_leaves_system_untouched(seq):
    assert seq.net_pulse is I
    ops = model.random_bath_operators(model.BathSpec(3, 1))
    h = model.assemble_hamiltonian(ops, model.CouplingParams(0, "0.7"))
    psi = model.random_joint_state(5, 16)
    out = E.evolve(seq, h, "0.1", psi)
    d = hm.trace_distance(hm.partial_trace_bath(out), hm.partial_trace_bath(psi))
    assert d < hm.tolerance(20)


def test_pure_dephasing_echo_slope():
    # H = J (Z (x) B + I (x) B0): a single X echo removes the first order, free
    # evolution does not.  Without B0 the echo would be exact.
    r = np.random.default_rng(8)
    b, b0 = hm.from_numpy(random_hermitian(r, 4)), hm.from_numpy(random_hermitian(r, 4))
    hz = hm.kron(hm.pauli_matrix("Z"), b) + hm.kron(hm.identity(2), b0)
    psi = model.random_joint_state(9, 8)
    rho0 = hm.partial_trace_bath(psi)
    echo = sq.PulseSequence((1, 1), (X, X))
    grid = E.log_grid("1e-6", "1e-4", 2)
    for seq, slope in ((echo, 2), (sq.free_evolution(), 1)):
        pts = []
        for J in grid:
            out = E.evolve(seq, (hz * hm.hp(J)).mid(), 1, psi)
            pts.append((hm.hp(J), hm.trace_distance(hm.partial_trace_bath(out), rho0)))
        assert analysis.fit_loglog_slope(pts).slope == pytest.approx(slope, abs=0.05)


def test_run_instance_without_coupling():
    d = E.run_instance(E.ExperimentConfig(scheme="qdd", n=2, J="0", beta="1e-3"), 0)
    assert d.distance < hm.tolerance(20)
    assert d.converged


def test_run_instance_strong_free_evolution():
    d = E.run_instance(E.ExperimentConfig(scheme="free", n=0, J="1", beta="1e-6"), 0)
    assert float(d.distance) > 1e-2
    assert not d.converged


def test_run_instance_is_deterministic():
    cfg = E.ExperimentConfig(scheme="qdd", n=2, J="1e-4", beta="1e-5", seed=42)
    a, b = E.run_instance(cfg, 3), E.run_instance(cfg, 3)
    assert a.distance == b.distance
    assert E.run_instance(cfg, 4).distance != a.distance


def test_reduced_states_are_valid():
    cfg = E.ExperimentConfig(scheme="cdd", n=2, J="1e-3", beta="1e-3")
    real = E._Realization(cfg, 1)
    out = E.evolve(E.build_sequence(cfg), real.hamiltonian(E.params_of(cfg)), 1, real.psi0)
    rho = hm.partial_trace_bath(out, 4)
    assert hm.is_hermitian(rho)
    assert abs(rho.trace() - 1) < hm.tolerance(15)
    r2 = sum(c * c for c in hm.bloch_vector(rho))
    assert r2 <= 1 + hm.tolerance(15)


def test_single_realization_has_zero_deviation():
    res = E.run_experiment(E.ExperimentConfig(n=1, realizations=1))
    p = res.points[0]
    assert p.mean == p.distances[0] and p.max_deviation == 0


@given(st.permutations(range(5)))
def test_reduction_is_permutation_invariant(perm):
    ds = [hm.hp(v) for v in ("1e-9", "3e-9", "2.5e-9", "7e-10", "4e-9")]
    base = E.SweepPoint("1", ds, True)
    shuffled = E.SweepPoint("1", [ds[i] for i in perm], True)
    assert abs(base.mean - shuffled.mean) < hm.tolerance(10) * base.mean
    assert abs(base.max_deviation - shuffled.max_deviation) < hm.tolerance(10) * base.mean


def test_qdd1_and_pdd1_agree():
    q = E.run_experiment(E.ExperimentConfig(scheme="qdd", n=1, realizations=3, seed=17))
    p = E.run_experiment(E.ExperimentConfig(scheme="pdd", n=1, realizations=3, seed=17))
    assert q.points[0].distances == p.points[0].distances


def test_monotone_suppression_in_order():
    configs = [E.ExperimentConfig(scheme="qdd", n=n, realizations=3, seed=1) for n in range(5)]
    means = [E.SweepPoint(None, [d for d, _ in rows], True).mean for rows in E.run_points(configs)]
    assert all(a > b for a, b in zip(means, means[1:]))


def test_jobs_do_not_change_results():
    cfg = E.ExperimentConfig(n=2, realizations=3, sweep_variable="J", sweep_grid=("1e-6", "1e-5"), digits=40)
    assert E.run_experiment(cfg, 1).csv_text() == E.run_experiment(cfg, 3).csv_text()


def test_csv_layout():
    cfg = E.ExperimentConfig(n=1, realizations=2, sweep_variable="beta", sweep_grid=("1e-6", "1e-4"))
    res = E.run_experiment(cfg)
    rows = list(csv.reader(io.StringIO(res.csv_text())))
    assert rows[0] == ["sweep_value", "mean_D", "log10_mean_D", "max_deviation", "converged",
                       "realization_0", "realization_1"]
    assert [r[0] for r in rows[1:]] == ["1e-6", "1e-4"]
    mantissa = rows[1][1].split("e")[0].replace(".", "").lstrip("0")
    assert len(mantissa) == 30
    assert rows[1][4] == "true"
    assert float(rows[1][2]) == pytest.approx(np.log10(float(rows[1][1])))
    d = [float(v) for v in rows[1][5:]]
    assert float(rows[1][3]) == pytest.approx(max(abs(x - np.mean(d)) for x in d), rel=1e-12)


def test_config_validation():
    with pytest.raises(E.ConfigError):
        E.ExperimentConfig(scheme="bogus")
    with pytest.raises(E.ConfigError):
        E.ExperimentConfig(realizations=0)
    with pytest.raises(E.ConfigError):
        E.ExperimentConfig(sweep_variable="J", sweep_grid=())
    with pytest.raises(E.ConfigError):
        E.ExperimentConfig(sweep_variable="J", sweep_grid=("1e-6", "-1e-5"))
    with pytest.raises(E.ConfigError):
        E.ExperimentConfig(J="abc")
    with pytest.raises(E.ConfigError):
        E.ExperimentConfig(scheme="external-file")
    with pytest.raises(E.ConfigError):
        E.ExperimentConfig(sweep_variable="n", sweep_grid=("1.5",))


def test_config_at_grid_point():
    cfg = E.ExperimentConfig(n=1, sweep_variable="n", sweep_grid=("0", "3"))
    assert [c.n for c in map(cfg.at, cfg.grid())] == [0, 3]
    cfg = E.ExperimentConfig(sweep_variable="beta", sweep_grid=("2e-3",))
    assert cfg.at("2e-3").beta == "2e-3" and cfg.at("2e-3").sweep_variable is None


def test_log_grid():
    g = E.log_grid("1e-7", "1e-5")
    assert len(g) == 15 and g[0] == "1e-7" and g[-1] == "1e-5" and g[7] == "1e-6"
    ratios = np.diff(np.log10([float(v) for v in g]))
    assert np.allclose(ratios, 1 / 7)
    with pytest.raises(E.ConfigError):
        E.log_grid("1e-5", "1e-7")


def test_build_sequence_schemes(tmp_path):
    assert E.build_sequence(E.ExperimentConfig(scheme="qdd", n=0)).interval_count == 1
    assert E.build_sequence(E.ExperimentConfig(scheme="cdd", n=0)).interval_count == 1
    assert E.build_sequence(E.ExperimentConfig(scheme="qdd", n=2, m=3)).interval_count == 12
    assert E.build_sequence(E.ExperimentConfig(scheme="udd", n=2, axis="Z")).pulses == (Z, Z, I)
    path = tmp_path / "s.csv"
    sq.write_schedule(sq.qdd(2, 2), path)
    ext = E.build_sequence(E.ExperimentConfig(scheme="external-file", sequence_file=str(path)))
    assert sq.equivalent(ext, sq.qdd(2, 2))
