"""Random spin-bath Hamiltonians and Haar-random joint states.

Random numbers
--------------
Every realization draws from its own substream: numpy's PCG64 bit generator
seeded with ``SeedSequence(master_seed, spawn_key=(realization,))``.  Uniform
variates are ``Generator.random()`` doubles in [0, 1), which convert exactly
to the working precision.  A realization first draws the bath coefficients,
then the initial state, so one substream fixes both.

Coefficient order is alpha in (I, X, Y, Z), then ordered bath-qubit pairs
``i != j`` lexicographically, then ``k, l`` in (I, X, Y, Z).

Normal variates for states use the Box-Muller transform of uniform pairs
``(u1, u2)`` with ``u1 = 1 - random()`` so the logarithm never sees zero:
``sqrt(-2 ln u1) * (cos 2 pi u2 + i sin 2 pi u2)`` is one complex amplitude.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np
from flint import acb, acb_mat, arb

from . import hpmath as hm

PAULI_ORDER = ("I", "X", "Y", "Z")

_PAULI_NP = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def substream(seed: int, index: int = 0) -> np.random.Generator:
    """Independent generator for realization ``index`` of master ``seed``."""
    if seed < 0 or index < 0:
        raise ValueError("seed and substream index must be non-negative")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return substream(int(rng), 0)


@dataclass(frozen=True)
class BathSpec:
    n_bath: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.n_bath < 2:
            raise ValueError("the bath needs at least two qubits (pair terms i != j)")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @property
    def dim(self) -> int:
        return 2 ** (1 + self.n_bath)


@dataclass(frozen=True)
class CouplingParams:
    """System-bath coupling ``J``, bath strength ``beta`` and minimum interval ``tau``."""

    J: arb
    beta: arb
    tau: arb = field(default_factory=lambda: arb(1))

    def __post_init__(self):
        for name in ("J", "beta", "tau"):
            object.__setattr__(self, name, hm.hp(getattr(self, name)))
        if self.J < 0 or self.beta < 0:
            raise ValueError("J and beta must be non-negative")
        if self.tau <= 0:
            raise ValueError("tau must be positive")

    @property
    def J_tau(self) -> arb:
        return (self.J * self.tau).mid()

    @property
    def beta_tau(self) -> arb:
        return (self.beta * self.tau).mid()


@dataclass
class BathOperators:
    """Bath operators ``B_alpha`` with their coefficient tensor.

    ``coefficients[a, i, j, k, l]`` is the weight of ``sigma_i^k sigma_j^l`` in
    ``B_alpha``; entries with ``i == j`` are unused and zero.
    """

    n_bath: int
    coefficients: np.ndarray
    operators: dict

    def __getitem__(self, alpha: str) -> acb_mat:
        return self.operators[alpha]


def _pair_terms(n_bath: int):
    for i, j in itertools.permutations(range(n_bath), 2):
        for k, l in itertools.product(range(4), repeat=2):
            yield i, j, k, l


def _pauli_string(n_bath: int, i: int, k: int, j: int, l: int) -> np.ndarray:
    ops = [_PAULI_NP["I"]] * n_bath
    ops[i] = _PAULI_NP[PAULI_ORDER[k]]
    ops[j] = _PAULI_NP[PAULI_ORDER[l]]
    out = np.eye(1, dtype=complex)
    for op in ops:
        out = np.kron(out, op)
    return out


def bath_operators_from_coefficients(coefficients: np.ndarray) -> BathOperators:
    """Assemble ``B_alpha = sum r[alpha,i,j,k,l] sigma_i^k sigma_j^l``.

    Pauli strings are monomial matrices with entries in {0, +-1, +-i}, so the
    sums of double coefficients are accumulated exactly at working precision.
    """
    coefficients = np.asarray(coefficients, dtype=float)
    n_bath = coefficients.shape[1]
    dim = 2**n_bath
    strings = {}
    for i, j, k, l in _pair_terms(n_bath):
        strings[i, j, k, l] = list(zip(*np.nonzero(_pauli_string(n_bath, i, k, j, l))))
    operators = {}
    for a, alpha in enumerate(PAULI_ORDER):
        re = [[arb(0)] * dim for _ in range(dim)]
        im = [[arb(0)] * dim for _ in range(dim)]
        for (i, j, k, l), entries in strings.items():
            r = coefficients[a, i, j, k, l]
            if r == 0:
                continue
            p = _pauli_string(n_bath, i, k, j, l)
            for row, col in entries:
                z = p[row, col]
                if z.real:
                    re[row][col] += r * z.real
                if z.imag:
                    im[row][col] += r * z.imag
        operators[alpha] = acb_mat([[acb(re[r][c], im[r][c]) for c in range(dim)] for r in range(dim)])
    return BathOperators(n_bath, coefficients, operators)


def random_bath_operators(spec: BathSpec, rng=None) -> BathOperators:
    """Draw one coefficient per (alpha, i, j, k, l), uniform on [0, 1)."""
    rng = substream(spec.seed, 0) if rng is None else _as_generator(rng)
    n = spec.n_bath
    coefficients = np.zeros((4, n, n, 4, 4))
    for a in range(4):
        for i, j, k, l in _pair_terms(n):
            coefficients[a, i, j, k, l] = rng.random()
    return bath_operators_from_coefficients(coefficients)


def bath_part(ops: BathOperators) -> acb_mat:
    """``I (x) B_I``."""
    return hm.kron(hm.identity(2), ops["I"])


def coupling_part(ops: BathOperators) -> acb_mat:
    """``X (x) B_X + Y (x) B_Y + Z (x) B_Z``."""
    out = None
    for alpha in ("X", "Y", "Z"):
        term = hm.kron(hm.pauli_matrix(alpha), ops[alpha])
        out = term if out is None else out + term
    return out.mid()


def assemble_hamiltonian(ops: BathOperators, params: CouplingParams, parts=None) -> acb_mat:
    """``beta (I (x) B_I) + J (X (x) B_X + Y (x) B_Y + Z (x) B_Z)``, system first.

    ``parts`` may carry precomputed ``(bath_part, coupling_part)`` so sweeps
    over ``J`` and ``beta`` reuse the tensor products.
    """
    hb, hc = parts if parts is not None else (bath_part(ops), coupling_part(ops))
    return (hb * params.beta + hc * params.J).mid()


def random_joint_state(rng, dim: int) -> acb_mat:
    """Haar-random unit vector of length ``dim`` (column matrix).

    ``rng`` is a generator or an integer seed (substream 0 of that seed).
    """
    if dim < 2 or dim & (dim - 1):
        raise ValueError(f"dimension {dim} is not a power of two")
    rng = _as_generator(rng)
    two_pi = 2 * arb.pi()
    amps = []
    for _ in range(dim):
        u1 = 1.0 - rng.random()
        u2 = rng.random()
        radius = (-2 * arb(u1).log()).sqrt()
        s, c = (two_pi * u2).sin_cos()
        amps.append(acb(radius * c, radius * s))
    psi = acb_mat(dim, 1, amps).mid()
    return (psi * (arb(1) / hm.vector_norm(psi))).mid()


def haar_mean_purity(d_system: int, d_bath: int) -> float:
    """Average reduced-state purity of Haar states: ``(dS + dB)/(dS dB + 1)``."""
    return (d_system + d_bath) / (d_system * d_bath + 1)


def purity(rho: acb_mat) -> arb:
    return (rho * rho).trace().real.mid()


def dump_coefficients(ops: BathOperators, path) -> None:
    """Audit dump: one record per coefficient with its value as a decimal string."""
    records = []
    for a, i, j, k, l in itertools.product(range(4), *[range(ops.n_bath)] * 2, range(4), range(4)):
        if i == j:
            continue
        records.append({
            "alpha": PAULI_ORDER[a],
            "i": i,
            "j": j,
            "k": PAULI_ORDER[k],
            "l": PAULI_ORDER[l],
            "value": repr(float(ops.coefficients[a, i, j, k, l])),
        })
    with open(path, "w") as fh:
        json.dump(records, fh, indent=1)
