"""Configurable-precision complex linear algebra.

Matrices are :class:`flint.acb_mat` values and reals are :class:`flint.arb`
values.  Every routine works at the current flint working precision, which is
set in decimal digits through :func:`working_precision`.  Results are returned
as ball midpoints (radius stripped), so downstream comparisons behave like
ordinary floating-point comparisons at the chosen precision.

Importing this module raises flint's process-wide precision from its 53-bit
default to :func:`default_digits` decimal digits.
"""
from __future__ import annotations

import math
import os
from contextlib import contextmanager
from fractions import Fraction
from typing import Iterator, Sequence

import numpy as np
from flint import acb, acb_mat, arb, ctx

DEFAULT_DIGITS = 120
GUARD_BITS = 24
DIGITS_ENV = "QDDLAB_DIGITS"

_LOG2_10 = math.log2(10)
_LN2 = math.log(2)


def default_digits() -> int:
    """Working precision used when nothing else is requested.

    ``QDDLAB_DIGITS`` overrides the built-in 120 digits.
    """
    raw = os.environ.get(DIGITS_ENV)
    if raw is None or not raw.strip():
        return DEFAULT_DIGITS
    try:
        digits = int(raw)
    except ValueError as exc:
        raise ValueError(f"{DIGITS_ENV} must be an integer, got {raw!r}") from exc
    _check_digits(digits)
    return digits


def _check_digits(digits: int) -> None:
    if digits < 20:
        raise ValueError(f"precision must be at least 20 digits, got {digits}")


def bits_for(digits: int) -> int:
    return math.ceil(digits * _LOG2_10) + GUARD_BITS


def current_digits() -> int:
    return int((ctx.prec - GUARD_BITS) / _LOG2_10)


@contextmanager
def working_precision(digits: int | None = None) -> Iterator[int]:
    """Run a block at ``digits`` decimal digits (plus guard bits)."""
    if digits is None:
        digits = default_digits()
    _check_digits(digits)
    with ctx.workprec(bits_for(digits)):
        yield digits


def tolerance(guard: int) -> arb:
    """``10**-(digits - guard)`` at the current precision."""
    return arb(10) ** (guard - current_digits())


if ctx.prec == 53:
    ctx.prec = bits_for(default_digits())


# -- scalars -----------------------------------------------------------------

def hp(x) -> arb:
    """Convert ``x`` to an exact-midpoint real at working precision.

    Strings are parsed as decimals, so ``hp("1e-6")`` is correct to the last
    working digit, while floats are taken at their exact binary value.
    """
    if isinstance(x, arb):
        return x.mid()
    if isinstance(x, str):
        try:
            return arb(x.strip()).mid()
        except (ValueError, TypeError) as exc:
            raise ValueError(f"not a decimal number: {x!r}") from exc
    if isinstance(x, Fraction):
        return (arb(x.numerator) / x.denominator).mid()
    if isinstance(x, (int, float, np.integer, np.floating)):
        if isinstance(x, (float, np.floating)) and not math.isfinite(x):
            raise ValueError(f"non-finite value {x!r}")
        return arb(float(x) if isinstance(x, np.floating) else int(x) if isinstance(x, np.integer) else x).mid()
    raise TypeError(f"cannot convert {type(x).__name__} to a real")


def to_decimal(x: arb, digits: int | None = None) -> str:
    """Decimal string of the midpoint of ``x`` with ``digits`` significant digits."""
    if digits is None:
        digits = current_digits()
    return x.mid().str(digits, radius=False)


def log10(x: arb) -> float:
    """``log10(x)`` as a float; ``-inf`` for zero."""
    x = x.mid()
    if x == 0:
        return -math.inf
    if x < 0:
        raise ValueError("log10 of a negative number")
    return float(x.log_base(10))


def factorial(k: int) -> arb:
    return arb.fac_ui(k)


# -- matrices ----------------------------------------------------------------

_PAULI_ENTRIES = {
    "I": ((1, 0), (0, 1)),
    "X": ((0, 1), (1, 0)),
    "Y": ((0, -1j), (1j, 0)),
    "Z": ((1, 0), (0, -1)),
}


def pauli_matrix(label: str) -> acb_mat:
    return from_numpy(np.array(_PAULI_ENTRIES[label], dtype=complex))


def zeros(rows: int, cols: int | None = None) -> acb_mat:
    return acb_mat(rows, rows if cols is None else cols)


def identity(n: int) -> acb_mat:
    out = acb_mat(n, n)
    for i in range(n):
        out[i, i] = 1
    return out


def from_numpy(a) -> acb_mat:
    """Exact conversion of a float/complex array (1-D arrays become columns)."""
    a = np.asarray(a)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    out = acb_mat(a.shape[0], a.shape[1])
    for (i, j), z in np.ndenumerate(a):
        z = complex(z)
        if z:
            out[i, j] = acb(z.real, z.imag)
    return out


def from_entries(rows: Sequence[Sequence]) -> acb_mat:
    return acb_mat([[acb(e) if not isinstance(e, acb) else e for e in row] for row in rows])


def column(entries: Sequence) -> acb_mat:
    return acb_mat(len(entries), 1, list(entries))


def to_numpy(m: acb_mat) -> np.ndarray:
    """Round to complex128; used for diagnostics and float oracles only."""
    out = np.empty((m.nrows(), m.ncols()), dtype=complex)
    for i in range(m.nrows()):
        for j in range(m.ncols()):
            z = m[i, j]
            out[i, j] = complex(float(z.real.mid()), float(z.imag.mid()))
    return out


def dagger(m: acb_mat) -> acb_mat:
    return m.conjugate().transpose()


def max_abs(m: acb_mat) -> arb:
    """Largest entry modulus (the max norm)."""
    best = arb(0)
    for e in m.entries():
        a = abs(e).mid()
        if a > best:
            best = a
    return best


def one_norm(m: acb_mat) -> float:
    """Maximum absolute column sum, rounded up to a float."""
    sums = [0.0] * m.ncols()
    for i in range(m.nrows()):
        for j in range(m.ncols()):
            sums[j] += float(m[i, j].abs_upper())
    return max(sums) if sums else 0.0


def vector_norm(v: acb_mat) -> arb:
    total = arb(0)
    for e in v.entries():
        total += e.real * e.real + e.imag * e.imag
    return total.mid().sqrt().mid()


def kron(a: acb_mat, b: acb_mat) -> acb_mat:
    """Tensor product ``a ⊗ b``."""
    ra, ca, rb, cb = a.nrows(), a.ncols(), b.nrows(), b.ncols()
    out = acb_mat(ra * rb, ca * cb)
    b_entries = [[(k, l, b[k, l]) for l in range(cb) if b[k, l] != 0] for k in range(rb)]
    for i in range(ra):
        for j in range(ca):
            aij = a[i, j]
            if aij == 0:
                continue
            for row in b_entries:
                for k, l, bkl in row:
                    out[i * rb + k, j * cb + l] = aij * bkl
    return out.mid()


def is_hermitian(h: acb_mat, guard: int = 15) -> bool:
    if h.nrows() != h.ncols():
        return False
    scale = max_abs(h)
    if scale < 1:
        scale = arb(1)
    return max_abs(h - dagger(h)) <= tolerance(guard) * scale


# -- exponential -------------------------------------------------------------

def _ps_block(k: int) -> int:
    """Paterson-Stockmeyer block size minimising products for degree ``k``."""
    return min(range(1, k + 2), key=lambda q: (q - 1) + math.ceil((k + 1) / q) - 1)


def _ps_cost(k: int) -> int:
    q = _ps_block(k)
    return (q - 1) + math.ceil((k + 1) / q) - 1


def taylor_plan(norm: float, bits: int) -> tuple[int, int]:
    """Pick ``(squarings, degree)`` for exp(A) with ``||A||_1 <= norm``.

    The truncated Taylor series of exp(A / 2**s) has remainder at most
    ``2 * theta**(k+1) / (k+1)!`` once ``theta <= 1``; squaring amplifies the
    error by roughly ``2**s``, so the per-stage target is tightened to match.
    Among the admissible plans the one with the fewest matrix products wins.
    """
    if norm <= 0:
        return 0, 0
    log_eps = -bits * _LN2
    s0 = max(0, math.ceil(math.log2(norm)))
    best = None
    for s in range(s0, s0 + 48):
        log_theta = math.log(norm) - s * _LN2
        target = log_eps - s * _LN2 - _LN2
        k = 1
        while (k + 1) * log_theta - math.lgamma(k + 2) > target:
            k += 1
        cost = _ps_cost(k) + s
        if best is None or cost < best[0]:
            best = (cost, s, k)
    return best[1], best[2]


def _taylor_ps(b: acb_mat, k: int) -> acb_mat:
    """Degree-``k`` Taylor polynomial of exp(b) by Paterson-Stockmeyer."""
    n = b.nrows()
    q = _ps_block(k)
    powers = [identity(n), b]
    for _ in range(2, q + 1):
        powers.append((powers[-1] * b).mid())
    coeffs = [(arb(1) / factorial(i)).mid() for i in range(k + 1)]
    result = None
    for r in reversed(range(math.ceil((k + 1) / q))):
        block = None
        for i in range(q):
            idx = r * q + i
            if idx > k:
                break
            term = powers[i] * coeffs[idx]
            block = term if block is None else block + term
        result = block if result is None else (result * powers[q]).mid() + block
    return result.mid()


def expm(a: acb_mat) -> acb_mat:
    """exp(a) by scaling and squaring with a Paterson-Stockmeyer Taylor core."""
    if a.nrows() != a.ncols():
        raise ValueError("exponential of a non-square matrix")
    s, k = taylor_plan(one_norm(a), ctx.prec)
    if k == 0:
        return identity(a.nrows())
    scaled = (a * (arb(1) / arb(2) ** s)).mid()
    out = _taylor_ps(scaled, k)
    for _ in range(s):
        out = (out * out).mid()
    return out


def mat_exp_i(h: acb_mat, t) -> acb_mat:
    """Propagator ``exp(-i h t)`` for Hermitian ``h``."""
    if not is_hermitian(h):
        raise ValueError("mat_exp_i requires a Hermitian matrix")
    return expm(h * acb(0, -hp(t)))


def series_plan(norm: float, bits: int) -> tuple[int, int]:
    """Pick ``(substeps, degree)`` for applying exp(A) to a vector.

    Each substep has ``theta = norm / substeps <= 1`` and a Taylor remainder of
    at most ``2 * theta**(k+1) / (k+1)!``; errors add across substeps.
    """
    if norm <= 0:
        return 1, 0
    log_eps = -bits * _LN2
    first = max(1, math.ceil(norm))
    best = None
    for steps in range(first, 4 * first + 8):
        log_theta = math.log(norm / steps)
        target = log_eps - math.log(steps) - _LN2
        k = 1
        while (k + 1) * log_theta - math.lgamma(k + 2) > target:
            k += 1
        if best is None or steps * k < best[0]:
            best = (steps * k, steps, k)
    return best[1], best[2]


def exp_i_apply(h: acb_mat, t, v: acb_mat, h_norm: float | None = None) -> acb_mat:
    """``exp(-i h t) @ v`` from the Taylor series applied to ``v``.

    Costs only matrix-vector products, which beats forming the propagator
    when a duration occurs a few times.  ``h`` is assumed Hermitian.
    """
    t = hp(t)
    if h_norm is None:
        h_norm = one_norm(h)
    steps, k = series_plan(h_norm * abs(float(t)), ctx.prec)
    if k == 0:
        return v
    step = (acb(0, -t) / steps)
    for _ in range(steps):
        term = v
        acc = v
        for j in range(1, k + 1):
            term = ((h * term) * (step / j)).mid()
            acc = acc + term
        v = acc.mid()
    return v


# -- states and metrics ------------------------------------------------------

def partial_trace_bath(psi: acb_mat, n_bath: int | None = None) -> acb_mat:
    """Reduced 2x2 state of the system qubit (first tensor factor) of ``psi``."""
    dim = psi.nrows() * psi.ncols()
    if dim < 2 or dim & (dim - 1):
        raise ValueError(f"state length {dim} is not a power of two")
    if n_bath is not None and dim != 2 ** (1 + n_bath):
        raise ValueError(f"state length {dim} does not match {n_bath} bath qubits")
    amps = psi.entries()
    half = dim // 2
    block = acb_mat(2, half, amps)
    return (block * dagger(block)).mid()


def bloch_vector(rho: acb_mat) -> tuple[arb, arb, arb]:
    off = rho[0, 1]
    return (
        (2 * off.real).mid(),
        (-2 * off.imag).mid(),
        (rho[0, 0] - rho[1, 1]).real.mid(),
    )


def _check_qubit_state(rho: acb_mat) -> None:
    if rho.nrows() != 2 or rho.ncols() != 2:
        raise ValueError("expected a 2x2 density matrix")


def trace_distance(rho1: acb_mat, rho2: acb_mat) -> arb:
    """Half the trace norm of ``rho1 - rho2`` via the Bloch-vector distance."""
    _check_qubit_state(rho1)
    _check_qubit_state(rho2)
    diff = rho1 - rho2
    if not is_hermitian(diff):
        raise ValueError("trace distance of non-Hermitian difference")
    d = [(a - b).mid() for a, b in zip(bloch_vector(rho1), bloch_vector(rho2))]
    return ((d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).mid().sqrt() / 2).mid()


def fidelity(rho1: acb_mat, rho2: acb_mat) -> arb:
    """Uhlmann (root) fidelity ``tr sqrt(sqrt(rho1) rho2 sqrt(rho1))``.

    For qubits ``F**2 = tr(rho1 rho2) + 2 sqrt(det rho1 det rho2)``, which in
    Bloch form is ``(1 + r1.r2 + sqrt((1 - |r1|**2)(1 - |r2|**2))) / 2``.
    """
    _check_qubit_state(rho1)
    _check_qubit_state(rho2)
    r1, r2 = bloch_vector(rho1), bloch_vector(rho2)
    dot = sum((a * b for a, b in zip(r1, r2)), arb(0)).mid()
    m1 = (1 - sum((a * a for a in r1), arb(0))).mid()
    m2 = (1 - sum((b * b for b in r2), arb(0))).mid()
    mixed = (m1 * m2).mid()
    root = mixed.sqrt().mid() if mixed > 0 else arb(0)
    f2 = ((1 + dot + root) / 2).mid()
    if f2 <= 0:
        return arb(0)
    f = f2.sqrt().mid()
    return arb(1) if f > 1 else f


def spectral_norm_estimate(h: acb_mat, rtol: float = 1e-3) -> arb:
    """Largest absolute eigenvalue of Hermitian ``h`` by power iteration.

    Runs in double precision: the value only gates a convergence heuristic.
    Two fixed start vectors guard against an unlucky orthogonal start.
    """
    a = to_numpy(h)
    dim = a.shape[0]
    idx = np.arange(dim)
    starts = [1.0 + idx / dim + 0.5j * (idx % 3), np.cos(1.7 * idx + 0.3) + 1j * np.sin(0.9 * idx)]
    best = 0.0
    for v in starts:
        v = v / np.linalg.norm(v)
        est = 0.0
        for _ in range(20000):
            w = a @ v
            nw = float(np.linalg.norm(w))
            if nw == 0.0:
                break
            v = w / nw
            done = abs(nw - est) <= 1e-6 * rtol * nw
            est = nw
            if done:
                break
        best = max(best, est)
    return hp(best)
