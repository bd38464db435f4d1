"""State evolution under pulse sequences and seeded, averaged experiments."""
from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

from flint import acb_mat, arb

from . import hpmath as hm
from . import model
from . import sequences as sq

SCHEMES = ("free", "pdd", "cdd", "cudd", "udd", "qdd", "external-file")
SWEEP_VARIABLES = ("J", "beta", "n")
CSV_DIGITS = 30


class ConfigError(ValueError):
    """Invalid experiment configuration."""


# -- evolution -----------------------------------------------------------------

def apply_pulse(axis: sq.PulseAxis, psi: acb_mat) -> acb_mat:
    """Apply ``axis (x) I_bath`` to a state whose first factor is the system."""
    if axis is sq.I:
        return psi
    amps = psi.entries()
    half = len(amps) // 2
    up, down = amps[:half], amps[half:]
    if axis is sq.X:
        new = down + up
    elif axis is sq.Z:
        new = up + [-a for a in down]
    else:  # Y|0> = i|1>, Y|1> = -i|0>
        new = [a * -1j for a in down] + [a * 1j for a in up]
    return acb_mat(len(amps), 1, new)


class PropagatorCache:
    """``exp(-i H d tau)`` matrices for one Hamiltonian, keyed by duration ``d``.

    Keys are durations rounded to ``digits - 10`` significant digits, so
    durations equal to working accuracy share one propagator.  A cache may be
    reused by any number of sequences evolved under the same ``H`` and ``tau``.
    """

    def __init__(self, h: acb_mat, tau):
        self.h = h
        self.tau = hm.hp(tau)
        self.h_norm = hm.one_norm(h)
        self._matrices: dict = {}
        self._digits = max(hm.current_digits() - 10, 10)

    def key(self, duration) -> str:
        return hm.to_decimal(duration, self._digits)

    def __contains__(self, duration) -> bool:
        return self.key(duration) in self._matrices

    def __len__(self) -> int:
        return len(self._matrices)

    def get(self, duration) -> acb_mat:
        key = self.key(duration)
        if key not in self._matrices:
            self._matrices[key] = hm.expm(self.h * hm.acb(0, -(self.tau * duration).mid()))
        return self._matrices[key]

    def worth_caching(self, duration, occurrences: int) -> bool:
        """Cost model: one matrix product costs about ``2 * dim`` matrix-vector
        products; the direct Taylor action costs ``substeps * degree`` of them
        per occurrence."""
        if duration in self:
            return True
        norm = self.h_norm * float(self.tau * duration)
        s, k = hm.taylor_plan(norm, hm.ctx.prec)
        steps, degree = hm.series_plan(norm, hm.ctx.prec)
        matrix_cost = 2 * self.h.nrows() * (hm._ps_cost(k) + s) + occurrences
        return matrix_cost < occurrences * steps * degree


def evolve(seq: sq.PulseSequence, h: acb_mat, tau, psi0: acb_mat, cache=True) -> acb_mat:
    """Apply ``seq`` chronologically: ``U(d_k tau)`` then ``pulse_k (x) I``.

    ``cache=True`` builds a :class:`PropagatorCache` whose matrices are formed
    once per distinct duration whenever that is cheaper than acting on the
    state directly; pass an existing cache to share it across sequences.
    ``cache=False`` applies every interval's evolution directly.
    """
    if h.nrows() != h.ncols() or h.nrows() != psi0.nrows():
        raise ValueError(f"dimension mismatch: H is {h.nrows()}x{h.ncols()}, state has {psi0.nrows()}")
    if h.nrows() % 2:
        raise ValueError("the joint space must contain the system qubit")
    tau = hm.hp(tau)
    if isinstance(cache, PropagatorCache):
        pc = cache
    elif cache:
        pc = PropagatorCache(h, tau)
    else:
        pc = None
    h_norm = pc.h_norm if pc is not None else hm.one_norm(h)
    counts: dict = {}
    if pc is not None:
        for d in seq.intervals:
            k = pc.key(d)
            counts[k] = counts.get(k, 0) + 1
    psi = psi0
    for d, p in zip(seq.intervals, seq.pulses):
        if d != 0:
            if pc is not None and pc.worth_caching(d, counts[pc.key(d)]):
                psi = (pc.get(d) * psi).mid()
            else:
                psi = hm.exp_i_apply(h, (tau * d).mid(), psi, h_norm)
        psi = apply_pulse(p, psi)
    return psi


# -- configuration -----------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: a scheme, coupling parameters, bath and averaging.

    Real-valued parameters are decimal strings so they survive at any
    precision.  ``sweep_grid`` holds decimal strings for ``J``/``beta`` sweeps
    and integer strings for order sweeps.
    """

    scheme: str = "qdd"
    n: int = 1
    m: int | None = None
    tau: str = "1"
    J: str = "1e-6"
    beta: str = "1e-6"
    bath_qubits: int = 4
    realizations: int = 10
    seed: int = 0
    digits: int = field(default_factory=hm.default_digits)
    sweep_variable: str | None = None
    sweep_grid: tuple = ()
    sequence_file: str | None = None
    axis: str = "X"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; expected one of {', '.join(SCHEMES)}")
        if self.scheme == "external-file" and not self.sequence_file:
            raise ConfigError("scheme 'external-file' needs sequence_file")
        if self.n < 0 or (self.m is not None and self.m < 0):
            raise ConfigError("orders must be non-negative")
        if self.realizations < 1:
            raise ConfigError("realizations must be at least 1")
        if self.bath_qubits < 2:
            raise ConfigError("bath_qubits must be at least 2")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.digits < 20:
            raise ConfigError("digits must be at least 20")
        for name in ("tau", "J", "beta"):
            _decimal(getattr(self, name), name)
        if float(self.tau) <= 0:
            raise ConfigError("tau must be positive")
        if float(self.J) < 0 or float(self.beta) < 0:
            raise ConfigError("J and beta must be non-negative")
        if self.sweep_variable is not None:
            if self.sweep_variable not in SWEEP_VARIABLES:
                raise ConfigError(f"sweep variable must be one of {SWEEP_VARIABLES}")
            object.__setattr__(self, "sweep_grid", tuple(str(v) for v in self.sweep_grid))
            if not self.sweep_grid:
                raise ConfigError("sweep grid is empty")
            for v in self.sweep_grid:
                if self.sweep_variable == "n":
                    if not v.isdigit():
                        raise ConfigError(f"order grid values must be non-negative integers, got {v!r}")
                elif float(_decimal(v, "grid value")) <= 0:
                    raise ConfigError(f"grid values must be positive, got {v!r}")

    @property
    def outer_order(self) -> int:
        return self.n if self.m is None else self.m

    def grid(self) -> tuple:
        return self.sweep_grid if self.sweep_variable else (None,)

    def at(self, value) -> "ExperimentConfig":
        """This configuration with the sweep variable fixed to ``value``."""
        if self.sweep_variable is None or value is None:
            return self
        if self.sweep_variable == "n":
            return replace(self, n=int(value), m=None if self.m is None else int(value),
                           sweep_variable=None, sweep_grid=())
        return replace(self, **{self.sweep_variable: str(value)}, sweep_variable=None, sweep_grid=())


def _decimal(text, name: str) -> str:
    try:
        float(text)
        if not math.isfinite(float(text)):
            raise ValueError
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a finite decimal string, got {text!r}") from None
    return text


def log_grid(start: str, stop: str, per_decade: int = 7) -> tuple:
    """Logarithmic grid with ``per_decade`` points per decade, endpoints included.

    Values are rounded to 30 significant digits.
    """
    lo, hi = hm.hp(start), hm.hp(stop)
    if lo <= 0 or hi < lo:
        raise ConfigError("log grid needs 0 < start <= stop")
    decades = float((hi / lo).log_base(10))
    steps = max(round(decades * per_decade), 0)
    if steps == 0:
        return (_tidy(lo),)
    ratio = (hi / lo) ** (arb(1) / steps)
    return tuple(_tidy((lo * ratio**i).mid()) for i in range(steps + 1))


def _tidy(x: arb) -> str:
    """Grid value as a short decimal string; the string itself is the exact parameter."""
    text = hm.to_decimal(x, CSV_DIGITS)
    mant, _, exp = text.partition("e")
    if "." in mant:
        mant = mant.rstrip("0").rstrip(".")
    return mant + ("e" + exp if exp else "")


def build_sequence(config: ExperimentConfig) -> sq.PulseSequence:
    """The pulse sequence named by ``config``; order 0 is free evolution."""
    n, m = config.n, config.outer_order
    scheme = config.scheme
    if scheme == "external-file":
        return sq.load_sequence(config.sequence_file)
    if scheme == "free" or (n == 0 and (scheme != "qdd" or m == 0)):
        return sq.free_evolution()
    if scheme == "pdd":
        return sq.pdd(n)
    if scheme == "cdd":
        return sq.cdd(n)
    if scheme == "cudd":
        return sq.cudd(n)
    if scheme == "udd":
        return sq.udd(n, sq.PulseAxis.parse(config.axis))
    return sq.qdd(m, n)


# -- running -------------------------------------------------------------------------

@dataclass
class InstanceResult:
    distance: arb
    converged: bool
    lam: arb


class _Realization:
    """Bath, initial state and Hamiltonian pieces of one realization."""

    def __init__(self, config: ExperimentConfig, index: int):
        rng = model.substream(config.seed, index)
        self.spec = model.BathSpec(config.bath_qubits, config.seed)
        self.ops = model.random_bath_operators(self.spec, rng)
        self.psi0 = model.random_joint_state(rng, self.spec.dim)
        self.rho0 = hm.partial_trace_bath(self.psi0, config.bath_qubits)
        self.parts = (model.bath_part(self.ops), model.coupling_part(self.ops))
        self._caches: dict = {}

    def hamiltonian(self, params: model.CouplingParams) -> acb_mat:
        return model.assemble_hamiltonian(self.ops, params, self.parts)

    def run(self, seq: sq.PulseSequence, params: model.CouplingParams) -> InstanceResult:
        key = (hm.to_decimal(params.J), hm.to_decimal(params.beta), hm.to_decimal(params.tau))
        if key not in self._caches:
            h = self.hamiltonian(params)
            self._caches = {key: (h, PropagatorCache(h, params.tau), hm.spectral_norm_estimate(h))}
        h, cache, lam = self._caches[key]
        psi = evolve(seq, h, params.tau, self.psi0, cache)
        rho = hm.partial_trace_bath(psi, self.spec.n_bath)
        distance = hm.trace_distance(rho, self.rho0)
        converged = bool(lam * seq.total_duration * params.tau < 1)
        return InstanceResult(distance, converged, lam)


def params_of(config: ExperimentConfig) -> model.CouplingParams:
    return model.CouplingParams(config.J, config.beta, config.tau)


def run_instance(config: ExperimentConfig, realization_index: int) -> InstanceResult:
    """Trace distance between initial and final reduced system states."""
    with hm.working_precision(config.digits):
        return _Realization(config, realization_index).run(build_sequence(config), params_of(config))


def _realization_task(args) -> list:
    """Worker: every grid point of ``configs`` for one realization.

    Distances cross process boundaries as full-precision decimal strings, and
    the single-process path goes through the same conversion.
    """
    configs, index = args
    digits = configs[0].digits
    with hm.working_precision(digits):
        real = _Realization(configs[0], index)
        out = []
        for cfg in configs:
            res = real.run(build_sequence(cfg), params_of(cfg))
            out.append((hm.to_decimal(res.distance, digits), res.converged))
        return out


def run_points(configs: Sequence[ExperimentConfig], jobs: int = 1) -> list:
    """Per-point lists of ``(distance, converged)`` over all realizations.

    All configs must share seed, bath size, realization count and precision;
    realization ``r`` uses the same substream for every point, so points are
    compared on common random numbers.
    """
    configs = list(configs)
    base = configs[0]
    for cfg in configs[1:]:
        if (cfg.seed, cfg.bath_qubits, cfg.realizations, cfg.digits) != (
                base.seed, base.bath_qubits, base.realizations, base.digits):
            raise ConfigError("points of one run must share seed, bath, realizations and digits")
    tasks = [(configs, r) for r in range(base.realizations)]
    if jobs <= 1 or len(tasks) == 1:
        per_real = [_realization_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            per_real = list(pool.map(_realization_task, tasks))
    with hm.working_precision(base.digits):
        return [
            [(hm.hp(per_real[r][p][0]), per_real[r][p][1]) for r in range(base.realizations)]
            for p in range(len(configs))
        ]


@dataclass
class SweepPoint:
    value: str | None
    distances: list
    converged: bool

    @property
    def mean(self) -> arb:
        total = arb(0)
        for d in self.distances:
            total += d
        return (total / len(self.distances)).mid()

    @property
    def max_deviation(self) -> arb:
        mean = self.mean
        return max((abs(d - mean).mid() for d in self.distances), default=arb(0))

    @property
    def log10_mean(self) -> float:
        return hm.log10(self.mean)


@dataclass
class SweepResult:
    variable: str | None
    points: list
    label: str = ""

    def values(self) -> list:
        return [float(p.value) for p in self.points]

    def means(self) -> list:
        return [float(p.mean) for p in self.points]

    def series(self) -> list:
        """``(value, mean)`` pairs as arbs, for slope fitting."""
        return [(hm.hp(p.value), p.mean) for p in self.points]

    def csv_text(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()

    def write_csv(self, target) -> None:
        if isinstance(target, (str, os.PathLike)):
            with open(target, "w", newline="") as fh:
                self.write_csv(fh)
            return
        count = len(self.points[0].distances) if self.points else 0
        writer = csv.writer(target, lineterminator="\n")
        writer.writerow(["sweep_value", "mean_D", "log10_mean_D", "max_deviation", "converged"]
                        + [f"realization_{r}" for r in range(count)])
        for p in self.points:
            writer.writerow([
                p.value if p.value is not None else "",
                _fmt(p.mean),
                _fmt_log(p.mean),
                _fmt(p.max_deviation),
                "true" if p.converged else "false",
            ] + [_fmt(d) for d in p.distances])


def _fmt(x: arb) -> str:
    return hm.to_decimal(x, CSV_DIGITS)


def _fmt_log(x: arb) -> str:
    x = x.mid()
    if x == 0:
        return "-inf"
    return hm.to_decimal(x.log_base(10).mid(), CSV_DIGITS)


def run_experiment(config: ExperimentConfig, jobs: int = 1) -> SweepResult:
    """Average trace distances over realizations at every grid point.

    The mean is the arithmetic mean of distances; ``log10`` is taken of the
    mean.  Realizations are independent, so ``jobs > 1`` spreads them across
    processes without changing any result.
    """
    grid = config.grid()
    points_cfg = [config.at(v) for v in grid]
    try:
        raw = run_points(points_cfg, jobs)
    except (ArithmeticError, ValueError) as exc:
        raise type(exc)(f"{config.scheme} sweep failed: {exc}") from exc
    points = [SweepPoint(v, [d for d, _ in rows], all(c for _, c in rows)) for v, rows in zip(grid, raw)]
    return SweepResult(config.sweep_variable, points, label=_label(config))


def _label(config: ExperimentConfig) -> str:
    if config.scheme == "qdd":
        return f"qdd m={config.outer_order} n={config.n}"
    return f"{config.scheme} n={config.n}"
