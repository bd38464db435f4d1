"""Log-log slope fits, regime classification and leading-order distance estimates."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from flint import arb

from . import engine
from . import hpmath as hm
from . import model
from . import sequences as sq

BOUNDARY_MARGIN_DECADES = 0.5
RESIDUAL_LIMIT = 0.35


class AnalysisError(ValueError):
    """Input that cannot be fitted or classified."""


class RegimeBoundaryError(AnalysisError):
    """A fit window reaches too close to a regime boundary."""


# -- slope fits ---------------------------------------------------------------------

@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    stderr: float
    count: int
    window: tuple

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "stderr": self.stderr,
                "count": self.count, "window": list(self.window)}


def _log10(x) -> float:
    if isinstance(x, arb):
        if not x > 0:
            raise AnalysisError(f"log-log fit needs positive values, got {x.str(5)}")
        return hm.log10(x)
    x = float(x)
    if not x > 0:
        raise AnalysisError(f"log-log fit needs positive values, got {x!r}")
    return math.log10(x)


def fit_loglog_slope(points: Iterable[tuple], window: tuple | None = None) -> SlopeFit:
    """Ordinary least squares for ``log10 D = slope * log10 x + intercept``.

    ``window = (lo, hi)`` keeps points with ``lo <= x <= hi``.  Values may be
    floats or arbs; logarithms of arbs are taken at working precision so
    distances far below double range still fit.
    """
    pts = list(points)
    if window is not None:
        lo, hi = window
        pts = [(x, d) for x, d in pts if float(lo) <= float(x) <= float(hi)]
    if len(pts) < 3:
        raise AnalysisError(f"slope fit needs at least 3 points in the window, got {len(pts)}")
    lx = np.array([_log10(x) for x, _ in pts])
    ly = np.array([_log10(d) for _, d in pts])
    xm = lx.mean()
    sxx = float(((lx - xm) ** 2).sum())
    if sxx == 0:
        raise AnalysisError("slope fit needs at least two distinct x values")
    slope = float(((lx - xm) * (ly - ly.mean())).sum() / sxx)
    intercept = float(ly.mean() - slope * xm)
    resid = ly - (slope * lx + intercept)
    stderr = math.sqrt(float((resid**2).sum()) / (len(pts) - 2) / sxx)
    xs = [float(x) for x, _ in pts]
    return SlopeFit(slope, intercept, stderr, len(pts), (min(xs), max(xs)))


# -- regimes -----------------------------------------------------------------------

class Regime(enum.Enum):
    R1 = "R1"  # beta tau < J tau < S^-2: coupling dominated
    R2 = "R2"  # J tau <= beta tau <= S^-2: bath dominated, still converging
    R3 = "R3"  # beta tau > S^-2: bath faster than the sequence


@dataclass(frozen=True)
class RegimeInfo:
    """A regime with its two transition points in units of ``beta tau``.

    ``coupling_transition`` is where ``beta tau = J tau`` and ``bath_transition``
    is ``1/S_n^2``, the inverse total duration of the sequence.
    """

    regime: Regime
    coupling_transition: arb
    bath_transition: arb


def _classify(j_tau: arb, beta_tau: arb, boundary: arb) -> Regime:
    if beta_tau > boundary:
        return Regime.R3
    if beta_tau < j_tau:
        return Regime.R1
    return Regime.R2


def classify_regime(params: model.CouplingParams, n: int) -> RegimeInfo:
    """Regime of ``params`` for order ``n``.

    Ties go to the slower-coupling side: ``beta tau = J tau`` is R2 and
    ``beta tau = S_n^-2`` is R2.  A ``J tau`` above ``S_n^-2`` with a smaller
    ``beta tau`` is still R1 (its convergence is flagged elsewhere).
    """
    boundary = (1 / sq.total_normalized_time(n) ** 2).mid()
    regime = _classify(params.J_tau, params.beta_tau, boundary)
    return RegimeInfo(regime, params.J_tau, boundary)


def leading_order_prediction(n: int, params: model.CouplingParams, regime: Regime | None = None,
                             C=1) -> arb:
    """Dominant term of the distance for QDD_n in ``regime``.

    R1: ``(J S^2 tau)^(n+1)/(n+1)!``; R2: ``n J beta^n (S^2 tau)^(n+1)/(n+1)!``;
    R3: ``(C J/beta + 1)(J S^2 tau)^(n+1)/(n+1)!``.  The R2 form is a
    proportionality for slope checks; ``C`` is a free constant.
    """
    actual = classify_regime(params, n).regime
    if regime is None:
        regime = actual
    elif regime is not actual:
        raise AnalysisError(f"parameters lie in {actual.value}, not {regime.value}")
    s2tau = sq.total_normalized_time(n) ** 2 * params.tau
    denom = hm.factorial(n + 1)
    if regime is Regime.R1:
        out = (params.J * s2tau) ** (n + 1) / denom
    elif regime is Regime.R2:
        out = n * params.J * params.beta**n * s2tau ** (n + 1) / denom
    else:
        out = (hm.hp(C) * params.J / params.beta + 1) * (params.J * s2tau) ** (n + 1) / denom
    return out.mid()


def fit_r3_constant(n: int, samples: Sequence[tuple]) -> float:
    """Least-squares ``C`` from ``(params, distance)`` pairs inside R3.

    Uses ``D / A - 1 = C J / beta`` with ``A = (J S^2 tau)^(n+1)/(n+1)!``.
    """
    xs, ys = [], []
    for params, d in samples:
        if classify_regime(params, n).regime is not Regime.R3:
            raise AnalysisError("every sample must lie in R3")
        a = leading_order_prediction(n, params, Regime.R3, C=0)
        xs.append(float(params.J / params.beta))
        ys.append(float(hm.hp(d) / a) - 1)
    xs, ys = np.array(xs), np.array(ys)
    if not (xs**2).sum():
        raise AnalysisError("no R3 samples")
    return float((xs * ys).sum() / (xs**2).sum())


# -- suppression order ------------------------------------------------------------

@dataclass
class OrderEstimate:
    order: int
    slope: float
    stderr: float
    residual: float
    reliable: bool
    regime: Regime
    window: tuple
    converged: list
    fit: SlopeFit
    series: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "stderr": self.stderr,
            "window": list(self.window),
            "regime": self.regime.value,
            "predicted_order": self.order,
            "residual": self.residual,
            "reliable": self.reliable,
            "converged": self.converged,
            "points": self.fit.count,
            "series": [{"J": v, "mean_D": d} for v, d in self.series],
        }


def check_r1_window(j_values: Sequence, beta_tau, tau, total_duration,
                    margin: float = BOUNDARY_MARGIN_DECADES) -> None:
    """Refuse a J window within ``margin`` decades of an R1 boundary."""
    tau = hm.hp(tau)
    j_tau = [(hm.hp(v) * tau).mid() for v in j_values]
    lo, hi = min(j_tau), max(j_tau)
    beta_tau = hm.hp(beta_tau)
    upper = (1 / hm.hp(total_duration)).mid()
    factor = arb(10) ** hm.hp(margin)
    if beta_tau > 0 and lo < beta_tau * factor:
        raise RegimeBoundaryError(
            f"J tau window starts at {hm.to_decimal(lo, 6)}, within {margin} decades of "
            f"the beta tau = J tau boundary at {hm.to_decimal(beta_tau, 6)}")
    if hi * factor > upper:
        raise RegimeBoundaryError(
            f"J tau window ends at {hm.to_decimal(hi, 6)}, within {margin} decades of "
            f"the convergence boundary 1/S^2 = {hm.to_decimal(upper, 6)}")


def estimate_suppression_order(base_config: engine.ExperimentConfig, grid: Sequence | None = None,
                               jobs: int = 1) -> OrderEstimate:
    """Run a J sweep in R1, fit the slope and read off ``order = slope - 1``.

    ``grid`` overrides the config's sweep grid (it must then be a J sweep).
    The sequence's total normalized duration plays the role of ``S_n^2`` for
    the upper boundary, so externally supplied sequences are handled alike.
    """
    if grid is not None:
        base_config = replace(base_config, sweep_variable="J", sweep_grid=tuple(str(v) for v in grid))
    if base_config.sweep_variable != "J":
        raise AnalysisError("order estimation needs a J sweep")
    with hm.working_precision(base_config.digits):
        seq = engine.build_sequence(base_config.at(base_config.sweep_grid[0]))
        check_r1_window(base_config.sweep_grid, hm.hp(base_config.beta) * hm.hp(base_config.tau),
                        base_config.tau, seq.total_duration)
        result = engine.run_experiment(base_config, jobs)
        series = result.series()
        tau = hm.hp(base_config.tau)
        fit = fit_loglog_slope([((x * tau).mid(), d) for x, d in series])
    order = max(round(fit.slope - 1), 0)
    residual = abs(fit.slope - 1 - order)
    converged = [p.converged for p in result.points]
    return OrderEstimate(
        order=order,
        slope=fit.slope,
        stderr=fit.stderr,
        residual=residual,
        reliable=residual <= RESIDUAL_LIMIT and all(converged),
        regime=Regime.R1,
        window=fit.window,
        converged=converged,
        fit=fit,
        series=[(p.value, hm.to_decimal(p.mean, 20)) for p in result.points],
    )
