"""Exponential area outage rate fits and the hardening shift they imply."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy import stats

from .windalign import OutageRateCurve

MAX_ITER = 200
REL_TOL = 1e-10


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExponentialFit:
    """``rate(v) = a * exp(b * v)`` with 99% confidence half-widths."""

    a: float
    b: float
    ci99_a: float
    ci99_b: float
    residual_sse: float
    n_points: int = 0
    iterations: int = 0
    weighted: bool = False

    def __call__(self, v):
        return self.a * np.exp(self.b * np.asarray(v, dtype=float))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sse"] = d.pop("residual_sse")
        d["implied_x_for_10pct"] = shift_factor(self, HardeningSpec(target_reduction=0.10)).shift_x
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExponentialFit":
        return cls(a=d["a"], b=d["b"], ci99_a=d["ci99_a"], ci99_b=d["ci99_b"],
                   residual_sse=d["sse"], n_points=d.get("n_points", 0),
                   iterations=d.get("iterations", 0), weighted=d.get("weighted", False))


@dataclass(frozen=True)
class HardeningSpec:
    """Either a rightward curve shift in mph or a target outage-rate reduction."""

    shift_x: Optional[float] = None
    target_reduction: Optional[float] = None

    def __post_init__(self):
        if (self.shift_x is None) == (self.target_reduction is None):
            raise ValueError("set exactly one of shift_x and target_reduction")
        if self.shift_x is not None and self.shift_x < 0:
            raise ValueError("shift_x must be >= 0")
        if self.target_reduction is not None and not 0 < self.target_reduction < 1:
            raise ValueError("target_reduction must lie in (0, 1)")


class Shift(NamedTuple):
    rho: float
    shift_x: float


def _initial_guess(v, y):
    pos = y > 0
    if pos.sum() >= 2 and np.ptp(v[pos]) > 0:
        b0 = float(np.polyfit(v[pos], np.log(y[pos]), 1)[0])
    else:
        b0 = 0.0
    v_min = float(v[pos].min())
    a0 = float(y[pos][np.argmin(v[pos])]) * math.exp(-b0 * v_min)
    return a0, b0


def _weighted_sse(v, y, w, a, b):
    with np.errstate(over="ignore", invalid="ignore"):
        r = y - a * np.exp(b * v)
        sse = float(np.sum(w * r * r))
    return sse if math.isfinite(sse) else math.inf


def fit_exponential(curve: OutageRateCurve, weighted: bool = False,
                    max_iter: int = MAX_ITER, tol: float = REL_TOL) -> ExponentialFit:
    """Damped least-squares (Levenberg-Marquardt) fit of ``a*exp(b*v)`` to a rate curve.

    Zero-rate points stay in the objective; only the starting point comes from
    a log-linear regression on the positive ones.  With ``weighted`` each point
    is weighted by its crossing count.
    """
    v, y = curve.speeds, curve.rates
    w = curve.exposures if weighted else np.ones_like(y)
    if len(v) < 3:
        raise FitError(f"need at least 3 curve points, got {len(v)}")
    if np.any(y < 0) or not np.all(np.isfinite(y)):
        raise FitError("rates must be finite and nonnegative")
    if not np.any(y > 0):
        raise FitError("degenerate curve: every mean rate is zero")

    a, b = _initial_guess(v, y)
    sse = _weighted_sse(v, y, w, a, b)
    lam = 1e-3
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        e = np.exp(b * v)
        J = np.column_stack([e, a * v * e])
        r = y - a * e
        A = J.T @ (w[:, None] * J)
        g = J.T @ (w * r)
        diag = np.diag(A).copy()
        diag[diag == 0] = 1.0
        accepted = False
        while lam < 1e20:
            try:
                step = np.linalg.solve(A + lam * np.diag(diag), g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            a_new, b_new = a + step[0], b + step[1]
            sse_new = _weighted_sse(v, y, w, a_new, b_new)
            if sse_new <= sse:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            # no downhill step at any damping: already at the minimum
            converged = True
            break
        rel = max(abs(step[0]) / max(abs(a_new), 1e-300), abs(step[1]) / max(abs(b_new), 1e-300))
        a, b, sse = a_new, b_new, sse_new
        lam = max(lam / 10.0, 1e-12)
        if rel < tol or sse == 0.0:
            converged = True
            break
    if not converged:
        raise FitError(f"no convergence after {max_iter} iterations (a={a:g}, b={b:g})")
    if not (math.isfinite(a) and math.isfinite(b)) or a <= 0:
        raise FitError(f"fit produced invalid parameters a={a!r}, b={b!r}")

    ci_a, ci_b = _ci99(v, w, a, b, sse)
    return ExponentialFit(a=float(a), b=float(b), ci99_a=ci_a, ci99_b=ci_b,
                          residual_sse=sse, n_points=len(v), iterations=it, weighted=weighted)


def _ci99(v, w, a, b, sse):
    """Half-widths from the linearized covariance at the optimum."""
    dof = len(v) - 2
    e = np.exp(b * v)
    J = np.column_stack([e, a * v * e])
    A = J.T @ (w[:, None] * J)
    try:
        cov = (sse / dof) * np.linalg.inv(A)
    except np.linalg.LinAlgError:
        return math.inf, math.inf
    q = stats.t.ppf(0.995, dof)
    half = q * np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return float(half[0]), float(half[1])


def shift_factor(fit: ExponentialFit, spec: HardeningSpec) -> Shift:
    """Outage-rate retention factor of a hardening and its equivalent shift in mph."""
    if spec.shift_x is not None:
        return Shift(math.exp(-fit.b * spec.shift_x), float(spec.shift_x))
    rho = 1.0 - spec.target_reduction
    return Shift(rho, -math.log(rho) / fit.b)


def shifted_curve(fit: ExponentialFit, x: float) -> Callable:
    """The fitted curve moved right by ``x`` mph."""
    if x < 0:
        raise ValueError("hardening shift must be >= 0")
    a, b = fit.a, fit.b
    return lambda v: a * np.exp(b * (np.asarray(v, dtype=float) - x))
