"""C1 five-region curves used for load-shedding fractions and droop saturation.

A curve is a falling ramp of slope ``-slope`` between two saturation levels.
The two corners of the ramp are replaced by quadratic patches of half-width
``delta`` centred on the corners, so value and first derivative are
continuous everywhere::

    Region 1   u >= u1          lower_value
    Region 2   u2 <= u < u1     quadratic, slope 0 -> -slope
    Region 3   u3 < u < u2      lower_value + slope * (u_top - u)
    Region 4   u4 < u <= u3     quadratic, slope -slope -> 0
    Region 5   u <= u4          upper_value

With symmetric patches the matching conditions are solved in closed form:
the slope varies linearly across the patch, so the curvature is
``slope / (2 delta)`` and the value offset at the far end is ``slope * delta``,
which is exactly the rise of the ramp over the same interval.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

DEFAULT_DISCRETE_BETA = 1000.0


class Orientation(str, Enum):
    FALLING = "FALLING"
    CLAMP = "CLAMP"


class CurveError(ValueError):
    pass


@dataclass(frozen=True)
class PatchedCurve:
    """Five-region C1 ramp.

    ``u_top`` is the corner where the ramp leaves ``lower_value``; the ramp
    reaches ``upper_value`` at ``u_bottom = u_top - (upper - lower) / slope``.
    """

    u_top: float
    slope: float
    lower_value: float
    upper_value: float
    delta: float
    orientation: Orientation = Orientation.FALLING

    def __post_init__(self):
        if not self.slope > 0:
            raise CurveError(f"slope must be positive, got {self.slope}")
        if not self.upper_value > self.lower_value:
            raise CurveError("upper_value must exceed lower_value")
        if not 0 < self.delta < 0.5 * self.span:
            raise CurveError(
                f"patch half-width {self.delta} must lie in (0, {0.5 * self.span}) "
                "or the quadratic patches overlap"
            )

    @property
    def span(self) -> float:
        """Width of the ramp in the controlling signal."""
        return (self.upper_value - self.lower_value) / self.slope

    @property
    def u_bottom(self) -> float:
        return self.u_top - self.span

    @property
    def breakpoints(self) -> tuple[float, float, float, float]:
        d = self.delta
        return (self.u_top + d, self.u_top - d, self.u_bottom + d, self.u_bottom - d)

    @property
    def curvature(self) -> float:
        """Magnitude of the second derivative inside either patch."""
        return self.slope / (2.0 * self.delta)

    @property
    def _k(self) -> tuple[float, float]:
        # a = slope / (4 delta), taken from the breakpoints as stored so the
        # slope is matched to round-off even when u >> delta
        u1, u2, u3, u4 = self.breakpoints
        return self.slope / (2.0 * (u1 - u2)), self.slope / (2.0 * (u3 - u4))

    @property
    def patch_lo(self) -> tuple[float, float, float]:
        """(a, b, c) of the Region 2 quadratic ``a u^2 + b u + c``."""
        u1 = self.breakpoints[0]
        a = self._k[0]
        return (a, -2.0 * a * u1, self.lower_value + a * u1 * u1)

    @property
    def patch_hi(self) -> tuple[float, float, float]:
        """(a, b, c) of the Region 4 quadratic ``a u^2 + b u + c``."""
        u4 = self.breakpoints[3]
        a = -self._k[1]
        return (a, -2.0 * a * u4, self.upper_value + a * u4 * u4)

    def eval(self, u):
        """Return ``(value, derivative)``; accepts scalars or arrays."""
        scalar = np.ndim(u) == 0
        u = np.asarray(u, dtype=float)
        u1, u2, u3, u4 = self.breakpoints
        k_lo, k_hi = self._k

        value = np.full(u.shape, self.lower_value)
        deriv = np.zeros(u.shape)

        m2 = (u < u1) & (u >= u2)
        t = u1 - u[m2]
        value[m2] = self.lower_value + k_lo * t * t
        deriv[m2] = -2.0 * k_lo * t

        m3 = (u < u2) & (u > u3)
        value[m3] = self.lower_value + self.slope * (self.u_top - u[m3])
        deriv[m3] = -self.slope

        m4 = (u <= u3) & (u > u4)
        t = u[m4] - u4
        value[m4] = self.upper_value - k_hi * t * t
        deriv[m4] = -2.0 * k_hi * t

        m5 = u <= u4
        value[m5] = self.upper_value

        if scalar:
            return float(value), float(deriv)
        return value, deriv

    def second_derivative(self, u):
        """Second derivative of the active region.

        The curve is only C1 at its four breakpoints; there the mean of the
        one-sided values is returned.
        """
        scalar = np.ndim(u) == 0
        u = np.asarray(u, dtype=float)
        u1, u2, u3, u4 = self.breakpoints
        c_lo, c_hi = (2.0 * k for k in self._k)

        out = np.zeros(u.shape)
        out[(u < u1) & (u > u2)] = c_lo
        out[(u < u3) & (u > u4)] = -c_hi
        for bp, val in ((u1, 0.5 * c_lo), (u2, 0.5 * c_lo), (u3, -0.5 * c_hi), (u4, -0.5 * c_hi)):
            out[u == bp] = val
        if scalar:
            return float(out)
        return out

    def near_breakpoint(self, u, tol: float) -> bool:
        return any(abs(u - bp) <= tol for bp in self.breakpoints)


@dataclass(frozen=True)
class ConstantCurve:
    """Degenerate curve for devices with no frequency response."""

    value: float = 0.0

    def eval(self, u):
        if np.ndim(u) == 0:
            return self.value, 0.0
        u = np.asarray(u, dtype=float)
        return np.full(u.shape, self.value), np.zeros(u.shape)

    def second_derivative(self, u):
        if np.ndim(u) == 0:
            return 0.0
        return np.zeros(np.shape(u))

    def near_breakpoint(self, u, tol: float) -> bool:
        return False


def default_step_delta(beta: float) -> float:
    # min(0.05/beta, 0.2 * 1/(2 beta)) reduces to 0.05/beta
    return min(0.05 / beta, 0.2 * (1.0 / (2.0 * beta)))


def build_step_curve(threshold: float, beta: float, delta: float | None = None) -> PatchedCurve:
    """Shed fraction vs. controlling signal: 0 above ``threshold``, 1 below
    ``threshold - 1/beta``, ramp ``-beta (u - threshold)`` in between."""
    if not beta > 0:
        raise CurveError(f"beta must be positive, got {beta}")
    if delta is None:
        delta = default_step_delta(beta)
    if not 0 < delta < 1.0 / (2.0 * beta):
        raise CurveError(f"delta={delta} must lie in (0, 1/(2 beta)) = (0, {1.0 / (2.0 * beta)})")
    return PatchedCurve(
        u_top=float(threshold),
        slope=float(beta),
        lower_value=0.0,
        upper_value=1.0,
        delta=float(delta),
        orientation=Orientation.FALLING,
    )


def build_clamp_curve(gain: float, lo: float, hi: float, delta: float | None = None):
    """Smooth saturation of the droop response ``-gain * u`` to ``[lo, hi]``.

    ``lo < 0 < hi`` keeps the zero-deviation operating point on the ramp. A
    zero gain yields a :class:`ConstantCurve` at 0.
    """
    if gain < 0:
        raise CurveError(f"droop gain must be non-negative, got {gain}")
    if not lo < 0 < hi:
        raise CurveError(f"clamp limits must satisfy lo < 0 < hi, got lo={lo}, hi={hi}")
    if gain == 0:
        return ConstantCurve(0.0)
    if delta is None:
        delta = 0.05 * min(-lo, hi) / gain
    u_top = -lo / gain
    u_bottom = -hi / gain
    if not (u_top - delta > 0 and u_bottom + delta < 0):
        raise CurveError("clamp patches must not reach zero deviation")
    return PatchedCurve(
        u_top=u_top,
        slope=float(gain),
        lower_value=float(lo),
        upper_value=float(hi),
        delta=float(delta),
        orientation=Orientation.CLAMP,
    )


def eval(curve, u):
    return curve.eval(u)


def second_derivative(curve, u):
    return curve.second_derivative(u)
