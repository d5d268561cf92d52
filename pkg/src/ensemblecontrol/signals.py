"""Closed-form control signals evaluable at arbitrary times.

Controls are kept as descriptors (polynomial, sinusoid-modulated, sums,
or sampled-with-interpolation) rather than as sample arrays, because the
fast-oscillation constructions need exact evaluation at integrator stage
times and exact derivatives/antiderivatives of the polynomial parts.

Polynomial coefficients may be Fractions; definite integrals are then exact,
which is how structural identities like "the control integrates to zero over
[0, 1]" survive even when the coefficients are astronomically scaled.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np


class ControlSignal:
    """Base type; subclasses implement ``eval`` for scalar or array t."""

    def eval(self, t):
        raise NotImplementedError

    def __call__(self, t):
        return self.eval(t)


@dataclass(frozen=True)
class Polynomial(ControlSignal):
    """c0 + c1*t + ... ; coefficients low degree first, Fraction or float."""

    coeffs: tuple

    def __init__(self, coeffs: Sequence):
        object.__setattr__(self, "coeffs", tuple(coeffs) or (0.0,))

    def eval(self, t):
        fc = [float(c) for c in self.coeffs]
        acc = fc[-1] if not isinstance(t, np.ndarray) else np.full_like(t, fc[-1], dtype=float)
        for c in reversed(fc[:-1]):
            acc = acc * t + c
        return acc

    def derivative(self) -> "Polynomial":
        if len(self.coeffs) == 1:
            return Polynomial([0.0])
        return Polynomial([c * (k + 1) for k, c in enumerate(self.coeffs[1:])])

    def antiderivative(self) -> "Polynomial":
        """Primitive vanishing at t = 0."""
        zero = Fraction(0) if any(isinstance(c, Fraction) for c in self.coeffs) else 0.0
        out = [zero]
        for k, c in enumerate(self.coeffs):
            if isinstance(c, Fraction):
                out.append(c / (k + 1))
            else:
                out.append(c / (k + 1.0))
        return Polynomial(out)

    def definite_integral(self, a=0, b=1):
        """Sum of c_k (b^{k+1} - a^{k+1}) / (k+1); exact for Fraction inputs."""
        total = 0
        for k, c in enumerate(self.coeffs):
            if isinstance(c, Fraction):
                total += c * (b ** (k + 1) - a ** (k + 1)) / (k + 1)
            else:
                total += c * (b ** (k + 1) - a ** (k + 1)) / (k + 1.0)
        return total

    def scaled(self, factor) -> "Polynomial":
        return Polynomial([c * factor for c in self.coeffs])


@dataclass(frozen=True)
class Sinusoid(ControlSignal):
    """gain * sin(t / inv_freq_sq + phase) * envelope(t)."""

    gain: float
    inv_freq_sq: float
    envelope: ControlSignal = field(default_factory=lambda: Polynomial([1.0]))
    phase: float = 0.0

    def eval(self, t):
        if isinstance(t, np.ndarray):
            osc = np.sin(t / self.inv_freq_sq + self.phase)
        else:
            osc = float(np.sin(t / self.inv_freq_sq + self.phase))
        return self.gain * osc * self.envelope.eval(t)

    def derivative(self) -> "Sum":
        """Product rule; the envelope must support derivative()."""
        denv = _derivative_of(self.envelope)
        return Sum(
            (
                Sinusoid(self.gain / self.inv_freq_sq, self.inv_freq_sq, self.envelope,
                         self.phase + np.pi / 2.0),
                Sinusoid(self.gain, self.inv_freq_sq, denv, self.phase),
            )
        )

    def scaled(self, factor) -> "Sinusoid":
        return Sinusoid(self.gain * factor, self.inv_freq_sq, self.envelope, self.phase)

    def antiderivative(self) -> "Sum":
        """Primitive vanishing at t = 0; constant envelopes only."""
        env = self.envelope
        if not (isinstance(env, Polynomial) and len(env.coeffs) == 1):
            raise TypeError("Sinusoid antiderivative needs a constant envelope")
        c = float(env.coeffs[0])
        q = self.inv_freq_sq
        prim = Sinusoid(-self.gain * c * q, q, phase=self.phase + np.pi / 2.0)
        return Sum((prim, Polynomial([-prim.eval(0.0)])))


@dataclass(frozen=True)
class Sum(ControlSignal):
    parts: tuple

    def __init__(self, parts: Sequence[ControlSignal]):
        object.__setattr__(self, "parts", tuple(parts))

    def eval(self, t):
        if isinstance(t, np.ndarray):
            acc = np.zeros_like(t, dtype=float)
        else:
            acc = 0.0
        for p in self.parts:
            acc = acc + p.eval(t)
        return acc

    def derivative(self) -> "Sum":
        return Sum([_derivative_of(p) for p in self.parts])

    def antiderivative(self) -> "Sum":
        return Sum([p.antiderivative() for p in self.parts])

    def scaled(self, factor) -> "Sum":
        return Sum([scale(p, factor) for p in self.parts])


@dataclass(frozen=True)
class Sampled(ControlSignal):
    """Linear interpolation through (times, values); times strictly increasing."""

    times: tuple
    values: tuple

    def __init__(self, times: Sequence[float], values: Sequence[float]):
        ts = tuple(float(t) for t in times)
        vs = tuple(float(v) for v in values)
        if len(ts) != len(vs) or len(ts) < 2:
            raise ValueError("Sampled needs matching times/values with >= 2 points")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("Sampled times must be strictly increasing")
        object.__setattr__(self, "times", ts)
        object.__setattr__(self, "values", vs)

    def eval(self, t):
        res = np.interp(t, self.times, self.values)
        return float(res) if not isinstance(t, np.ndarray) else res

    def derivative(self) -> "Sampled":
        """Finite-difference slope estimate, sampled on the same mesh."""
        ts = np.asarray(self.times)
        vs = np.asarray(self.values)
        dv = np.gradient(vs, ts)
        return Sampled(ts, dv)

    def antiderivative(self) -> "Sampled":
        """Trapezoid cumulative integral, zero at the first sample time."""
        ts = np.asarray(self.times)
        vs = np.asarray(self.values)
        steps = np.diff(ts) * 0.5 * (vs[1:] + vs[:-1])
        return Sampled(ts, np.concatenate([[0.0], np.cumsum(steps)]))

    def scaled(self, factor) -> "Sampled":
        return Sampled(self.times, [v * factor for v in self.values])


ZERO = Polynomial([0.0])
ONE = Polynomial([1.0])


def _derivative_of(sig: ControlSignal) -> ControlSignal:
    deriv = getattr(sig, "derivative", None)
    if deriv is None:
        raise TypeError(f"{type(sig).__name__} signal does not support differentiation")
    return deriv()


def scale(sig: ControlSignal, factor) -> ControlSignal:
    """Structurally scale a signal by a constant."""
    scaled = getattr(sig, "scaled", None)
    if scaled is None:
        raise TypeError(f"{type(sig).__name__} signal does not support scaling")
    return scaled(factor)
