"""Pulsed voltage source: sine-referenced PWM with a sawtooth carrier.

The pulse pattern compares the rectified sine |sin(2*pi*t/T)| against a
sawtooth s_n(t) = frac(n*t/T) with n teeth per period; whenever the
sawtooth lies below the sine the output is the sign of the sine, else 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["PwmSource", "eval_pwm", "eval_voltage"]


@dataclass(frozen=True)
class PwmSource:
    """Pulsed source v(t) = amplitude * p(t).

    Attributes
    ----------
    amplitude : float
        Pulse amplitude [V].
    period : float
        Fundamental period T [s] of the reference sine.
    teeth : int
        Number of sawtooth teeth per period.
    """

    amplitude: float = 0.25
    period: float = 0.02
    teeth: int = 200

    def __post_init__(self):
        if self.amplitude < 0.0:
            raise ValueError("amplitude must be non-negative")
        if not self.period > 0.0:
            raise ValueError("period must be positive")
        if not (isinstance(self.teeth, (int, np.integer)) and self.teeth >= 1):
            raise ValueError("teeth count must be an integer >= 1")

    def pulse(self, t):
        return eval_pwm(t, self)

    def voltage(self, t):
        return eval_voltage(t, self)


def eval_pwm(t, src: PwmSource):
    """Pulse pattern p(t) in {-1, 0, +1} for t >= 0.

    Scalar input returns a Python int; array input returns an int array.
    """
    tt = np.asarray(t, dtype=float)
    if np.any(tt < 0.0):
        raise ValueError("time must be non-negative")
    phase = tt / src.period
    sine = np.sin(2.0 * np.pi * phase)
    saw = np.mod(src.teeth * phase, 1.0)
    p = np.where(saw - np.abs(sine) < 0.0, np.sign(sine), 0.0).astype(int)
    return int(p) if np.isscalar(t) or tt.ndim == 0 else p


def eval_voltage(t, src: PwmSource):
    """Source voltage amplitude * p(t) [V]."""
    p = eval_pwm(t, src)
    out = src.amplitude * np.asarray(p, dtype=float)
    return float(out) if np.isscalar(t) or out.ndim == 0 else out
