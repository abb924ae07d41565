"""Material laws: conductivity per region and field-dependent reluctivity.

The wire and insulator are non-conducting and magnetically linear (vacuum
reluctivity).  The shield is a conductor whose reluctivity nu(B) comes from
a monotone C1 cubic Hermite spline (Fritsch-Carlson slope limiting), with a
clamped linear continuation beyond the last knot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mesh import Region

__all__ = [
    "MU0",
    "VACUUM_RELUCTIVITY",
    "ConstantReluctivity",
    "ReluctivitySpline",
    "MaterialMap",
    "load_reluctivity_table",
    "default_shield_spline",
    "eval_reluctivity",
]

MU0 = 4.0e-7 * math.pi
VACUUM_RELUCTIVITY = 1.0 / MU0


@dataclass(frozen=True)
class ConstantReluctivity:
    """Field-independent reluctivity (vacuum or linearized material)."""

    value: float = VACUUM_RELUCTIVITY

    def __post_init__(self):
        if not self.value > 0.0:
            raise ValueError("reluctivity must be positive")

    def evaluate(self, flux_density):
        b = np.asarray(flux_density, dtype=float)
        return np.full_like(b, self.value), np.zeros_like(b)


def _fritsch_carlson_slopes(b: np.ndarray, nu: np.ndarray) -> np.ndarray:
    """Hermite knot slopes that keep the interpolant monotone per interval."""
    h = np.diff(b)
    delta = np.diff(nu) / h
    n = b.size
    d = np.zeros(n)
    if n == 2:
        d[:] = delta[0]
        return d
    # interior: weighted harmonic mean, zero across local extrema
    for k in range(1, n - 1):
        if delta[k - 1] * delta[k] <= 0.0:
            d[k] = 0.0
        else:
            w1 = 2.0 * h[k] + h[k - 1]
            w2 = h[k] + 2.0 * h[k - 1]
            d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k])
    # one-sided endpoint formula, limited to preserve monotonicity
    for k, (h0, h1, d0, d1) in ((0, (h[0], h[1], delta[0], delta[1])),
                                (n - 1, (h[-1], h[-2], delta[-1], delta[-2]))):
        slope = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1)
        if slope * d0 <= 0.0:
            slope = 0.0
        elif d0 * d1 < 0.0 and abs(slope) > 3.0 * abs(d0):
            slope = 3.0 * d0
        d[k] = slope
    return d


@dataclass(frozen=True)
class ReluctivitySpline:
    """Monotone C1 cubic Hermite interpolant of nu(B) with linear tails.

    Beyond the last knot the curve continues linearly with
    ``extrapolation_slope`` (the endpoint Hermite slope unless overridden),
    clamped to stay within (0, 1/mu0]; below the first knot it continues
    with the first Hermite slope under the same clamp.

    Attributes
    ----------
    knots_b : ndarray
        Strictly increasing flux-density knots [T], knots_b[0] >= 0.
    knots_nu : ndarray
        Positive reluctivity values [m/H] at the knots.
    slopes : ndarray
        Hermite slope per knot (Fritsch-Carlson limited).
    extrapolation_slope : float
        Slope of the linear continuation beyond the last knot.
    """

    knots_b: np.ndarray
    knots_nu: np.ndarray
    extrapolation_slope: float | None = None
    slopes: np.ndarray = field(init=False, repr=False, compare=False)
    _coeffs: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        b = np.asarray(self.knots_b, dtype=float)
        nu = np.asarray(self.knots_nu, dtype=float)
        if b.ndim != 1 or b.size < 2 or nu.shape != b.shape:
            raise ValueError("need at least two (B, nu) knots of equal length")
        if not np.all(np.diff(b) > 0):
            raise ValueError("knot flux densities must be strictly increasing")
        if b[0] < 0.0:
            raise ValueError("knot flux densities must be non-negative")
        if not np.all(nu > 0.0):
            raise ValueError("knot reluctivities must be positive")
        object.__setattr__(self, "knots_b", b)
        object.__setattr__(self, "knots_nu", nu)
        d = _fritsch_carlson_slopes(b, nu)
        object.__setattr__(self, "slopes", d)
        if self.extrapolation_slope is None:
            # saturate towards vacuum by ~2x the last knot: deeply driven
            # material behaves like free space, and the bounded transition
            # keeps the Newton solves from crawling across a long tail
            saturating = (VACUUM_RELUCTIVITY - nu[-1]) / b[-1]
            object.__setattr__(self, "extrapolation_slope",
                               float(max(d[-1], saturating)))
        h = np.diff(b)
        delta = np.diff(nu) / h
        c2 = (3.0 * delta - 2.0 * d[:-1] - d[1:]) / h
        c3 = (d[:-1] + d[1:] - 2.0 * delta) / h**2
        object.__setattr__(self, "_coeffs", (c2, c3))

    @property
    def nu_floor(self) -> float:
        return float(self.knots_nu.min())

    def evaluate(self, flux_density):
        """Return (nu, d nu/dB) at ``flux_density`` (any array shape, B >= 0).

        Knot evaluations reproduce the knot values exactly; outside the knot
        range the linear continuation is clamped to [min(nu_k), 1/mu0] with
        zero derivative where the clamp is active.
        """
        b = np.asarray(flux_density, dtype=float)
        if b.size and float(b.min()) < 0.0:
            raise ValueError("flux density must be non-negative")
        kb, kn, d = self.knots_b, self.knots_nu, self.slopes
        c2, c3 = self._coeffs
        idx = np.searchsorted(kb, b, side="right") - 1
        idx = np.clip(idx, 0, kb.size - 2)
        s = b - kb[idx]
        nu = kn[idx] + s * (d[idx] + s * (c2[idx] + s * c3[idx]))
        dnu = d[idx] + s * (2.0 * c2[idx] + 3.0 * s * c3[idx])

        lo = b < kb[0]
        hi = b >= kb[-1]
        nu = np.where(lo, kn[0] + d[0] * (b - kb[0]), nu)
        dnu = np.where(lo, d[0], dnu)
        nu = np.where(hi, kn[-1] + self.extrapolation_slope * (b - kb[-1]), nu)
        dnu = np.where(hi, self.extrapolation_slope, dnu)
        clamped = (nu < self.nu_floor) | (nu > VACUUM_RELUCTIVITY)
        nu = np.minimum(np.maximum(nu, self.nu_floor), VACUUM_RELUCTIVITY)
        dnu = np.where(clamped, 0.0, dnu)
        return nu, dnu


@dataclass(frozen=True)
class MaterialMap:
    """Per-region conductivity and reluctivity models.

    The wire and insulator are fixed to sigma = 0 and vacuum reluctivity;
    only the shield conductivity and reluctivity model are configurable.
    """

    shield_conductivity: float = 1.0e7
    shield_reluctivity: ReluctivitySpline | ConstantReluctivity | None = None

    def __post_init__(self):
        if not self.shield_conductivity > 0.0:
            raise ValueError("shield conductivity must be positive")
        if self.shield_reluctivity is None:
            object.__setattr__(self, "shield_reluctivity", default_shield_spline())

    def conductivity(self, region: Region) -> float:
        return self.shield_conductivity if region == Region.SHIELD else 0.0

    def reluctivity_model(self, region: Region):
        if region == Region.SHIELD:
            return self.shield_reluctivity
        return ConstantReluctivity()


def eval_reluctivity(flux_density, region: Region, materials: MaterialMap):
    """Reluctivity and its B-derivative for one region; rejects B < 0."""
    b = np.asarray(flux_density, dtype=float)
    if np.any(b < 0.0):
        raise ValueError("flux density must be non-negative (pass |dA/dr|)")
    return materials.reluctivity_model(region).evaluate(b)


def load_reluctivity_table(path) -> ReluctivitySpline:
    """Read a two-column "B nu" text table ('#' comments, increasing B)."""
    b_vals, nu_vals = [], []
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected two columns 'B nu', got {raw!r}")
        try:
            b_vals.append(float(parts[0]))
            nu_vals.append(float(parts[1]))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: non-numeric entry in {raw!r}") from exc
    if len(b_vals) < 2:
        raise ValueError(f"{path}: need at least two knots")
    if not all(b2 > b1 for b1, b2 in zip(b_vals, b_vals[1:])):
        raise ValueError(f"{path}: B column must be strictly increasing")
    return ReluctivitySpline(np.array(b_vals), np.array(nu_vals))


def default_shield_spline() -> ReluctivitySpline:
    """Packaged synthetic soft-iron-like nu(B) table."""
    from importlib.resources import files

    return load_reluctivity_table(files("coaxmgrit.data") / "soft_iron_nu.txt")
