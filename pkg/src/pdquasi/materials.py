"""Material parameters, the bond constant, stretch, and the damage degradation law.

The degradation law is a C0 ramp in bond stretch: full interaction below the
onset stretch, zero at and beyond the critical stretch, and a tanh profile in
between. Note the profile does not meet the outer branches exactly: at both
band edges it jumps by (1 - tanh(rate))/2. That discontinuity is part of the
model definition and is asserted by the tests, not smoothed away.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import SetupError

MODES = ("1d", "plane_stress", "plane_strain", "3d")

MODE_DIMENSION = {"1d": 1, "plane_stress": 2, "plane_strain": 2, "3d": 3}


@dataclass(frozen=True)
class MaterialParams:
    """Isotropic linear-elastic bond material.

    youngs_modulus : Pa
    density        : kg/m^3
    mode           : one of '1d', 'plane_stress', 'plane_strain', '3d'
    horizon        : interaction radius, m
    thickness      : out-of-plane thickness for 2D modes, m
    area           : cross-section area for 1D, m^2
    """

    youngs_modulus: float
    density: float
    mode: str
    horizon: float
    thickness: float | None = None
    area: float | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise SetupError(f"unknown mode {self.mode!r}, expected one of {MODES}")
        if self.youngs_modulus <= 0:
            raise SetupError("Young's modulus must be positive")
        if self.density <= 0:
            raise SetupError("density must be positive")
        if self.horizon <= 0:
            raise SetupError("horizon must be positive")
        if self.mode in ("plane_stress", "plane_strain") and not self.thickness:
            raise SetupError(f"mode {self.mode!r} requires a thickness")
        if self.mode == "1d" and not self.area:
            raise SetupError("mode '1d' requires a cross-section area")

    @property
    def dimension(self) -> int:
        return MODE_DIMENSION[self.mode]

    @property
    def bond_constant(self) -> float:
        return bond_constant(self)

    @property
    def cell_volume_factor(self) -> float:
        """Multiplier turning dx^dimension into a physical cell volume (m^3)."""
        if self.mode == "3d":
            return 1.0
        if self.mode == "1d":
            return self.area
        return self.thickness


def bond_constant(mat: MaterialParams) -> float:
    """Pairwise stiffness coefficient c (Pa/m^4) for the material's mode."""
    e, d = mat.youngs_modulus, mat.horizon
    if mat.mode == "1d":
        return 2.0 * e / (math.pi * d**2 * mat.area)
    if mat.mode == "plane_stress":
        return 9.0 * e / (math.pi * d**3 * mat.thickness)
    if mat.mode == "plane_strain":
        return 48.0 * e / (5.0 * math.pi * d**3 * mat.thickness)
    return 12.0 * e / (math.pi * d**4)


@dataclass(frozen=True)
class DamageLaw:
    """Continuous bond degradation between an onset and a critical stretch.

    onset_stretch    : stretch at which degradation begins (> 0)
    critical_stretch : stretch at which the bond carries no force
    rate             : non-negative sharpness of the tanh ramp
    irreversible     : evaluate degradation at the historical max stretch
    """

    onset_stretch: float
    critical_stretch: float
    rate: float
    irreversible: bool = True

    def __post_init__(self):
        if not 0 < self.onset_stretch < self.critical_stretch:
            raise SetupError(
                "need 0 < onset_stretch < critical_stretch, got "
                f"{self.onset_stretch} and {self.critical_stretch}"
            )
        if self.rate < 0:
            raise SetupError("degradation rate must be non-negative")


def degradation(s, law: DamageLaw):
    """Degradation factor in [0, 1] for stretch ``s`` (scalar or array)."""
    s = np.asarray(s, dtype=float)
    sm, sc, beta = law.onset_stretch, law.critical_stretch, law.rate
    out = np.ones_like(s)
    band = (s > sm) & (s < sc)
    if np.any(band):
        arg = beta * (sm + sc - 2.0 * s[band]) / (sm - sc)
        out[band] = 0.5 * (1.0 - np.tanh(arg))
    out[s >= sc] = 0.0
    return out if out.ndim else float(out)


def degradation_slope(s, law: DamageLaw):
    """Derivative of the degradation factor with respect to stretch.

    Zero on the constant outer branches; the outer-branch value is used at the
    band edges as well since the jump there has no classical derivative.
    """
    s = np.asarray(s, dtype=float)
    sm, sc, beta = law.onset_stretch, law.critical_stretch, law.rate
    out = np.zeros_like(s)
    band = (s > sm) & (s < sc)
    if np.any(band):
        arg = beta * (sm + sc - 2.0 * s[band]) / (sm - sc)
        out[band] = (beta / (sm - sc)) * (1.0 - np.tanh(arg) ** 2)
    return out if out.ndim else float(out)


def stretch(xi: np.ndarray, eta: np.ndarray) -> float:
    """Relative elongation of a single bond.

    ``xi`` is the reference bond vector, ``eta`` the relative displacement of
    its endpoints. Raises SingularBondError when the deformed length is zero.
    """
    from .errors import SingularBondError

    ref = float(np.linalg.norm(xi))
    if ref == 0.0:
        raise SetupError("bond has zero reference length")
    cur = float(np.linalg.norm(np.asarray(xi) + np.asarray(eta)))
    if cur == 0.0:
        raise SingularBondError(-1, -1)
    return (cur - ref) / ref
