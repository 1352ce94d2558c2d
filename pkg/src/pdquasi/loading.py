"""Loading programs: how boundary prescriptions and body forces ramp in.

Displacement-driven runs move the constrained regions at a fixed rate per
solver step until the full amplitude is reached, then hold. Force-driven runs
apply the whole body force from the first step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ParticleSet


@dataclass
class DisplacementProgram:
    """Constant-rate boundary motion up to a total amplitude.

    motion    : (n, dim) displacement of every particle at full load
                (zero rows for particles that merely stay pinned)
    amplitude : scalar total loading displacement, m
    rate      : boundary displacement per step, m
    start     : displacement already applied when the program begins, m
    """

    motion: np.ndarray
    amplitude: float
    rate: float
    start: float = 0.0

    kind = "displacement"

    def applied_at(self, step: int) -> float:
        return min(self.amplitude, self.start + step * self.rate)

    def complete(self, step: int) -> bool:
        return self.applied_at(step) >= self.amplitude

    @property
    def loading_steps(self) -> int:
        """Steps needed to reach full amplitude."""
        if self.rate <= 0:
            return 0
        remaining = self.amplitude - self.start
        if remaining <= 0:
            return 0
        return int(np.ceil(remaining / self.rate - 1e-12))

    def apply(self, u: np.ndarray, pts: ParticleSet, step: int) -> None:
        """Write the prescriptions for `step` into the constrained entries of u."""
        scale = self.applied_at(step) / self.amplitude if self.amplitude else 0.0
        mask = pts.constrained_axes
        u[mask] = scale * self.motion[mask]


@dataclass
class BodyForceProgram:
    """Full body force from step zero; constrained regions stay pinned."""

    motion: np.ndarray | None = None   # optional pinned-region pattern (all zero)

    kind = "body_force"
    amplitude = 0.0
    rate = 0.0

    def applied_at(self, step: int) -> float:
        return 0.0

    def complete(self, step: int) -> bool:
        return True

    @property
    def loading_steps(self) -> int:
        return 0

    def apply(self, u: np.ndarray, pts: ParticleSet, step: int) -> None:
        u[pts.constrained_axes] = 0.0
