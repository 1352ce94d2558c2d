"""Bond kinematics, force density assembly, and damage bookkeeping.

Assembly convention: each particle's internal force density sums the full
c * stretch * degradation contribution of every alive bond (no half-split of
the pair force). The tangent and residual in the implicit solver are exact
derivatives of this sum, which keeps the three mutually consistent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingularBondError
from .materials import DamageLaw, MaterialParams, degradation
from .model import HorizonTable, ParticleSet, PDModel


@dataclass
class SystemState:
    """Mutable per-run fields: displacements, body force, damage history."""

    u: np.ndarray        # (n, dim) displacements, m
    b: np.ndarray        # (n, dim) body force density, N/m^3
    s_max: np.ndarray    # (nb,) historical max stretch per bond

    def copy(self) -> "SystemState":
        return SystemState(self.u.copy(), self.b.copy(), self.s_max.copy())


def make_state(model: PDModel) -> SystemState:
    n, m = model.particles.n, model.dimension
    return SystemState(u=np.zeros((n, m)), b=np.zeros((n, m)),
                       s_max=np.zeros(model.table.n_bonds))


def bond_geometry(x: np.ndarray, u: np.ndarray, table: HorizonTable):
    """Deformed bond vectors, lengths, and stretches for all bonds.

    Returns (r, rlen, s) with r the deformed relative position from bond_i
    to bond_j. Raises SingularBondError if an alive bond's endpoints coincide.
    """
    y = x + u
    r = y[table.bond_j] - y[table.bond_i]
    rlen = np.linalg.norm(r, axis=1)
    bad = (rlen == 0.0) & table.alive
    if bad.any():
        k = int(np.argmax(bad))
        raise SingularBondError(int(table.bond_i[k]), int(table.bond_j[k]))
    s = (rlen - table.ref_len) / table.ref_len
    return r, rlen, s


def effective_stretch(s: np.ndarray, s_max: np.ndarray, law: DamageLaw | None):
    """Stretch at which degradation is evaluated (historical max when
    irreversibility is on)."""
    if law is None or not law.irreversible:
        return s
    return np.maximum(s, s_max)


def bond_force(xi, eta, c: float, degr: float, correction: float,
               volume: float) -> np.ndarray:
    """Force density contribution of one bond on its first endpoint.

    xi is the reference vector to the neighbor, eta the relative displacement.
    `degr` is the degradation factor, `correction` the combined mu*nu weight,
    `volume` the neighbor's cell volume.
    """
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    r = xi + eta
    rlen = float(np.linalg.norm(r))
    if rlen == 0.0:
        raise SingularBondError(-1, -1)
    ref = float(np.linalg.norm(xi))
    s = (rlen - ref) / ref
    return c * s * degr * correction * volume * (r / rlen)


def assemble_internal_force(state: SystemState, table: HorizonTable,
                            pts: ParticleSet, mat: MaterialParams,
                            law: DamageLaw | None = None) -> np.ndarray:
    """Per-particle internal force density (N/m^3), damage included.

    Dead bonds contribute nothing. With irreversibility, degradation is
    evaluated at max(current stretch, recorded history).
    """
    n, m = pts.n, pts.dimension
    r, rlen, s = bond_geometry(pts.x, state.u, table)
    degr = np.ones(table.n_bonds)
    if law is not None:
        degr = degradation(effective_stretch(s, state.s_max, law), law)
    c = mat.bond_constant
    w = c * table.mu * table.nu * s * degr * table.alive / rlen
    # force on bond_i points along +r weighted by the neighbor's volume
    contrib = (w * pts.volume[table.bond_j])[:, None] * r
    contrib_ji = (w * pts.volume[table.bond_i])[:, None] * r
    out = np.empty((n, m))
    for p in range(m):
        out[:, p] = np.bincount(table.bond_i, weights=contrib[:, p], minlength=n) \
                  - np.bincount(table.bond_j, weights=contrib_ji[:, p], minlength=n)
    return out


def damage_index(state: SystemState, table: HorizonTable, pts: ParticleSet,
                 law: DamageLaw | None = None) -> np.ndarray:
    """Volume-weighted lost bond capacity per particle, in [0, 1].

    0 for fully intact horizons and for isolated particles; 1 once every
    bond is dead or fully degraded.
    """
    n = pts.n
    _, _, s = bond_geometry(pts.x, state.u, table)
    degr = np.ones(table.n_bonds)
    if law is not None:
        degr = degradation(effective_stretch(s, state.s_max, law), law)
    cap = degr * table.alive
    vi = pts.volume[table.bond_i]
    vj = pts.volume[table.bond_j]
    num = np.bincount(table.bond_i, weights=cap * vj, minlength=n) \
        + np.bincount(table.bond_j, weights=cap * vi, minlength=n)
    den = np.bincount(table.bond_i, weights=vj, minlength=n) \
        + np.bincount(table.bond_j, weights=vi, minlength=n)
    out = np.zeros(n)
    has = den > 0
    out[has] = 1.0 - num[has] / den[has]
    return out


def update_damage_history(state: SystemState, table: HorizonTable,
                          pts: ParticleSet) -> SystemState:
    """Fold the current stretches into the per-bond historical maxima."""
    _, _, s = bond_geometry(pts.x, state.u, table)
    np.maximum(state.s_max, np.where(table.alive, s, state.s_max),
               out=state.s_max)
    return state


def current_stretches(state: SystemState, table: HorizonTable,
                      pts: ParticleSet) -> np.ndarray:
    _, _, s = bond_geometry(pts.x, state.u, table)
    return s
