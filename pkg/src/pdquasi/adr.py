"""Explicit quasi-static solver by adaptive dynamic relaxation.

The equilibrium equations are embedded in a fictitious dynamic system with
diagonal inertia sized from absolute row sums of the reference bond stiffness
and a damping coefficient re-estimated every step from Rayleigh's quotient.
Central-difference stepping then relaxes the system to its static fixed
point; convergence is judged by the relative change of the whole displacement
field between consecutive steps.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .bonds import (SystemState, assemble_internal_force, bond_geometry,
                    update_damage_history)
from .errors import SetupError
from .materials import DamageLaw, MaterialParams
from .model import HorizonTable, ParticleSet, PDModel

DEFAULT_TIME_STEP = 1.0
VELOCITY_EPS = 1e-30


@dataclass
class ADRConfig:
    tolerance: float = 1e-9        # whole-field displacement tolerance
    max_steps: int = 500_000
    time_step: float = DEFAULT_TIME_STEP
    check_window: int = 1          # consecutive sub-tolerance checks required


@dataclass
class ADRState:
    """Integration state: displacements live in `state`, the half-step
    velocity, previous total force and fictitious densities here."""

    state: SystemState
    velocity: np.ndarray           # (n, dim) half-step fictitious velocity
    lam: np.ndarray                # (n, dim) fictitious diagonal densities
    time_step: float = DEFAULT_TIME_STEP
    force_prev: np.ndarray | None = None
    step: int = 0


@dataclass
class ADRReport:
    steps: int = 0
    loading_steps: int = 0
    converged: bool = False
    final_error: float = np.inf
    seconds: float = 0.0
    trace_steps: list = field(default_factory=list)
    trace_error: list = field(default_factory=list)
    trace_damaged: list = field(default_factory=list)


def fictitious_density(table: HorizonTable, pts: ParticleSet,
                       mat: MaterialParams,
                       dt: float = DEFAULT_TIME_STEP) -> np.ndarray:
    """Per-DOF fictitious densities from reference-configuration stiffness.

    Each alive bond adds its absolute stiffness row sum (off-diagonal block
    plus the matching diagonal contribution) scaled by dt^2 / 4. Zero density
    on a solved DOF would make the integrator blow up, so the caller checks
    positivity against the constraint mask.
    """
    n, m = pts.n, pts.dimension
    alive = table.alive
    bi, bj = table.bond_i[alive], table.bond_j[alive]
    xi = pts.x[bj] - pts.x[bi]
    ref = table.ref_len[alive]
    base = mat.bond_constant * table.mu[alive] * table.nu[alive] / ref**3
    abs_xi = np.abs(xi)
    row = abs_xi * abs_xi.sum(axis=1, keepdims=True)   # |xi_p| * sum_q |xi_q|
    lam = np.zeros((n, m))
    for p in range(m):
        w_ij = 2.0 * base * pts.volume[bj] * row[:, p]
        w_ji = 2.0 * base * pts.volume[bi] * row[:, p]
        lam[:, p] += np.bincount(bi, weights=w_ij, minlength=n)
        lam[:, p] += np.bincount(bj, weights=w_ji, minlength=n)
    lam *= 0.25 * dt**2
    solved = ~pts.constrained_axes
    if np.any(lam[solved] <= 0.0):
        bad = int(np.flatnonzero((lam <= 0.0) & solved)[0]) // m
        raise SetupError(f"particle {bad} has a solved DOF with no stiffness "
                         "(isolated or fully cut)")
    return lam


def rayleigh_quotient(u, v, force, force_prev, lam, dt: float) -> float:
    """Local-stiffness Rayleigh quotient over the supplied DOF vectors."""
    u = np.asarray(u, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    df = (np.asarray(force, dtype=float) - np.asarray(force_prev, dtype=float)).ravel()
    lam = np.asarray(lam, dtype=float).ravel()
    valid = np.abs(v) >= VELOCITY_EPS
    if not valid.any():
        return 0.0
    uu = u[valid] ** 2
    denom = float(uu.sum())
    if denom == 0.0:
        return 0.0
    kappa = -df[valid] / (lam[valid] * dt * v[valid])
    return float((uu * kappa).sum() / denom)


def damping_coefficient(u, v, force, force_prev, lam, dt: float) -> float:
    """Clamped critical-damping estimate, zero for degenerate inputs."""
    if force_prev is None:
        return 0.0
    q = rayleigh_quotient(u, v, force, force_prev, lam, dt)
    c = 2.0 * np.sqrt(max(0.0, q))
    return min(c, (2.0 / dt) * (1.0 - 1e-12))


def adr_step(adr: ADRState, table: HorizonTable, pts: ParticleSet,
             mat: MaterialParams, law: DamageLaw | None = None) -> None:
    """One central-difference step; integrates solved DOFs only."""
    state = adr.state
    dt = adr.time_step
    force = assemble_internal_force(state, table, pts, mat, law) + state.b
    if not np.isfinite(force).all():
        raise FloatingPointError(f"non-finite force at relaxation step {adr.step}")
    solved = ~pts.constrained_axes
    f = force[solved]
    lam = adr.lam[solved]
    if adr.step == 0 or adr.force_prev is None:
        adr.velocity[solved] = 0.5 * dt * f / lam
    else:
        c_n = damping_coefficient(state.u[solved], adr.velocity[solved], f,
                                  adr.force_prev[solved], lam, dt)
        adr.velocity[solved] = ((2.0 - c_n * dt) * adr.velocity[solved]
                                + 2.0 * dt * f / lam) / (2.0 + c_n * dt)
    state.u[solved] += dt * adr.velocity[solved]
    adr.force_prev = force
    adr.step += 1
    if law is not None:
        update_damage_history(state, table, pts)


def whole_field_error(u_now: np.ndarray, u_prev: np.ndarray) -> float:
    """Relative change of the displacement field between consecutive steps."""
    denom = float(np.linalg.norm(u_prev))
    num = float(np.linalg.norm(u_now - u_prev))
    if denom == 0.0:
        return 0.0 if num == 0.0 else np.inf
    return num / denom


def init_adr(model: PDModel, state: SystemState,
             cfg: ADRConfig | None = None) -> ADRState:
    cfg = cfg or ADRConfig()
    lam = fictitious_density(model.table, model.particles, model.material,
                             cfg.time_step)
    return ADRState(state=state,
                    velocity=np.zeros_like(state.u),
                    lam=lam, time_step=cfg.time_step)


def run_to_convergence(model: PDModel, state: SystemState, program,
                       cfg: ADRConfig | None = None,
                       event_callback=None) -> tuple[SystemState, ADRReport]:
    """Apply the loading program, then relax until the whole-field error
    drops below tolerance.

    The error is recorded every step but only terminates the run once
    loading is complete. `event_callback(adr, step)` runs after each step
    (used by the adaptive driver to watch bond failure activity); returning
    True stops the run early with converged=True.
    """
    cfg = cfg or ADRConfig()
    report = ADRReport(loading_steps=program.loading_steps)
    adr = init_adr(model, state, cfg)
    pts, table, law = model.particles, model.table, model.law
    t0 = time.perf_counter()
    below = 0
    for step in range(1, cfg.max_steps + 1):
        u_prev = state.u.copy()
        program.apply(state.u, pts, step)
        adr_step(adr, table, pts, model.material, law)
        err = whole_field_error(state.u, u_prev)
        report.trace_steps.append(step)
        report.trace_error.append(err)
        if law is not None:
            report.trace_damaged.append(int(np.count_nonzero(
                state.s_max > law.onset_stretch)))
        report.steps = step
        report.final_error = err
        if event_callback is not None and event_callback(adr, step):
            report.converged = True
            break
        if program.complete(step):
            below = below + 1 if err < cfg.tolerance else 0
            if below >= cfg.check_window:
                report.converged = True
                break
    report.seconds = time.perf_counter() - t0
    return state, report
