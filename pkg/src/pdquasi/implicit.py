"""Implicit quasi-static solver: residual, analytical sparse tangent,
constraint elimination, conjugate gradients, and the Newton-Raphson loop.

Sign convention: the assembled tangent is the exact derivative of the
internal-force field with respect to displacement. After constraint
elimination that matrix is negative definite (internal force opposes
displacement), so the linear solves run on the negated reduced system,
which is the symmetric positive definite input CG requires.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .bonds import (SystemState, assemble_internal_force, bond_geometry,
                    effective_stretch, update_damage_history)
from .errors import IndefiniteSystemError, NewtonDivergence, SetupError
from .materials import DamageLaw, MaterialParams, degradation, degradation_slope
from .model import HorizonTable, ParticleSet, PDModel

DENOMINATOR_FLOOR = 1e-30


@dataclass
class SparseTangent:
    """Derivative of the internal force field, on all DOFs, CSR layout.

    Row/column indexing is particle-major: dof = particle * dimension + axis.
    """

    matrix: sp.csr_matrix
    dimension: int
    n_particles: int

    def dof_index(self, particle: int, axis: int) -> int:
        return particle * self.dimension + axis

    @property
    def ndof(self) -> int:
        return self.n_particles * self.dimension


@dataclass
class ReducedSystem:
    """Constraint-eliminated linear system over the solved DOFs."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    solved_idx: np.ndarray
    constrained: np.ndarray


@dataclass
class NewtonConfig:
    tolerance: float = 1e-10          # relative residual tolerance
    max_iterations: int = 50
    cg_tolerance: float = 1e-12
    cg_max_iterations: int = 0        # 0 = scale with system size
    denominator: str = "auto"         # auto | body_force | reaction
    divergence_patience: int = 3


@dataclass
class NewtonReport:
    iterations: int = 0
    cg_iterations: int = 0
    residual_norms: list = field(default_factory=list)
    residual: float = np.inf
    denominator: float = 0.0
    converged: bool = False


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual: float
    converged: bool


def residual(state: SystemState, table: HorizonTable, pts: ParticleSet,
             mat: MaterialParams, law: DamageLaw | None = None,
             constrained: np.ndarray | None = None) -> np.ndarray:
    """Negated out-of-balance force on the solved DOFs (the NR right side).

    `constrained` is the flat per-DOF constraint mask; None means all DOFs
    are solved. Prescribed displacements must already be applied to state.u.
    """
    force = assemble_internal_force(state, table, pts, mat, law)
    rhs = -(force + state.b).ravel()
    if constrained is None:
        return rhs
    return rhs[~constrained.ravel()]


def assemble_jacobian(state: SystemState, table: HorizonTable,
                      pts: ParticleSet, mat: MaterialParams,
                      law: DamageLaw | None = None) -> SparseTangent:
    """Analytical derivative of the internal force w.r.t. displacement.

    Each alive bond contributes a symmetric block pattern: paired
    off-diagonal blocks and their negations accumulated on the two diagonal
    blocks, so every row sums to zero before constraints are applied. With a
    damage law the block picks up the degradation factor and, for bonds
    loading along their historical envelope inside the degradation band, the
    chain-rule term from the degradation slope.
    """
    n, m = pts.n, pts.dimension
    r, rlen, s = bond_geometry(pts.x, state.u, table)
    alive = table.alive
    bi = table.bond_i[alive]
    bj = table.bond_j[alive]
    r = r[alive]
    rlen = rlen[alive]
    s = s[alive]
    ref = table.ref_len[alive]

    if law is None:
        degr = np.ones(bi.shape[0])
        slope = np.zeros(bi.shape[0])
    else:
        s_hat = effective_stretch(s, state.s_max[alive], law)
        degr = degradation(s_hat, law)
        slope = degradation_slope(s_hat, law)
        if law.irreversible:
            # unloading bonds sit below their envelope: degradation frozen
            slope = np.where(s >= state.s_max[alive], slope, 0.0)

    c = mat.bond_constant
    base = c * table.mu[alive] * table.nu[alive]
    inv_ref = 1.0 / ref
    inv_cur = 1.0 / rlen
    a_scal = inv_ref - inv_cur
    coef = degr * inv_cur**3 + slope * (inv_ref * inv_cur) * a_scal

    eye = np.eye(m)
    blk = (degr * a_scal)[:, None, None] * eye \
        + coef[:, None, None] * (r[:, :, None] * r[:, None, :])

    p_idx, q_idx = [ix.ravel() for ix in np.indices((m, m))]
    vals_ij = (base * pts.volume[bj])[:, None, None] * blk
    vals_ji = (base * pts.volume[bi])[:, None, None] * blk

    def entries(row_part, col_part, vals):
        rows = (row_part[:, None] * m + p_idx[None, :]).ravel()
        cols = (col_part[:, None] * m + q_idx[None, :]).ravel()
        return rows, cols, vals.reshape(-1)

    r1 = entries(bi, bj, vals_ij)
    r2 = entries(bj, bi, vals_ji)
    r3 = entries(bi, bi, -vals_ij)
    r4 = entries(bj, bj, -vals_ji)
    rows = np.concatenate([r1[0], r2[0], r3[0], r4[0]])
    cols = np.concatenate([r1[1], r2[1], r3[1], r4[1]])
    vals = np.concatenate([r1[2], r2[2], r3[2], r4[2]])
    matrix = sp.coo_matrix((vals, (rows, cols)), shape=(n * m, n * m)).tocsr()
    return SparseTangent(matrix=matrix, dimension=m, n_particles=n)


def apply_dirichlet(tangent: SparseTangent, rhs: np.ndarray,
                    constrained: np.ndarray,
                    values: np.ndarray | None = None) -> ReducedSystem:
    """Remove constrained rows and columns from the system.

    `constrained` is a flat bool mask over all DOFs. `values` (optional)
    gives prescribed increments of the constrained DOFs whose couplings are
    moved to the right-hand side; omit it when the prescriptions are already
    baked into the state the residual was evaluated at.
    """
    constrained = np.asarray(constrained, dtype=bool).ravel()
    if constrained.shape[0] != tangent.ndof:
        raise SetupError("constraint mask size does not match the DOF count")
    if constrained.all():
        raise SetupError("every DOF is constrained: nothing to solve")
    solved_idx = np.flatnonzero(~constrained)
    reduced = tangent.matrix[solved_idx][:, solved_idx].tocsr()
    rhs_red = np.asarray(rhs, dtype=float).ravel()[solved_idx].copy()
    if values is not None:
        fixed_idx = np.flatnonzero(constrained)
        vals = np.asarray(values, dtype=float).ravel()
        if vals.shape[0] == tangent.ndof:
            vals = vals[fixed_idx]
        if np.any(vals):
            rhs_red -= tangent.matrix[solved_idx][:, fixed_idx] @ vals
    return ReducedSystem(matrix=reduced, rhs=rhs_red,
                         solved_idx=solved_idx, constrained=constrained)


def cg_solve(matrix, rhs: np.ndarray, tol: float = 1e-12,
             max_iter: int = 0, x0: np.ndarray | None = None) -> CGResult:
    """Plain conjugate gradients for a symmetric positive definite system.

    Stops when the true-residual recurrence norm drops below tol * |rhs|.
    A non-positive curvature direction raises IndefiniteSystemError, which
    doubles as the numerical definiteness probe for reduced tangents.
    """
    rhs = np.asarray(rhs, dtype=float).ravel()
    nrm_b = float(np.linalg.norm(rhs))
    if nrm_b == 0.0:
        return CGResult(np.zeros_like(rhs), 0, 0.0, True)
    if max_iter <= 0:
        max_iter = max(1000, 10 * rhs.shape[0])
    x = np.zeros_like(rhs) if x0 is None else np.array(x0, dtype=float)
    r = rhs - matrix @ x
    threshold = tol * nrm_b
    rs = float(r @ r)
    if np.sqrt(rs) <= threshold:
        return CGResult(x, 0, float(np.sqrt(rs)), True)
    p = r.copy()
    for k in range(1, max_iter + 1):
        ap = matrix @ p
        pap = float(p @ ap)
        if pap <= 0.0:
            raise IndefiniteSystemError(
                f"non-positive curvature (p'Ap = {pap:.3e}) at CG iteration {k}: "
                "matrix is not positive definite")
        alpha = rs / pap
        x += alpha * p
        r -= alpha * ap
        rs_new = float(r @ r)
        if np.sqrt(rs_new) <= threshold:
            return CGResult(x, k, float(np.sqrt(rs_new)), True)
        p = r + (rs_new / rs) * p
        rs = rs_new
    return CGResult(x, max_iter, float(np.sqrt(rs)), False)


def definiteness_probe(matrix, seed: int = 0, tol: float = 1e-8) -> bool:
    """Check positive definiteness numerically: CG on a random right side."""
    rng = np.random.default_rng(seed)
    rhs = rng.standard_normal(matrix.shape[0])
    try:
        return cg_solve(matrix, rhs, tol=tol).converged
    except IndefiniteSystemError:
        return False


def _residual_parts(state, model: PDModel):
    force = assemble_internal_force(state, model.table, model.particles,
                                    model.material, model.law)
    out_of_balance = force + state.b
    return force, out_of_balance


def _denominator(state, model: PDModel, out_of_balance, cfg: NewtonConfig) -> float:
    constrained = model.constrained_flat
    body = float(np.linalg.norm(state.b))
    if cfg.denominator == "body_force":
        return body
    reaction = float(np.linalg.norm(out_of_balance.ravel()[constrained]))
    if cfg.denominator == "reaction":
        return reaction
    return body if body > 0.0 else reaction


def newton_load_step(state: SystemState, model: PDModel,
                     cfg: NewtonConfig | None = None) -> NewtonReport:
    """Newton-Raphson to equilibrium at the currently applied load.

    Mutates state.u on the solved DOFs; prescribed displacements must already
    be written into state.u. On success the damage history is folded once.
    Raises NewtonDivergence on sustained residual growth or iteration
    exhaustion, leaving state.u at the last iterate.
    """
    cfg = cfg or NewtonConfig()
    constrained = model.constrained_flat
    report = NewtonReport()
    growth = 0
    prev_norm = np.inf
    for _ in range(cfg.max_iterations + 1):
        _, out_of_balance = _residual_parts(state, model)
        rhs_full = -out_of_balance.ravel()
        resid = float(np.linalg.norm(rhs_full[~constrained]))
        denom = _denominator(state, model, out_of_balance, cfg)
        report.residual_norms.append(resid)
        report.residual = resid
        report.denominator = denom
        if not np.isfinite(resid):
            raise NewtonDivergence("non-finite residual", report)
        if resid <= cfg.tolerance * max(denom, DENOMINATOR_FLOOR):
            report.converged = True
            update_damage_history(state, model.table, model.particles)
            return report
        if resid > prev_norm:
            growth += 1
            if growth >= cfg.divergence_patience:
                raise NewtonDivergence(
                    f"residual grew {growth} consecutive iterations", report)
        else:
            growth = 0
        prev_norm = resid
        if report.iterations >= cfg.max_iterations:
            raise NewtonDivergence(
                f"no convergence in {cfg.max_iterations} iterations "
                f"(residual {resid:.3e}, denominator {denom:.3e})", report)

        tangent = assemble_jacobian(state, model.table, model.particles,
                                    model.material, model.law)
        system = apply_dirichlet(tangent, rhs_full, constrained)
        # negate: the reduced force derivative is negative definite
        sol = cg_solve(-system.matrix, -system.rhs, tol=cfg.cg_tolerance,
                       max_iter=cfg.cg_max_iterations)
        report.cg_iterations += sol.iterations
        flat = state.u.ravel()
        flat[system.solved_idx] += sol.x
        state.u = flat.reshape(state.u.shape)
        report.iterations += 1
    raise NewtonDivergence("iteration budget exhausted", report)
