"""Three-phase adaptive driver: implicit deformation, explicit damage
relaxation, final implicit equilibration.

The implicit phase marches load increments until any alive bond's stretch
crosses the degradation onset. The remaining load is then applied through
explicit relaxation steps, which continue until bond-failure activity stops
for a full arrest window. A last implicit solve at the full load polishes the
equilibrium. Loading bookkeeping guarantees that the implicit and explicit
increments add up to the total amplitude exactly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .adr import ADRConfig, run_to_convergence
from .bonds import SystemState, current_stretches, make_state
from .errors import NewtonDivergence, SetupError
from .implicit import NewtonConfig, newton_load_step
from .loading import BodyForceProgram, DisplacementProgram
from .model import PDModel


@dataclass
class LoadSchedule:
    """Loading budget for the adaptive run.

    amplitude      : total boundary displacement, m (0 for pure body force)
    implicit_steps : increments budgeted for the deformation phase
    explicit_steps : relaxation steps budgeted to apply the remaining load
    arrest_window  : quiet steps (no new degradation) ending the damage phase
    """

    amplitude: float
    implicit_steps: int
    explicit_steps: int
    arrest_window: int = 500

    def __post_init__(self):
        if self.implicit_steps < 1 or self.explicit_steps < 1:
            raise SetupError("step budgets must be >= 1")
        if self.arrest_window < 1:
            raise SetupError("arrest window must be >= 1")

    @property
    def implicit_increment(self) -> float:
        return self.amplitude / self.implicit_steps


@dataclass
class RunReport:
    """Phase, timing, and damage accounting for one solver run."""

    method: str = ""
    converged: bool = True
    diagnosis: str = ""
    # steps
    steps_deformation: int = 0      # implicit load increments executed
    steps_damage: int = 0           # explicit relaxation steps
    steps_final: int = 0            # Newton iterations of the final solve
    newton_iterations: int = 0
    cg_iterations: int = 0
    # loading arithmetic
    amplitude: float = 0.0
    increment_implicit: float = 0.0
    increment_explicit: float = 0.0
    applied_implicit: float = 0.0
    applied_total: float = 0.0
    # timing (solver only; setup measured separately by the caller)
    seconds_deformation: float = 0.0
    seconds_damage: float = 0.0
    seconds_final: float = 0.0
    setup_seconds: float = 0.0
    # damage statistics
    bonds_degraded: int = 0
    bonds_failed: int = 0
    bonds_dead: int = 0
    # convergence
    final_error: float = 0.0
    tolerance: float = 0.0
    # cross-run metrics (filled by compute_metrics)
    speedup: float | None = None
    deformation_fraction_time: float = 0.0
    deformation_fraction_steps: float = 0.0
    # traces
    trace_steps: list = field(default_factory=list)
    trace_error: list = field(default_factory=list)
    residual_norms: list = field(default_factory=list)

    @property
    def seconds_total(self) -> float:
        return self.seconds_deformation + self.seconds_damage + self.seconds_final

    @property
    def total_steps(self) -> int:
        return self.steps_deformation + self.steps_damage + self.steps_final

    def finalize_fractions(self):
        if self.seconds_total > 0:
            self.deformation_fraction_time = self.seconds_deformation / self.seconds_total
        if self.total_steps > 0:
            self.deformation_fraction_steps = self.steps_deformation / self.total_steps


def detect_switch_to_explicit(state: SystemState, model: PDModel) -> bool:
    """True once any alive bond is stretched past the degradation onset."""
    if model.law is None:
        return False
    s = current_stretches(state, model.table, model.particles)
    return bool(np.any((s > model.law.onset_stretch) & model.table.alive))


def detect_switch_to_implicit(event_trace, window: int) -> bool:
    """True when the last `window` recorded steps saw no new degradation or
    failure; False while fewer than `window` steps have been observed."""
    if len(event_trace) < window:
        return False
    return not any(event_trace[-window:])


def _damage_counts(state: SystemState, model: PDModel) -> tuple[int, int]:
    if model.law is None:
        return 0, 0
    degraded = int(np.count_nonzero(state.s_max > model.law.onset_stretch))
    failed = int(np.count_nonzero(state.s_max >= model.law.critical_stretch))
    return degraded, failed


def _transfer_state(state: SystemState, src: PDModel, dst: PDModel) -> SystemState:
    """Carry displacements onto a model rebuilt with a different horizon.

    Bond histories do not map across horizon sizes; the new history is
    seeded from the current (tensile) stretches so already-strained bonds
    start on their envelope.
    """
    if dst.particles.n != src.particles.n:
        raise SetupError("horizon-split models must share the particle set")
    new = SystemState(u=state.u.copy(), b=state.b.copy(),
                      s_max=np.zeros(dst.table.n_bonds))
    s = current_stretches(new, dst.table, dst.particles)
    new.s_max = np.clip(s, 0.0, None)
    return new


def run_adaptive(model: PDModel, schedule: LoadSchedule, *,
                 motion: np.ndarray | None = None,
                 body_force: np.ndarray | None = None,
                 newton_cfg: NewtonConfig | None = None,
                 adr_cfg: ADRConfig | None = None,
                 damage_model: PDModel | None = None
                 ) -> tuple[SystemState, RunReport]:
    """Run the three-phase adaptive scheme and return state plus report.

    Displacement loading needs `motion` (full-amplitude field); body-force
    loading needs `body_force`. `damage_model` optionally swaps in a model
    built with a larger horizon for the damage and final phases.
    """
    newton_cfg = newton_cfg or NewtonConfig()
    adr_cfg = adr_cfg or ADRConfig()
    damage_model = damage_model or model
    displacement_driven = motion is not None and schedule.amplitude > 0.0

    report = RunReport(method="adaptive", amplitude=schedule.amplitude,
                       increment_implicit=schedule.implicit_increment
                       if displacement_driven else 0.0,
                       tolerance=newton_cfg.tolerance)
    state = make_state(model)
    if body_force is not None:
        state.b[:] = body_force

    pts = model.particles
    du_i = schedule.implicit_increment if displacement_driven else 0.0
    triggered = False
    applied = 0.0

    t0 = time.perf_counter()
    n_steps = schedule.implicit_steps if displacement_driven else 1
    for k in range(1, n_steps + 1):
        if displacement_driven:
            target = schedule.amplitude if k == n_steps else k * du_i
            state.u[pts.constrained_axes] = \
                (target / schedule.amplitude) * motion[pts.constrained_axes]
        else:
            target = 0.0
        try:
            nr = newton_load_step(state, model, newton_cfg)
        except NewtonDivergence as exc:
            nr = _retry_with_halving(state, model, newton_cfg, applied, target,
                                     motion, schedule.amplitude, exc)
        report.newton_iterations += nr.iterations
        report.cg_iterations += nr.cg_iterations
        report.residual_norms.extend(nr.residual_norms)
        report.steps_deformation = k
        applied = target
        if detect_switch_to_explicit(state, model):
            triggered = True
            break
    report.applied_implicit = applied
    report.seconds_deformation = time.perf_counter() - t0

    if triggered:
        # ---- explicit damage phase on the (possibly re-horizoned) model
        if damage_model is not model:
            state = _transfer_state(state, model, damage_model)
        dpts = damage_model.particles
        if displacement_driven:
            du_e = (schedule.amplitude - applied) / schedule.explicit_steps
            program = DisplacementProgram(motion=motion,
                                          amplitude=schedule.amplitude,
                                          rate=du_e, start=applied)
        else:
            du_e = 0.0
            program = BodyForceProgram()
        report.increment_explicit = du_e

        degraded, failed = _damage_counts(state, damage_model)
        watcher = _ArrestWatcher(damage_model, schedule.arrest_window,
                                 program, degraded, failed)
        t1 = time.perf_counter()
        state, adr_report = run_to_convergence(damage_model, state, program,
                                               adr_cfg,
                                               event_callback=watcher)
        report.seconds_damage = time.perf_counter() - t1
        report.steps_damage = adr_report.steps
        report.trace_steps = adr_report.trace_steps
        report.trace_error = adr_report.trace_error
        report.final_error = adr_report.final_error
        if not adr_report.converged:
            report.converged = False
            report.diagnosis = (f"damage phase hit the {adr_cfg.max_steps}-step "
                                f"budget (field error {adr_report.final_error:.3e})")
        if displacement_driven:
            # land the boundary exactly on the total amplitude
            state.u[dpts.constrained_axes] = motion[dpts.constrained_axes]
        report.applied_total = applied + schedule.explicit_steps * du_e \
            if displacement_driven else 0.0

        # ---- final implicit equilibration at fixed load
        t2 = time.perf_counter()
        try:
            nr = newton_load_step(state, damage_model, newton_cfg)
            report.steps_final = nr.iterations
            report.newton_iterations += nr.iterations
            report.cg_iterations += nr.cg_iterations
        except NewtonDivergence as exc:
            report.converged = False
            report.diagnosis = f"final implicit phase diverged: {exc}"
        report.seconds_final = time.perf_counter() - t2
    else:
        report.applied_total = applied

    degraded, failed = _damage_counts(state, damage_model)
    report.bonds_degraded = degraded
    report.bonds_failed = failed
    report.bonds_dead = int(np.count_nonzero(~damage_model.table.alive))
    report.finalize_fractions()
    return state, report


class _ArrestWatcher:
    """Stops the damage phase after a quiet arrest window.

    Quiet means no bond newly crossed the degradation onset or the critical
    stretch. The window only counts steps taken after loading completed.
    """

    def __init__(self, model: PDModel, window: int, program, degraded: int,
                 failed: int):
        self.model = model
        self.window = window
        self.program = program
        self.degraded = degraded
        self.failed = failed
        self.last_event = 0
        self.complete_step = None

    def __call__(self, adr, step: int) -> bool:
        degraded, failed = _damage_counts(adr.state, self.model)
        if degraded > self.degraded or failed > self.failed:
            self.last_event = step
        self.degraded, self.failed = degraded, failed
        if not self.program.complete(step):
            return False
        if self.complete_step is None:
            self.complete_step = step
        quiet_since = max(self.last_event, self.complete_step)
        return step - quiet_since >= self.window


def _retry_with_halving(state, model, cfg, start, target, motion, amplitude,
                        exc, max_halvings: int = 4):
    """Re-approach a failed implicit increment through halved sub-steps."""
    if motion is None or amplitude <= 0:
        raise exc
    pts = model.particles
    pending = [target]
    current = start
    halvings = 0
    last = None
    while pending:
        nxt = pending[-1]
        try:
            state.u[pts.constrained_axes] = (nxt / amplitude) * motion[pts.constrained_axes]
            last = newton_load_step(state, model, cfg)
            current = nxt
            pending.pop()
        except NewtonDivergence as exc2:
            halvings += 1
            if halvings > max_halvings:
                raise NewtonDivergence(
                    f"increment still diverging after {max_halvings} halvings "
                    f"(stuck between {current:.6e} and {nxt:.6e} m)",
                    exc2.report) from exc2
            pending.append(0.5 * (current + nxt))
    return last


def compute_metrics(adaptive: RunReport,
                    reference: RunReport | None = None) -> tuple[float | None, float]:
    """Speedup versus a reference explicit run, and the deformation share.

    Returns (speedup, deformation_fraction_time); speedup is None without a
    reference. Both values are also written back onto the adaptive report.
    """
    adaptive.finalize_fractions()
    speedup = None
    if reference is not None and adaptive.seconds_total > 0:
        speedup = reference.seconds_total / adaptive.seconds_total
        adaptive.speedup = speedup
    return speedup, adaptive.deformation_fraction_time
