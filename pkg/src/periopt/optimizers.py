"""Classical geometry optimizers and the shared relaxation loop.

A run succeeds when the largest per-atom force norm drops to the threshold
within the step budget; the unit cell is never modified. A "step" is one
outer iteration that commits a displacement; line-search trial evaluations
count toward energy calls but not steps.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .crystal import Structure
from .potential import Calculator

__all__ = [
    "TerminationPolicy",
    "RelaxationReport",
    "METHODS",
    "relax",
    "max_force_norm",
]

MAX_ATOM_STEP = 0.2  # A, per-atom displacement cap per committed step
BFGS_CURVATURE_INIT = 70.0  # eV/A^2, initial Hessian approximation scale
WOLFE_C1 = 1e-4
WOLFE_C2 = 0.9
WOLFE_MAX_TRIALS = 10
FIRE_PHASE_STEPS = 250  # FIRE budget inside the FIRE+BFGSLS hybrid

METHODS = ("BFGS", "BFGSLS", "FIRE", "MDMIN", "CG", "FIRE_BFGSLS", "MACS")


@dataclass
class TerminationPolicy:
    fmax: float = 0.05  # eV/A
    max_steps: int = 1000

    def __post_init__(self):
        if self.fmax <= 0:
            raise ValueError("fmax must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass
class RelaxationReport:
    success: bool
    steps: int
    energy_calls: int
    wall_time: float
    energy_trace: list
    final_structure: Structure
    final_fmax: float
    method: str = ""
    failure_reason: str | None = None

    def to_dict(self) -> dict:
        return {
            "success": self.success,
            "steps": self.steps,
            "energy_calls": self.energy_calls,
            "wall_time": self.wall_time,
            "energy_trace": list(self.energy_trace),
            "final_fmax": self.final_fmax,
            "method": self.method,
            "failure_reason": self.failure_reason,
        }


def max_force_norm(forces: np.ndarray) -> float:
    return float(np.linalg.norm(forces, axis=1).max())


class _AbortRun(RuntimeError):
    pass


def _cap_displacement(dr: np.ndarray, limit: float = MAX_ATOM_STEP) -> np.ndarray:
    longest = np.linalg.norm(dr, axis=1).max()
    if longest > limit:
        dr = dr * (limit / longest)
    return dr


class _Evaluator:
    """Binds a calculator to a structure template; evaluates trial positions."""

    def __init__(self, calc: Calculator, template: Structure):
        self.calc = calc
        self.template = template

    def __call__(self, positions: np.ndarray):
        res = self.calc.evaluate(self.template.with_positions(positions))
        if not np.all(np.isfinite(res.forces)) or not np.isfinite(res.energy):
            raise _AbortRun("non-finite forces")
        return res.energy, res.forces


def _wolfe_line_search(ev, pos, direction, e0, g0, max_trials=WOLFE_MAX_TRIALS):
    """Strong-Wolfe search along `direction` with alpha in (0, 1].

    Returns (new_pos, energy, forces). Every trial costs one energy call.
    Falls back to the lowest-energy trial if the conditions are not met
    within the trial budget.
    """
    p = direction.ravel()
    dphi0 = float(g0 @ p)
    if dphi0 >= 0:
        raise _AbortRun("line search started with non-descent direction")
    best = None  # (phi, alpha, e, f)

    def evaluate(alpha):
        nonlocal best
        e, f = ev(pos + alpha * direction)
        dphi = float(-f.ravel() @ p)
        if best is None or e < best[0]:
            best = (e, alpha, f)
        return e, f, dphi

    trials = 0

    def try_alpha(alpha):
        nonlocal trials
        trials += 1
        return evaluate(alpha)

    # bracketing stage, alpha capped at 1 (direction already step-capped)
    lo = hi = None
    phi_lo = e0
    a_prev, phi_prev, dphi_prev = 0.0, e0, dphi0
    alpha = 1.0
    result = None
    while trials < max_trials:
        phi, f, dphi = try_alpha(alpha)
        if phi > e0 + WOLFE_C1 * alpha * dphi0 or (a_prev > 0 and phi >= phi_prev):
            lo, phi_lo, hi = a_prev, phi_prev, alpha
            break
        if abs(dphi) <= -WOLFE_C2 * dphi0:
            result = (alpha, phi, f)
            break
        if dphi >= 0:
            lo, phi_lo, hi = alpha, phi, a_prev
            break
        if alpha >= 1.0:
            break  # at the step cap and still descending: commit the cap
        a_prev, phi_prev, dphi_prev = alpha, phi, dphi
        alpha = min(2.0 * alpha, 1.0)

    if result is None and lo is not None:
        # zoom stage: bisect the bracket with the remaining trial budget
        while trials < max_trials:
            alpha = 0.5 * (lo + hi)
            phi, f, dphi = try_alpha(alpha)
            if phi > e0 + WOLFE_C1 * alpha * dphi0 or phi >= phi_lo:
                hi = alpha
            else:
                if abs(dphi) <= -WOLFE_C2 * dphi0:
                    result = (alpha, phi, f)
                    break
                if dphi * (hi - lo) >= 0:
                    hi = lo
                lo, phi_lo = alpha, phi

    if result is not None:
        alpha, phi, f = result
        return pos + alpha * direction, phi, f
    e_best, a_best, f_best = best
    return pos + a_best * direction, e_best, f_best


class _BfgsStepper:
    """Quasi-Newton with a fixed trust step: dr from the eigendecomposition of
    the Hessian approximation, per-atom displacement capped."""

    def __init__(self, n_atoms):
        self.h = np.eye(3 * n_atoms) * BFGS_CURVATURE_INIT
        self.prev_pos = None
        self.prev_g = None

    def _update(self, pos, g):
        if self.prev_pos is None:
            return
        s = (pos - self.prev_pos).ravel()
        if np.abs(s).max() < 1e-7:
            return
        y = g - self.prev_g
        sy = float(s @ y)
        hs = self.h @ s
        shs = float(s @ hs)
        if abs(sy) > 1e-12 and abs(shs) > 1e-12:
            self.h += np.outer(y, y) / sy - np.outer(hs, hs) / shs

    def step(self, ev, pos, e, f):
        g = -f.ravel()
        self._update(pos, g)
        omega, vecs = np.linalg.eigh(self.h)
        dr = (vecs @ ((vecs.T @ f.ravel()) / np.abs(omega))).reshape(-1, 3)
        dr = _cap_displacement(dr)
        self.prev_pos = pos.copy()
        self.prev_g = g
        new_pos = pos + dr
        e2, f2 = ev(new_pos)
        return new_pos, e2, f2


class _BfgsLineSearchStepper:
    """BFGS on the inverse Hessian with a strong-Wolfe line search."""

    def __init__(self, n_atoms):
        self.hinv = np.eye(3 * n_atoms) / BFGS_CURVATURE_INIT
        self.prev_pos = None
        self.prev_g = None

    def _update(self, pos, g):
        if self.prev_pos is None:
            return
        s = (pos - self.prev_pos).ravel()
        y = g - self.prev_g
        sy = float(s @ y)
        if sy <= 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            return
        rho = 1.0 / sy
        eye = np.eye(len(s))
        v = eye - rho * np.outer(s, y)
        self.hinv = v @ self.hinv @ v.T + rho * np.outer(s, s)

    def step(self, ev, pos, e, f):
        g = -f.ravel()
        self._update(pos, g)
        direction = (-(self.hinv @ g)).reshape(-1, 3)
        if float(g @ direction.ravel()) >= 0:
            self.hinv = np.eye(len(g)) / BFGS_CURVATURE_INIT
            direction = f.copy() / BFGS_CURVATURE_INIT
        direction = _cap_displacement(direction)
        self.prev_pos = pos.copy()
        self.prev_g = g
        return _wolfe_line_search(ev, pos, direction, e, g)


class _FireStepper:
    # standard FIRE constants; dt in sqrt(amu A^2 / eV)-equivalent units
    def __init__(self, n_atoms, dt=0.1, dt_max=1.0, n_min=5,
                 f_inc=1.1, f_dec=0.5, alpha_start=0.1, f_alpha=0.99):
        self.v = np.zeros((n_atoms, 3))
        self.dt, self.dt_max = dt, dt_max
        self.n_min, self.f_inc, self.f_dec = n_min, f_inc, f_dec
        self.alpha = self.alpha_start = alpha_start
        self.f_alpha = f_alpha
        self.n_uphill_free = 0

    def step(self, ev, pos, e, f):
        power = float(np.vdot(f, self.v))
        if power > 0:
            fnorm = np.linalg.norm(f)
            vnorm = np.linalg.norm(self.v)
            self.v = (1.0 - self.alpha) * self.v + self.alpha * (f / fnorm) * vnorm
            if self.n_uphill_free > self.n_min:
                self.dt = min(self.dt * self.f_inc, self.dt_max)
                self.alpha *= self.f_alpha
            self.n_uphill_free += 1
        else:
            self.v[:] = 0.0
            self.alpha = self.alpha_start
            self.dt *= self.f_dec
            self.n_uphill_free = 0
        self.v = self.v + self.dt * f
        dr = _cap_displacement(self.dt * self.v)
        new_pos = pos + dr
        e2, f2 = ev(new_pos)
        return new_pos, e2, f2


class _MdMinStepper:
    # velocity-Verlet flavor with unit masses; velocity projected onto forces
    def __init__(self, n_atoms, dt=0.2):
        self.v = np.zeros((n_atoms, 3))
        self.dt = dt

    def step(self, ev, pos, e, f):
        self.v = self.v + self.dt * f
        vf = float(np.vdot(self.v, f))
        if vf <= 0:
            self.v[:] = 0.0
        else:
            self.v = f * (vf / float(np.vdot(f, f)))
        dr = _cap_displacement(self.dt * self.v)
        new_pos = pos + dr
        e2, f2 = ev(new_pos)
        return new_pos, e2, f2


class _CgStepper:
    """Polak-Ribiere conjugate gradient with a strong-Wolfe line search.

    Restarts every 3N iterations or whenever the direction stops descending.
    """

    def __init__(self, n_atoms):
        self.restart_every = 3 * n_atoms
        self.iters_since_restart = 0
        self.d = None
        self.prev_g = None

    def step(self, ev, pos, e, f):
        g = -f.ravel()
        if self.d is None or self.iters_since_restart >= self.restart_every:
            d = -g
            self.iters_since_restart = 0
        else:
            beta = max(0.0, float(g @ (g - self.prev_g)) / float(self.prev_g @ self.prev_g))
            d = -g + beta * self.d
            if float(g @ d) >= 0:
                d = -g
                self.iters_since_restart = 0
        self.d = d
        self.prev_g = g
        self.iters_since_restart += 1
        direction = _cap_displacement(d.reshape(-1, 3).copy())
        return _wolfe_line_search(ev, pos, direction, e, g)


def _make_stepper(method: str, n_atoms: int):
    method = method.upper()
    if method == "BFGS":
        return _BfgsStepper(n_atoms)
    if method == "BFGSLS":
        return _BfgsLineSearchStepper(n_atoms)
    if method == "FIRE":
        return _FireStepper(n_atoms)
    if method == "MDMIN":
        return _MdMinStepper(n_atoms)
    if method == "CG":
        return _CgStepper(n_atoms)
    raise ValueError(f"unknown method {method!r}")


def relax(s: Structure, method: str, calc: Calculator, tp: TerminationPolicy | None = None,
          rng=None, policy=None, env_cfg=None) -> RelaxationReport:
    """Relax a structure with the chosen method until success or the step cap.

    `rng` and `policy`/`env_cfg` only matter for the MACS method; all
    classical methods are deterministic.
    """
    tp = tp or TerminationPolicy()
    method = method.upper().replace("+", "_")
    if method == "MACS":
        from .env import relax_with_policy  # late import, env builds on this module

        if policy is None:
            raise ValueError("MACS relaxation requires a trained policy")
        return relax_with_policy(s, calc, policy, tp=tp, cfg=env_cfg)
    if method == "FIRE_BFGSLS":
        return _relax_hybrid(s, calc, tp)
    return _relax_classical(s, method, calc, tp)


def _finish(success, steps, calls, t0, trace, template, pos, fmax_val, method, reason=None):
    return RelaxationReport(
        success=success,
        steps=steps,
        energy_calls=calls,
        wall_time=time.perf_counter() - t0,
        energy_trace=trace,
        final_structure=template.with_positions(pos),
        final_fmax=fmax_val,
        method=method,
        failure_reason=reason,
    )


def _relax_classical(s, method, calc, tp, steppers=None):
    """Core loop. `steppers` is a list of (stepper, step_budget) phases; a
    single phase covering tp.max_steps when not given."""
    n = len(s)
    ev = _Evaluator(calc, s)
    calls0 = calc.stats.total_calls
    t0 = time.perf_counter()
    pos = s.positions.copy()
    trace = []
    steps = 0
    if steppers is None:
        steppers = [(_make_stepper(method, n), tp.max_steps)]
    try:
        e, f = ev(pos)
    except Exception as exc:
        return _finish(False, 0, calc.stats.total_calls - calls0, t0, trace,
                       s, pos, float("inf"), method, f"calculator error: {exc}")
    trace.append(e)
    fmax_val = max_force_norm(f)
    try:
        for stepper, budget in steppers:
            phase_steps = 0
            while fmax_val > tp.fmax and phase_steps < budget and steps < tp.max_steps:
                pos, e, f = stepper.step(ev, pos, e, f)
                steps += 1
                phase_steps += 1
                trace.append(e)
                fmax_val = max_force_norm(f)
            if fmax_val <= tp.fmax:
                break
    except _AbortRun as exc:
        return _finish(False, steps, calc.stats.total_calls - calls0, t0, trace,
                       s, pos, fmax_val, method, str(exc))
    except Exception as exc:
        return _finish(False, steps, calc.stats.total_calls - calls0, t0, trace,
                       s, pos, fmax_val, method, f"calculator error: {exc}")
    success = fmax_val <= tp.fmax
    return _finish(success, steps, calc.stats.total_calls - calls0, t0, trace,
                   s, pos, fmax_val, method,
                   None if success else "step budget exhausted")


def _relax_hybrid(s, calc, tp):
    """Up to 250 FIRE steps, then BFGSLS with the remaining budget."""
    n = len(s)
    fire_budget = min(FIRE_PHASE_STEPS, tp.max_steps)
    phases = [
        (_FireStepper(n), fire_budget),
        (_BfgsLineSearchStepper(n), tp.max_steps - fire_budget),
    ]
    report = _relax_classical(s, "FIRE_BFGSLS", calc, tp, steppers=phases)
    return report
