"""Fully discrete schemes: energy-conserving leapfrog with a discrete gradient,
its explicit-nonlinearity counterpart, the special first step and energy diagnostics.

All level equations are multiplied by two so that the averaged operator
``A phi^n = (phi^{n+1} + phi^{n-1}) / 2`` produces whole operators: at every
level the element rows read

    alpha M U + Lop(new) + 2 (N(U), w) = alpha M (2 U^n - U^{n-1}) - Lop(prev) + (g^{n+1} + g^{n-1}, w)

with ``alpha = 2 / dt^2`` and ``Lop(state) = D q + S u - E lam``.  The
conservative scheme uses ``N = discrete gradient(U, U^{n-1})`` and is solved by
Newton's method on the condensed trace system; the nonconservative scheme
moves ``2 (f(U^n), w)`` to the right-hand side and reuses one factorisation.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .cases import ManufacturedCase
from .hdg import (
    CondensedSystem,
    Discretization,
    HDGState,
    hdg_project,
    l2_project_element,
    lift_flux,
    monolithic_matrix,
    solve_elliptic_init,
)
from .nonlinear import (
    NewtonConfig,
    NewtonError,
    discrete_gradient,
    discrete_gradient_partials,
    f,
    newton_solve,
    potential,
)

log = logging.getLogger(__name__)

__all__ = [
    "SCHEMES",
    "TimeConfig",
    "StepRecord",
    "RunResult",
    "StepFailure",
    "LevelProblem",
    "Integrator",
    "discrete_energy",
    "semidiscrete_energy",
    "write_step_records",
]

SCHEMES = ("conservative", "nonconservative")


class StepFailure(RuntimeError):
    """A time level could not be solved; ``step`` is the index of the level being computed."""

    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


@dataclass(frozen=True)
class TimeConfig:
    """Time step, final time and scheme.

    If ``T / dt`` is not an integer the step is shrunk to ``T / ceil(T / dt)``
    and a warning is issued, so ``n_steps * dt == T`` always holds.
    """

    dt: float
    T: float
    scheme: str = "conservative"
    newton: NewtonConfig = field(default_factory=NewtonConfig)

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"time step must be positive, got {self.dt}")
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValueError(f"final time must be positive, got {self.T}")
        if self.dt > self.T * (1 + 1e-12):
            raise ValueError(f"time step {self.dt} exceeds final time {self.T}")
        ratio = self.T / self.dt
        n = round(ratio)
        if abs(ratio - n) > 1e-9 * max(1.0, ratio):
            n = math.ceil(ratio)
            warnings.warn(f"dt={self.dt:g} does not divide T={self.T:g}; using dt={self.T / n:g} ({n} steps)")
        object.__setattr__(self, "dt", self.T / n)

    @property
    def n_steps(self) -> int:
        return round(self.T / self.dt)

    @classmethod
    def from_rule(cls, h: float, k: int, T: float = 1.0, scheme: str = "conservative", newton=None):
        """``dt = h^((k+1)/2)`` snapped to divide ``T``."""
        newton = newton or NewtonConfig()
        dt = min(h ** ((k + 1) / 2.0), T)
        n = math.ceil(T / dt - 1e-9)
        return cls(T / n, T, scheme, newton)


@dataclass
class StepRecord:
    """Diagnostics for time level ``n``; ``energy`` belongs to the pair ``(n-1, n)``."""

    n: int
    t: float
    newton_iterations: int
    residual: float
    energy: float


@dataclass
class RunResult:
    state: HDGState
    previous: HDGState
    dt: float
    records: list[StepRecord]
    initial_energy: float
    velocity: np.ndarray
    states: list[HDGState] | None = None

    @property
    def energies(self) -> np.ndarray:
        """``E^{n-1/2}`` for ``n = 1..N``."""
        return np.array([r.energy for r in self.records])


def write_step_records(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "t", "newton_iterations", "residual", "energy"])
        for r in records:
            w.writerow([r.n, repr(r.t), r.newton_iterations, f"{r.residual:.6e}", repr(r.energy)])


def _potential_integral(disc: Discretization, u: np.ndarray) -> float:
    return float(np.sum(disc.wdet * potential(disc.u_at_quad(u))))


def discrete_energy(disc: Discretization, a: HDGState, b: HDGState, dt: float) -> float:
    """Discrete energy of two consecutive levels ``a = n`` and ``b = n+1``."""
    du = (b.u - a.u) / dt
    return disc.l2_norm2_u(du) + 0.5 * (
        disc.l2_norm2_q(a.q)
        + disc.l2_norm2_q(b.q)
        + disc.jump_norm2(a.u, a.trace)
        + disc.jump_norm2(b.u, b.trace)
        + 2.0 * _potential_integral(disc, a.u)
        + 2.0 * _potential_integral(disc, b.u)
    )


def semidiscrete_energy(disc: Discretization, state: HDGState, velocity: np.ndarray) -> float:
    """``||v||^2 + ||q||^2 + |u - lam|^2 + 2 (F(u), 1)`` for one level and a velocity."""
    return (
        disc.l2_norm2_u(velocity)
        + disc.l2_norm2_q(state.q)
        + disc.jump_norm2(state.u, state.trace)
        + 2.0 * _potential_integral(disc, state.u)
    )


class LevelJacobian:
    """Newton matrix of one time level, kept in element-block form."""

    def __init__(self, disc: Discretization, K: np.ndarray):
        self.disc = disc
        self.K = K

    def matrix(self):
        """Assembled sparse matrix over ``(element dofs, trace dofs)``."""
        return monolithic_matrix(self.disc, self.K)

    def solve(self, r: np.ndarray) -> np.ndarray:
        disc = self.disc
        ne = disc.n_el * disc.nloc
        F = r[:ne].reshape(disc.n_el, disc.nloc)
        tr = r[ne:].reshape(disc.n_faces, disc.nl)
        x, lam = CondensedSystem(disc, self.K).solve(F, b=tr, fixed=tr)
        return np.concatenate([x.ravel(), lam.ravel()])


class LevelProblem:
    """Nonlinear algebraic system of one conservative time level.

    Unknown is the packed vector ``(element dofs, trace dofs)``.  Element rows
    are ``K_lin x - L lam + [0; 2 (DG(u, partner), w)] - F``, interior trace
    rows the transmission condition and boundary trace rows ``lam - lam_D``.
    """

    def __init__(self, disc: Discretization, alpha: float, F: np.ndarray, partner: np.ndarray, fixed: np.ndarray):
        self.disc = disc
        self.alpha = alpha
        self.F = F
        self.partner_q = disc.u_at_quad(partner)
        self.fixed = fixed
        self.K_lin = disc.local.element_operator(alpha)
        self.ne = disc.n_el * disc.nloc

    def split(self, X):
        d = self.disc
        return X[: self.ne].reshape(d.n_el, d.nloc), X[self.ne:].reshape(d.n_faces, d.nl)

    def residual(self, X: np.ndarray) -> np.ndarray:
        d = self.disc
        lm = d.local
        x, lam = self.split(X)
        lam_e = d.gather_traces(lam)
        r_el = np.einsum("eij,ej->ei", self.K_lin, x) - np.einsum("eij,ej->ei", lm.coupling, lam_e) - self.F
        uq = d.u_at_quad(x[:, 2 * d.nq:])
        r_el[:, 2 * d.nq:] += 2.0 * d.load(discrete_gradient(uq, self.partner_q))
        loc = np.einsum("eij,ej->ei", lm.transmission, x) + np.einsum("eij,ej->ei", lm.trace_trace, lam_e)
        r_tr = np.zeros(d.n_faces * d.nl)
        np.add.at(r_tr, d.trace_dofs.ravel(), loc.ravel())
        r_tr[d.boundary_dofs] = lam.ravel()[d.boundary_dofs] - self.fixed.ravel()[d.boundary_dofs]
        return np.concatenate([r_el.ravel(), r_tr])

    def jacobian(self, X: np.ndarray) -> LevelJacobian:
        d = self.disc
        x, _ = self.split(X)
        uq = d.u_at_quad(x[:, 2 * d.nq:])
        da, _ = discrete_gradient_partials(uq, self.partner_q)
        extra = 2.0 * np.einsum("eq,eq,qi,qj->eij", d.wdet, da, d.phi_u, d.phi_u)
        return LevelJacobian(d, d.local.element_operator(self.alpha, extra))

    def scale(self) -> float:
        r = self.F.ravel()
        return 1.0 + float(np.linalg.norm(r) / math.sqrt(max(r.size, 1)))


class Integrator:
    """Time integrator for one discretisation and one manufactured case."""

    def __init__(self, disc: Discretization, case: ManufacturedCase, time_cfg: TimeConfig):
        self.disc = disc
        self.case = case
        self.cfg = time_cfg
        self._systems: dict[float, CondensedSystem] = {}
        self.factorizations = 0

    # -- data -----------------------------------------------------------------
    def fixed(self, t: float) -> np.ndarray:
        return self.disc.boundary_values(self.case.dirichlet(t))

    def source_load(self, t: float) -> np.ndarray:
        d = self.disc
        if self.case.source is None:
            return np.zeros((d.n_el, d.nu))
        return d.load(d.eval_at(self.case.source, t) * np.ones_like(d.wdet))

    def initialize(self) -> tuple[HDGState, np.ndarray]:
        """Level 0 and the discrete initial velocity."""
        d, case = self.disc, self.case
        if d.cfg.variant:
            u0 = l2_project_element(d, case.u0)
            state = lift_flux(d, u0, fixed=self.fixed(0.0), t=0.0)
            velocity = l2_project_element(d, case.u1)
        else:
            state = solve_elliptic_init(d, case.lap_u0, case.dirichlet(0.0), t=0.0)
            velocity, _ = hdg_project(d, case.u1, case.grad_u1)
        return state, velocity

    # -- helpers --------------------------------------------------------------
    def _system(self, alpha: float, reuse: bool = True) -> CondensedSystem:
        if reuse and alpha in self._systems:
            return self._systems[alpha]
        sys_ = CondensedSystem(self.disc, self.disc.local.element_operator(alpha))
        self.factorizations += 1
        if reuse:
            self._systems[alpha] = sys_
        return sys_

    def _loads(self, t_new: float, t_old: float) -> np.ndarray:
        return self.source_load(t_new) + self.source_load(t_old)

    def _mass(self, u: np.ndarray) -> np.ndarray:
        return np.einsum("eij,ej->ei", self.disc.local.mass_u, u)

    def _explicit_f(self, u: np.ndarray) -> np.ndarray:
        return 2.0 * self.disc.load(f(self.disc.u_at_quad(u)))

    def _element_rhs(self, Fu: np.ndarray) -> np.ndarray:
        d = self.disc
        F = np.zeros((d.n_el, d.nloc))
        F[:, 2 * d.nq:] = Fu
        return F

    def _newton(self, problem: LevelProblem, guess: HDGState, t: float, step: int):
        d = self.disc
        guess = guess.copy()
        guess.trace.reshape(-1)[d.boundary_dofs] = problem.fixed.reshape(-1)[d.boundary_dofs]
        try:
            res = newton_solve(
                problem.residual,
                problem.jacobian,
                d.pack(guess),
                self.cfg.newton,
                solve=lambda J, r: J.solve(r),
                scale=problem.scale(),
            )
        except NewtonError as exc:
            raise StepFailure(step, str(exc)) from exc
        return d.unpack(res.x, t), res.iterations, res.residual_norm

    # -- levels ---------------------------------------------------------------
    def first_step(self, state0: HDGState, velocity: np.ndarray, dt: float | None = None):
        """Level 1 from level 0 and the discrete initial velocity."""
        dt = self.cfg.dt if dt is None else dt
        t1 = state0.t + dt
        alpha = 4.0 / dt**2
        Fu = (
            alpha * self._mass(state0.u)
            + (4.0 / dt) * self._mass(velocity)
            - self.disc.element_action(state0)
            + self._loads(t1, state0.t)
        )
        fixed = self.fixed(t1)
        if self.cfg.scheme == "nonconservative":
            Fu = Fu - self._explicit_f(state0.u)
            return self._linear_level(alpha, Fu, fixed, t1, reuse=True)
        problem = LevelProblem(self.disc, alpha, self._element_rhs(Fu), state0.u, fixed)
        guess = state0.copy()
        guess.u = state0.u + dt * velocity
        return self._newton(problem, guess, t1, 1)

    def step_conservative(self, prev: HDGState, cur: HDGState, dt: float | None = None, step: int = -1):
        """Level ``n+1`` from levels ``n-1`` and ``n``; ``dt < 0`` runs the scheme backwards."""
        dt = self.cfg.dt if dt is None else dt
        t_new = cur.t + dt
        alpha = 2.0 / dt**2
        Fu = alpha * self._mass(2.0 * cur.u - prev.u) - self.disc.element_action(prev) + self._loads(t_new, prev.t)
        problem = LevelProblem(self.disc, alpha, self._element_rhs(Fu), prev.u, self.fixed(t_new))
        guess = HDGState(t_new, 2.0 * cur.u - prev.u, 2.0 * cur.q - prev.q, 2.0 * cur.trace - prev.trace)
        return self._newton(problem, guess, t_new, step)

    def step_nonconservative(self, prev: HDGState, cur: HDGState, dt: float | None = None, reuse_factorization=True):
        dt = self.cfg.dt if dt is None else dt
        t_new = cur.t + dt
        alpha = 2.0 / dt**2
        Fu = (
            alpha * self._mass(2.0 * cur.u - prev.u)
            - self.disc.element_action(prev)
            + self._loads(t_new, prev.t)
            - self._explicit_f(cur.u)
        )
        return self._linear_level(alpha, Fu, self.fixed(t_new), t_new, reuse_factorization)

    def _linear_level(self, alpha, Fu, fixed, t, reuse):
        x, lam = self._system(alpha, reuse).solve(self._element_rhs(Fu), fixed=fixed)
        return self.disc.state_from(x, lam, t), 0, 0.0

    def step(self, prev: HDGState, cur: HDGState, step: int = -1):
        if self.cfg.scheme == "nonconservative":
            return self.step_nonconservative(prev, cur)
        return self.step_conservative(prev, cur, step=step)

    # -- driver ---------------------------------------------------------------
    def run(self, n_steps: int | None = None, keep_states: bool = False, record_path=None) -> RunResult:
        """March ``n_steps`` levels (default ``T / dt``) from the initial data."""
        d, dt = self.disc, self.cfg.dt
        n_steps = self.cfg.n_steps if n_steps is None else int(n_steps)
        if n_steps < 1:
            raise ValueError("at least one time step is required")
        s0, velocity = self.initialize()
        e0 = semidiscrete_energy(d, s0, velocity)
        try:
            s1, its, res = self.first_step(s0, velocity)
        except StepFailure:
            raise
        except (np.linalg.LinAlgError, RuntimeError) as exc:
            raise StepFailure(1, str(exc)) from exc
        records = [StepRecord(1, s1.t, its, res, discrete_energy(d, s0, s1, dt))]
        states = [s0, s1] if keep_states else None
        prev, cur = s0, s1
        for n in range(2, n_steps + 1):
            try:
                new, its, res = self.step(prev, cur, step=n)
            except StepFailure:
                raise
            except (np.linalg.LinAlgError, RuntimeError) as exc:
                raise StepFailure(n, str(exc)) from exc
            # t accumulates n * dt exactly rather than by repeated addition
            new.t = n * dt
            records.append(StepRecord(n, new.t, its, res, discrete_energy(d, cur, new, dt)))
            if keep_states:
                states.append(new)
            prev, cur = cur, new
        if record_path is not None:
            write_step_records(records, record_path)
        return RunResult(cur, prev, dt, records, e0, velocity, states)
