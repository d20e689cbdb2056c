"""Cyclic phase-space flow: ODE system, cycle schedule and equilibrium instants.

The flow integrates

    du/dt = s(t) beta(u),      dp/dt = -s(t) J(u)^T p,

with ``s(t) = sqrt(1 - kappa(t, tau))`` (Hamilton's equations of the full
Hamiltonian) or ``s = 1`` in ``raw_ode`` mode.  Equilibrium instants sit at
odd multiples of the period T, where the default schedule reaches kappa = 1
exactly and the Hamiltonian vanishes.
"""

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import PhasePoint, RandersField
from .runio import atomic_write_csv


class DynamicsError(Exception):
    pass


class ScheduleError(DynamicsError):
    """kappa left [0, 1] or an equilibrium-instant condition failed."""


class BlowUpError(DynamicsError):
    """Integration produced a non-finite state."""

    def __init__(self, step_index: int, t: float):
        self.step_index = step_index
        self.t = t
        super().__init__(f"non-finite state after step {step_index} (t = {t!r})")


class GridAlignmentError(DynamicsError):
    """dt does not divide the period, so equilibrium instants miss the grid."""


class SingularReparameterizationError(DynamicsError):
    """kappa = 1: the internal->external time map is singular (equilibrium)."""


@dataclass(frozen=True)
class CycleSchedule:
    """Period T, conformal factor kappa(t, tau) in [0, 1], and cycle label."""

    period_T: float
    kappa: Callable[[float, float], float]
    tau_index: int = 0
    name: str = "custom"

    def __post_init__(self):
        if self.period_T <= 0.0:
            raise ValueError("period_T must be positive")


def sin_squared_schedule(period_T: float) -> CycleSchedule:
    """kappa(t) = sin^2(pi t / 2T), evaluated as (1 - cos(pi t / T)) / 2.

    The cosine form returns exactly 1.0 at odd multiples of T and exactly
    0.0 at even multiples (the extrema are flat, so argument roundoff of
    order eps perturbs the value only at order eps^2).
    """
    T = float(period_T)
    return CycleSchedule(
        period_T=T,
        kappa=lambda t, tau: 0.5 * (1.0 - math.cos(math.pi * t / T)),
        name="sin_squared",
    )


def constant_schedule(period_T: float, value: float) -> CycleSchedule:
    """Frozen kappa; used for conservation studies, not for cycle runs."""
    if not 0.0 <= value <= 1.0:
        raise ValueError("kappa value must lie in [0, 1]")
    return CycleSchedule(period_T=float(period_T),
                         kappa=lambda t, tau: value,
                         name=f"constant({value})")


def check_schedule(schedule: CycleSchedule, n_cycles: int = 3,
                   probe_points: int = 101) -> None:
    """Validate the cyclic-schedule invariants; raises ScheduleError.

    Checks kappa in [0, 1] on a probe grid, |1 - kappa| < 1e-12 at odd
    multiples of T, and a central-difference d kappa/dt below 1e-8 there.
    """
    T = schedule.period_T
    for n in range(n_cycles):
        for t in np.linspace(2 * n * T, 2 * (n + 1) * T, probe_points):
            k = schedule.kappa(float(t), 0.0)
            if not -1e-12 <= k <= 1.0 + 1e-12:
                raise ScheduleError(f"kappa({t}) = {k} outside [0, 1]")
        t_eq = (2 * n + 1) * T
        k_eq = schedule.kappa(t_eq, 0.0)
        if abs(1.0 - k_eq) >= 1e-12:
            raise ScheduleError(
                f"|1 - kappa| = {abs(1 - k_eq):.3e} at t = (2n+1)T, n = {n}")
        h = 1e-6 * T
        dk = (schedule.kappa(t_eq + h, 0.0) - schedule.kappa(t_eq - h, 0.0)) / (2 * h)
        if abs(dk) >= 1e-8:
            raise ScheduleError(
                f"d kappa/dt = {dk:.3e} at equilibrium instant t = {t_eq}")


def tau_of_t(t: float, schedule: CycleSchedule) -> float:
    """Emergent cycle time: tau = n exactly at the n-th equilibrium instant
    t = (2n - 1) T, linear in between."""
    return (t + schedule.period_T) / (2.0 * schedule.period_T)


@dataclass(frozen=True)
class FlowState:
    """Phase point plus the three time labels (external t, raw internal
    t_tilde, emergent cycle time tau)."""

    point: PhasePoint
    t: float
    t_tilde: float
    tau: float


def make_state(point: PhasePoint, schedule: CycleSchedule, t: float = 0.0,
               t_tilde: float | None = None) -> FlowState:
    return FlowState(point=point, t=t,
                     t_tilde=t if t_tilde is None else t_tilde,
                     tau=tau_of_t(t, schedule))


def _kappa_checked(schedule: CycleSchedule, t: float, tau: float) -> float:
    k = schedule.kappa(t, tau)
    if not -1e-12 <= k <= 1.0 + 1e-12:
        raise ScheduleError(f"kappa({t}, {tau}) = {k} outside [0, 1]")
    return min(max(k, 0.0), 1.0)


def hamiltonian(field: RandersField, schedule: CycleSchedule,
                state: FlowState) -> float:
    """H_t(u, p) = sqrt(1 - kappa(t, tau)) * sum_k beta_k(u) p_k."""
    k = _kappa_checked(schedule, state.t, state.tau)
    u, p = state.point.u, state.point.p
    return float(math.sqrt(1.0 - k) * (np.asarray(field.beta(u)) @ p))


def effective_cycle_hamiltonian(field: RandersField, schedule: CycleSchedule,
                                state: FlowState, tol: float = 1e-9) -> float:
    """Piecewise cycle Hamiltonian: sum_k beta_k(u) p_k away from the
    instants {t = nT}, exactly zero within ``tol`` of them.

    The schedule supplies the period locating those instants.
    """
    T = schedule.period_T
    m = state.t / T
    if abs(m - round(m)) * T <= tol:
        return 0.0
    return float(np.asarray(field.beta(state.point.u)) @ state.point.p)


def _rhs(field: RandersField, schedule: CycleSchedule, raw_ode: bool,
         t: float, u: np.ndarray, p: np.ndarray, evolve_p: bool):
    if raw_ode:
        s = 1.0
    else:
        k = _kappa_checked(schedule, t, tau_of_t(t, schedule))
        s = math.sqrt(1.0 - k)
    du = s * np.asarray(field.beta(u), dtype=float)
    if evolve_p:
        dp = -s * (field.jacobian_at(u).T @ p)
    else:
        dp = None
    return du, dp


def _advance(field, schedule, raw_ode, integrator, t, u, p, dt, evolve_p):
    """One fixed step from explicit time t; returns (u_new, p_new)."""
    if integrator == "euler":
        du, dp = _rhs(field, schedule, raw_ode, t, u, p, evolve_p)
        u2 = u + dt * du
        p2 = p + dt * dp if evolve_p else p
        return u2, p2
    if integrator != "rk4":
        raise ValueError(f"unknown integrator {integrator!r}")
    k1u, k1p = _rhs(field, schedule, raw_ode, t, u, p, evolve_p)
    if evolve_p:
        k2u, k2p = _rhs(field, schedule, raw_ode, t + dt / 2,
                        u + dt / 2 * k1u, p + dt / 2 * k1p, True)
        k3u, k3p = _rhs(field, schedule, raw_ode, t + dt / 2,
                        u + dt / 2 * k2u, p + dt / 2 * k2p, True)
        k4u, k4p = _rhs(field, schedule, raw_ode, t + dt,
                        u + dt * k3u, p + dt * k3p, True)
        u2 = u + dt / 6 * (k1u + 2 * k2u + 2 * k3u + k4u)
        p2 = p + dt / 6 * (k1p + 2 * k2p + 2 * k3p + k4p)
    else:
        k2u, _ = _rhs(field, schedule, raw_ode, t + dt / 2, u + dt / 2 * k1u, p, False)
        k3u, _ = _rhs(field, schedule, raw_ode, t + dt / 2, u + dt / 2 * k2u, p, False)
        k4u, _ = _rhs(field, schedule, raw_ode, t + dt, u + dt * k3u, p, False)
        u2 = u + dt / 6 * (k1u + 2 * k2u + 2 * k3u + k4u)
        p2 = p
    return u2, p2


def step_flow(field: RandersField, schedule: CycleSchedule, state: FlowState,
              dt: float, integrator: str = "rk4", raw_ode: bool = False,
              _step_index: int = 0) -> FlowState:
    """Advance (u, p, t) one fixed step of the stated integrator.

    The u-subsystem is autonomous; p follows the linear cotangent equation
    with the Jacobian evaluated along the u trajectory.  t_tilde accumulates
    the internal-time element (1 - kappa) dt by the trapezoid rule.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    u, p = state.point.u, state.point.p
    evolve_p = bool(np.any(p))
    u2, p2 = _advance(field, schedule, raw_ode, integrator, state.t, u, p, dt, evolve_p)
    if not (np.isfinite(u2).all() and np.isfinite(p2).all()):
        raise BlowUpError(_step_index, state.t + dt)
    t2 = state.t + dt
    k0 = _kappa_checked(schedule, state.t, state.tau)
    k1 = _kappa_checked(schedule, t2, tau_of_t(t2, schedule))
    t_tilde2 = state.t_tilde + 0.5 * ((1.0 - k0) + (1.0 - k1)) * dt
    point2 = PhasePoint(u=u2, p=p2, n_molecules=state.point.n_molecules)
    return FlowState(point=point2, t=t2, t_tilde=t_tilde2,
                     tau=tau_of_t(t2, schedule))


@dataclass(frozen=True)
class EquilibriumSnapshot:
    cycle: int
    t: float
    tau: float
    point: PhasePoint
    h_value: float


@dataclass
class FlowTrajectory:
    """Stored flow history on the integration grid."""

    t: np.ndarray
    tau: np.ndarray
    cycle: np.ndarray
    u: np.ndarray
    p: np.ndarray
    h: np.ndarray
    n_molecules: int

    def to_csv(self, path, stride: int = 1) -> None:
        dim = self.u.shape[1]
        header = (["t", "tau", "cycle"]
                  + [f"u_{i}" for i in range(dim)]
                  + [f"p_{i}" for i in range(dim)] + ["H"])
        idx = range(0, len(self.t), stride)
        rows = ([self.t[k], self.tau[k], int(self.cycle[k])]
                + list(self.u[k]) + list(self.p[k]) + [self.h[k]]
                for k in idx)
        atomic_write_csv(path, header, rows)


def snapshots_to_csv(snapshots, path) -> None:
    if not snapshots:
        raise ValueError("no snapshots to export")
    dim = snapshots[0].point.dim
    header = (["t", "tau", "cycle"]
              + [f"u_{i}" for i in range(dim)]
              + [f"p_{i}" for i in range(dim)] + ["H"])
    rows = ([s.t, s.tau, s.cycle] + list(s.point.u) + list(s.point.p) + [s.h_value]
            for s in snapshots)
    atomic_write_csv(path, header, rows)


def run_cycles(field: RandersField, schedule: CycleSchedule, initial: FlowState,
               n_cycles: int, dt: float, integrator: str = "rk4",
               raw_ode: bool = False, store_trajectory: bool = True,
               h_bound: float = 1e-9):
    """Integrate n_cycles fundamental cycles (period 2T each) from t = 0.

    Returns ``(trajectory, snapshots)`` where the snapshots sit at the
    equilibrium instants t = (2n - 1) T, n = 1..n_cycles.  Times are taken
    as k * dt (not accumulated), so with dt dividing T the instants land on
    grid points; each snapshot's Hamiltonian must satisfy
    |H| <= h_bound * (1 + |p|).
    """
    if n_cycles < 1:
        raise ValueError("n_cycles must be >= 1")
    T = schedule.period_T
    m = T / dt
    steps_per_T = round(m)
    if steps_per_T < 1 or abs(m - steps_per_T) > 1e-12 * max(1.0, m):
        raise GridAlignmentError(
            f"dt = {dt!r} does not divide the period T = {T!r} "
            f"(T/dt = {m!r})")
    total = 2 * n_cycles * steps_per_T
    dim = initial.point.dim
    n_mol = initial.point.n_molecules

    u = initial.point.u.copy()
    p = initial.point.p.copy()
    evolve_p = bool(np.any(p))
    t_tilde = initial.t_tilde

    if store_trajectory:
        ts = np.empty(total + 1)
        us = np.empty((total + 1, dim))
        ps = np.empty((total + 1, dim))
        hs = np.empty(total + 1)

    def h_at(t, uu, pp):
        k = _kappa_checked(schedule, t, tau_of_t(t, schedule))
        return float(math.sqrt(1.0 - k) * (np.asarray(field.beta(uu)) @ pp))

    if store_trajectory:
        ts[0] = 0.0
        us[0] = u
        ps[0] = p
        hs[0] = h_at(0.0, u, p)

    snapshots = []
    for k in range(total):
        t_k = k * dt
        u, p = _advance(field, schedule, raw_ode, integrator, t_k, u, p, dt, evolve_p)
        if not (np.isfinite(u).all() and (not evolve_p or np.isfinite(p).all())):
            raise BlowUpError(k + 1, (k + 1) * dt)
        t_next = (k + 1) * dt
        k0 = _kappa_checked(schedule, t_k, tau_of_t(t_k, schedule))
        k1 = _kappa_checked(schedule, t_next, tau_of_t(t_next, schedule))
        t_tilde += 0.5 * ((1.0 - k0) + (1.0 - k1)) * dt
        if store_trajectory:
            ts[k + 1] = t_next
            us[k + 1] = u
            ps[k + 1] = p
            hs[k + 1] = h_at(t_next, u, p)
        step_no = k + 1
        if step_no % steps_per_T == 0 and (step_no // steps_per_T) % 2 == 1:
            n = (step_no // steps_per_T + 1) // 2
            h_val = h_at(t_next, u, p)
            p_norm = float(np.linalg.norm(p))
            if abs(h_val) > h_bound * (1.0 + p_norm):
                raise ScheduleError(
                    f"Hamiltonian |H| = {abs(h_val):.3e} at equilibrium "
                    f"instant t = {t_next!r} exceeds {h_bound:.1e} * (1 + |p|)")
            snapshots.append(EquilibriumSnapshot(
                cycle=n, t=t_next, tau=float(n),
                point=PhasePoint(u=u.copy(), p=p.copy(), n_molecules=n_mol),
                h_value=h_val))

    trajectory = None
    if store_trajectory:
        cyc = np.minimum(np.floor(ts / (2 * T)).astype(int) + 1, n_cycles)
        tau = (ts + T) / (2 * T)
        trajectory = FlowTrajectory(t=ts, tau=tau, cycle=cyc, u=us, p=ps,
                                    h=hs, n_molecules=n_mol)
    return trajectory, snapshots


def reparameterize_time(t_tilde: float, schedule: CycleSchedule,
                        tau: float | None = None) -> float:
    """External time t = t_tilde / (1 - kappa(t_tilde, tau)).

    Singular exactly where kappa reaches 1 (an equilibrium instant); the
    differential relation dt = (1 - kappa) dt_tilde is meaningful on the
    homogeneity region where kappa is stationary and small.
    """
    tau_val = tau if tau is not None else float(schedule.tau_index)
    k = _kappa_checked(schedule, t_tilde, tau_val)
    if 1.0 - k <= 1e-12:
        raise SingularReparameterizationError(
            f"kappa({t_tilde!r}) = {k!r}: equilibrium instant reached")
    return t_tilde / (1.0 - k)
