"""Center-of-mass observables and the equivalence-principle experiment.

Subsystems A and B are disjoint tag sets over exchangeable molecules drawn
i.i.d. from one preparation measure.  Their center-of-mass 4-vectors are
tracked at the equilibrium instants (cycle time tau = 1, 2, ...) together
with the guide trajectory M (the preparation-measure mean), and deviations
are profiled with the concentration machinery.
"""

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np

from .concentration import tail_profile_from_deviations
from .dynamics import CycleSchedule, GridAlignmentError, sin_squared_schedule
from .geometry import BLOCK_DIM, PhasePoint, RandersField
from .runio import atomic_write_csv, atomic_write_json, derive_rng

SYSTEMS = ("A", "B", "S")


class ObservablesError(Exception):
    pass


class SubsetError(ObservablesError):
    """Requested tag subset is empty."""


class FreeEvolutionViolation(ObservablesError):
    """Molecule bookkeeping changed during a run; WEP claims are void."""

    def __init__(self, report):
        self.report = report
        super().__init__(f"free evolution violated: {report.note}")


@dataclass(frozen=True)
class Preparation:
    """Per-molecule i.i.d. Gaussian measure on the 8-dim coordinate block."""

    mean: np.ndarray
    covariance: np.ndarray
    seed: int

    def __post_init__(self):
        mean = np.broadcast_to(np.asarray(self.mean, dtype=float), (BLOCK_DIM,)).copy()
        cov = np.asarray(self.covariance, dtype=float)
        if cov.ndim == 0:
            cov = float(cov) * np.eye(BLOCK_DIM)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        if cov.shape != (BLOCK_DIM, BLOCK_DIM):
            raise ValueError("covariance must be 8x8 (or a scalar)")
        if not np.allclose(cov, cov.T, atol=1e-12):
            raise ValueError("covariance must be symmetric")
        if np.linalg.eigvalsh(cov)[0] < -1e-12:
            raise ValueError("covariance must be positive semidefinite")

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.multivariate_normal(self.mean, self.covariance, size=n,
                                       method="cholesky")


@dataclass
class Ensemble:
    """N tagged molecules with uniform weights and an event ledger."""

    n_molecules: int
    labels: np.ndarray  # bool, True = subsystem A
    state: PhasePoint
    preparation: Preparation
    weights: np.ndarray = None
    events: list = dc_field(default_factory=list)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=bool)
        if self.labels.shape != (self.n_molecules,):
            raise ValueError("labels must tag every molecule exactly once")
        n_a = int(self.labels.sum())
        if n_a < 1 or n_a >= self.n_molecules:
            raise ValueError("need N_A >= 1 and N_B >= 1")
        if self.weights is None:
            self.weights = np.full(self.n_molecules, 1.0 / self.n_molecules)

    @property
    def n_a(self) -> int:
        return int(self.labels.sum())

    @property
    def n_b(self) -> int:
        return self.n_molecules - self.n_a

    def inject_exchange_event(self, molecule_index: int) -> None:
        self.events.append({"kind": "exchange", "index": int(molecule_index)})

    def apply_reweighting(self, weights) -> None:
        self.weights = np.asarray(weights, dtype=float)
        self.events.append({"kind": "reweight"})


def make_ensemble(preparation: Preparation, n_molecules: int,
                  rng: np.random.Generator, n_a: int | None = None) -> Ensemble:
    if n_molecules < 2:
        raise ValueError("need at least 2 molecules to split into A and B")
    blocks = preparation.draw(n_molecules, rng)
    u = blocks.reshape(-1)
    p = np.zeros_like(u)
    if n_a is None:
        n_a = n_molecules // 2
    labels = np.zeros(n_molecules, dtype=bool)
    labels[:n_a] = True
    point = PhasePoint(u=u, p=p, n_molecules=n_molecules)
    return Ensemble(n_molecules=n_molecules, labels=labels, state=point,
                    preparation=preparation)


def center_of_mass(ensemble: Ensemble, snapshot: PhasePoint, tag: str,
                   normalization: str = "per_tag") -> np.ndarray:
    """Average of the position blocks (first 4 coordinates per molecule)
    over the tagged subset; velocities never enter."""
    if tag not in SYSTEMS:
        raise ValueError(f"tag must be one of {SYSTEMS}")
    if normalization not in ("per_tag", "per_total"):
        raise ValueError("normalization must be 'per_tag' or 'per_total'")
    blocks = snapshot.u.reshape(snapshot.n_molecules, BLOCK_DIM)
    if tag == "A":
        sel = ensemble.labels
    elif tag == "B":
        sel = ~ensemble.labels
    else:
        sel = np.ones(snapshot.n_molecules, dtype=bool)
    count = int(sel.sum())
    if count == 0:
        raise SubsetError(f"tag subset {tag!r} is empty")
    total = blocks[sel, :4].sum(axis=0)
    denom = count if normalization == "per_tag" else snapshot.n_molecules
    return total / denom


@dataclass(frozen=True)
class ObservableTrajectory:
    """Per-tau observable coordinates of one tagged system, with the guide."""

    tau_grid: np.ndarray
    X: np.ndarray       # (len(tau_grid), 4)
    M_mean: np.ndarray  # (len(tau_grid), 4)
    system_tag: str
    normalization: str

    def max_step_ratio(self, period_T: float) -> float:
        """max over tau steps of |Delta X| / T (componentwise sup)."""
        if len(self.tau_grid) < 2:
            return 0.0
        steps = np.abs(np.diff(self.X, axis=0)).max()
        return float(steps / period_T)


@dataclass(frozen=True)
class FreeEvolutionReport:
    ok: bool
    events: tuple
    note: str


def check_free_evolution(ensemble: Ensemble, trajectory=None) -> FreeEvolutionReport:
    """True iff no molecule was added, removed or re-weighted in the run."""
    events = tuple(ensemble.events)
    uniform = bool(np.all(ensemble.weights == ensemble.weights[0]))
    if events:
        first = events[0]
        note = f"event {first['kind']!r} recorded (first at {first})"
    elif not uniform:
        note = "weights are not constant across molecules"
    else:
        note = "no exchange or reweighting events"
    return FreeEvolutionReport(ok=not events and uniform, events=events, note=note)


# ---------------------------------------------------------------------------
# batched evolution of i.i.d. coordinate arrays under componentwise fields


def _snapshot_steps(period_T: float, dt: float, n_cycles: int):
    m = period_T / dt
    steps_per_t = round(m)
    if steps_per_t < 1 or abs(m - steps_per_t) > 1e-12 * max(1.0, m):
        raise GridAlignmentError(
            f"dt = {dt!r} does not divide the period T = {period_T!r}")
    total = 2 * n_cycles * steps_per_t
    snaps = {(2 * n - 1) * steps_per_t: n for n in range(1, n_cycles + 1)}
    return total, snaps


def evolve_coordinates(u0: np.ndarray, field: RandersField,
                       schedule: CycleSchedule, dt: float, n_cycles: int,
                       collect: Callable, raw_ode: bool = False) -> None:
    """March an arbitrarily shaped coordinate array through n_cycles.

    Valid only for componentwise fields (the drift acts coordinate by
    coordinate, so molecules and trials decouple and batch together).
    ``collect(tau, u)`` is invoked at tau = 0 and at every equilibrium
    instant tau = 1..n_cycles.
    """
    if field.scalar_map is None or not field.componentwise:
        raise ValueError("batched evolution requires a componentwise field")
    g = field.scalar_map
    total, snaps = _snapshot_steps(schedule.period_T, dt, n_cycles)
    u = np.array(u0, dtype=float, copy=True)
    collect(0, u)

    def scale(t):
        if raw_ode:
            return 1.0
        k = schedule.kappa(t, 0.0)
        return math.sqrt(max(0.0, 1.0 - min(k, 1.0)))

    for k in range(total):
        t = k * dt
        s1 = scale(t)
        s2 = scale(t + dt / 2)
        s4 = scale(t + dt)
        k1 = s1 * g(u)
        k2 = s2 * g(u + (dt / 2) * k1)
        k3 = s2 * g(u + (dt / 2) * k2)
        k4 = s4 * g(u + dt * k3)
        u += (dt / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        step = k + 1
        if step in snaps:
            collect(snaps[step], u)


@dataclass(frozen=True)
class FlowParams:
    """Field plus cycle timing shared by guide and trial evolutions."""

    field: RandersField
    period_T: float
    dt: float
    raw_ode: bool = False


def mean_guide(preparation: Preparation, flow: FlowParams, n_cycles: int,
               n_reference: int = 100_000, seed: int = 0):
    """Guide trajectory M(tau): preparation-measure mean of the molecule
    positions at each equilibrium instant, estimated from one large
    reference ensemble evolved under the same field.

    Depends only on the preparation and the field, never on subsystem tags.
    Returns (tau_grid, M) with M of shape (n_cycles + 1, 4); the continuous
    tau view is linear interpolation between integer snapshots.
    """
    rng = derive_rng(seed, "mean-guide", preparation.seed)
    u0 = preparation.draw(n_reference, rng)
    schedule = sin_squared_schedule(flow.period_T)
    m = np.empty((n_cycles + 1, 4))

    def collect(tau, u):
        m[tau] = u[:, :4].mean(axis=0)

    evolve_coordinates(u0, flow.field, schedule, flow.dt, n_cycles, collect,
                       raw_ode=flow.raw_ode)
    return np.arange(n_cycles + 1), m


# ---------------------------------------------------------------------------
# the WEP experiment


@dataclass(frozen=True)
class WepConfig:
    n_list: tuple
    n_trials: int
    flow: FlowParams
    preparation: Preparation
    n_cycles: int
    rho_grid: np.ndarray
    seed: int
    n_reference: int = 100_000
    chunk_elems: int = 4_000_000
    min_exceed: int = 10
    event_injector: Callable | None = None

    def __post_init__(self):
        object.__setattr__(self, "n_list", tuple(int(n) for n in self.n_list))
        object.__setattr__(self, "rho_grid",
                           np.asarray(self.rho_grid, dtype=float))
        if self.n_trials < 1 or self.n_cycles < 1:
            raise ValueError("n_trials and n_cycles must be >= 1")
        if any(n < 2 for n in self.n_list):
            raise ValueError("every N must be >= 2")


@dataclass
class PerSizeResult:
    n_molecules: int
    sigma_x: float
    x_obs: np.ndarray        # (n_trials, n_cycles+1, 3 systems, 4)
    d_ab: np.ndarray         # (n_trials, n_cycles+1)
    d_to_guide: dict         # tag -> (n_trials, n_cycles+1)
    sup_d_ab: np.ndarray     # (n_trials,)
    median_sup_d_ab: float
    profiles: dict           # tag -> ConcentrationProfile of pooled D/sigma_x
    x_step_max_ratio: float  # max |Delta X| / T over trials, systems, steps


@dataclass
class WepReport:
    config: WepConfig
    tau_grid: np.ndarray
    guide: np.ndarray
    per_size: dict
    monotonicity: list       # [(N, median_sup_d_ab)]
    monotonic_ok: bool
    inversions: int
    free_evolution: FreeEvolutionReport

    def observable_trajectory(self, n_molecules: int, trial: int,
                              tag: str) -> ObservableTrajectory:
        res = self.per_size[n_molecules]
        return ObservableTrajectory(
            tau_grid=self.tau_grid,
            X=res.x_obs[trial, :, SYSTEMS.index(tag), :],
            M_mean=self.guide,
            system_tag=tag,
            normalization="per_tag")


def _trial_chunks(n_trials, chunk):
    start = 0
    while start < n_trials:
        yield start, min(start + chunk, n_trials)
        start = start + chunk


def wep_experiment(config: WepConfig) -> WepReport:
    """Evolve S = A | B ensembles over the cycle schedule for every N and
    trial; record center-of-mass separations and guide deviations, their
    tail profiles, and the monotonicity of the median sup-separation in N.

    All systems share the preparation measure and the external field; trial
    draws are independent.  A free-evolution violation aborts the run.
    """
    flow = config.flow
    schedule = sin_squared_schedule(flow.period_T)
    tau_grid, guide = mean_guide(config.preparation, flow, config.n_cycles,
                                 n_reference=config.n_reference,
                                 seed=config.seed)

    free_report = FreeEvolutionReport(ok=True, events=(),
                                      note="no exchange or reweighting events")
    per_size = {}
    for n_mol in config.n_list:
        n_a = n_mol // 2
        n_tau = config.n_cycles + 1
        x_obs = np.empty((config.n_trials, n_tau, 3, 4))

        # Free-evolution bookkeeping on a representative ensemble: the
        # batched march has no exchange mechanism, so events can only come
        # from an injector.
        rng0 = derive_rng(config.seed, f"wep-N{n_mol}-trial", 0)
        rep = make_ensemble(config.preparation, n_mol, rng0, n_a=n_a)
        if config.event_injector is not None:
            config.event_injector(rep, n_mol, 0)
        free_report = check_free_evolution(rep)
        if not free_report.ok:
            raise FreeEvolutionViolation(free_report)

        chunk = max(1, min(config.n_trials,
                           config.chunk_elems // (n_mol * BLOCK_DIM)))
        for lo, hi in _trial_chunks(config.n_trials, chunk):
            u0 = np.empty((hi - lo, n_mol, BLOCK_DIM))
            for k in range(lo, hi):
                rng = derive_rng(config.seed, f"wep-N{n_mol}-trial", k)
                u0[k - lo] = config.preparation.draw(n_mol, rng)

            def collect(tau, u, lo=lo, hi=hi):
                x_obs[lo:hi, tau, 0, :] = u[:, :n_a, :4].mean(axis=1)
                x_obs[lo:hi, tau, 1, :] = u[:, n_a:, :4].mean(axis=1)
                x_obs[lo:hi, tau, 2, :] = u[:, :, :4].mean(axis=1)

            evolve_coordinates(u0, flow.field, schedule, flow.dt,
                               config.n_cycles, collect, raw_ode=flow.raw_ode)

        sigma_x = float(np.sqrt(np.mean(np.var(x_obs[:, 0, 2, :], axis=0))))
        d_ab = np.abs(x_obs[:, :, 0, :] - x_obs[:, :, 1, :]).max(axis=2)
        d_to_guide = {}
        profiles = {}
        for idx, tag in enumerate(SYSTEMS):
            d = np.abs(x_obs[:, :, idx, :] - guide[None, :, :]).max(axis=2)
            d_to_guide[tag] = d
            profiles[tag] = tail_profile_from_deviations(
                (d / sigma_x).reshape(-1), config.rho_grid, rho_p=1.0,
                sigma_f=sigma_x, min_exceed=config.min_exceed,
                kind="wep-deviation", dimension=n_mol, seed=config.seed)
        sup_d_ab = d_ab.max(axis=1)
        x_steps = np.abs(np.diff(x_obs, axis=1)).max()
        per_size[n_mol] = PerSizeResult(
            n_molecules=n_mol,
            sigma_x=sigma_x,
            x_obs=x_obs,
            d_ab=d_ab,
            d_to_guide=d_to_guide,
            sup_d_ab=sup_d_ab,
            median_sup_d_ab=float(np.median(sup_d_ab)),
            profiles=profiles,
            x_step_max_ratio=float(x_steps / flow.period_T),
        )

    monotonicity = [(n, per_size[n].median_sup_d_ab) for n in config.n_list]
    meds = [m for _, m in monotonicity]
    inversions = sum(1 for a, b in zip(meds, meds[1:]) if b > a)
    allowed = max(1, (len(meds) - 1) // 10)
    return WepReport(
        config=config,
        tau_grid=tau_grid,
        guide=guide,
        per_size=per_size,
        monotonicity=monotonicity,
        monotonic_ok=inversions <= allowed,
        inversions=inversions,
        free_evolution=free_report,
    )


# ---------------------------------------------------------------------------
# scale relation rho / rho_P against N


@dataclass(frozen=True)
class ScaleRelationReport:
    rho_star: dict            # N -> first rho with tail below threshold (raw)
    threshold: float
    exponent: float
    exponent_stderr: float
    regime: str
    note: str


def _first_rho_below(rho_grid, tail, threshold):
    below = np.nonzero(tail < threshold)[0]
    if below.size == 0:
        return None
    return float(rho_grid[below[0]])


def scale_relation_check(source, n_list=None, threshold: float | None = None,
                         tag: str = "S") -> ScaleRelationReport:
    """Scaling of the tail-extinction scale rho* with system size.

    ``source`` is a WepReport (raw rho* = sigma_X times the normalized grid
    value) or a dict ``{N: (rho_grid, tail)}`` of raw tail curves.  The
    exponent is the log-log slope of rho*(N); a slope near -1/2 is the
    CLT regime, near -1 the regime whose concentration exponent grows like
    N^2.  This is a consistency report on an assumed relation, not an
    assertion.
    """
    if isinstance(source, WepReport):
        if threshold is None:
            threshold = 10.0 / source.config.n_trials
        curves = {}
        for n_mol, res in source.per_size.items():
            prof = res.profiles[tag]
            curves[n_mol] = (prof.rho_grid * res.sigma_x, prof.tail_prob)
    else:
        curves = {int(k): (np.asarray(g, dtype=float), np.asarray(t, dtype=float))
                  for k, (g, t) in source.items()}
        if threshold is None:
            raise ValueError("threshold is required for raw tail curves")
    if n_list is None:
        n_list = sorted(curves)
    n_list = [n for n in n_list if n in curves]

    rho_star = {}
    for n_mol in n_list:
        grid, tail = curves[n_mol]
        r = _first_rho_below(grid, tail, threshold)
        if r is not None:
            rho_star[n_mol] = r
    if len(rho_star) < 3:
        raise ValueError(
            "insufficient N coverage: need >= 3 sizes with a resolvable "
            "extinction scale")

    lx = np.log(np.array(sorted(rho_star)))
    ly = np.log(np.array([rho_star[n] for n in sorted(rho_star)]))
    xm, ym = lx.mean(), ly.mean()
    sxx = float(np.sum((lx - xm) ** 2))
    slope = float(np.sum((lx - xm) * (ly - ym)) / sxx)
    resid = ly - (ym + slope * (lx - xm))
    dof = max(lx.size - 2, 1)
    stderr = float(np.sqrt(np.sum(resid ** 2) / dof / sxx))

    if abs(slope + 0.5) <= 0.15:
        regime = "clt"
        note = ("rho* ~ N^-1/2: central-limit scaling; under rho/rho_P ~ N "
                "the concentration exponent grows linearly, not quadratically")
    elif abs(slope + 1.0) <= 0.15:
        regime = "quadratic-exponent"
        note = "rho* ~ N^-1: consistent with an exp(-c N^2 rho^2) tail family"
    else:
        regime = "other"
        note = f"measured exponent {slope:.3f} matches neither reference regime"
    return ScaleRelationReport(rho_star=rho_star, threshold=float(threshold),
                               exponent=slope, exponent_stderr=stderr,
                               regime=regime, note=note)


# ---------------------------------------------------------------------------
# exports


def wep_to_csv(report: WepReport, path) -> None:
    header = (["N", "trial", "tau"]
              + [f"X_A_mu{i}" for i in range(4)]
              + [f"X_B_mu{i}" for i in range(4)]
              + [f"X_S_mu{i}" for i in range(4)]
              + [f"M_mu{i}" for i in range(4)]
              + ["D_AB", "D_SM"])

    def rows():
        for n_mol in report.config.n_list:
            res = report.per_size[n_mol]
            for trial in range(report.config.n_trials):
                for tau in report.tau_grid:
                    x = res.x_obs[trial, tau]
                    yield ([n_mol, trial, int(tau)]
                           + list(x[0]) + list(x[1]) + list(x[2])
                           + list(report.guide[tau])
                           + [res.d_ab[trial, tau],
                              res.d_to_guide["S"][trial, tau]])

    atomic_write_csv(path, header, rows())


def wep_summary_json(report: WepReport, path) -> None:
    per_size = {}
    for n_mol, res in report.per_size.items():
        fits = {}
        for tag, prof in res.profiles.items():
            fits[tag] = None if prof.fit is None else {
                "C1_hat": prof.fit.C1_hat, "C2_hat": prof.fit.C2_hat,
                "stderr": prof.fit.stderr, "n_points": prof.fit.n_points}
        per_size[str(n_mol)] = {
            "sigma_x": res.sigma_x,
            "median_sup_d_ab": res.median_sup_d_ab,
            "x_step_max_ratio": res.x_step_max_ratio,
            "fits": fits,
        }
    atomic_write_json(path, {
        "per_size": per_size,
        "monotonicity": [[n, m] for n, m in report.monotonicity],
        "monotonic_ok": report.monotonic_ok,
        "inversions": report.inversions,
        "free_evolution_ok": report.free_evolution.ok,
        "seed": report.config.seed,
    })
