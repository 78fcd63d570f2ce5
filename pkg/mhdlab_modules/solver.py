"""Pseudo-spectral integration of the perturbation system around B = h0 = (1, 0).

    du/dt = P(-u.grad u + H.grad H + d1 H) + Delta u
    dH/dt = d1 u + H.grad u - u.grad H
    dA/dt = -u.grad A - grad u - A grad u

A is stored as the perturbation A - I of the inverse deformation gradient,
(A grad u)_ik = sum_l A_il d_k u_l. Quadratic terms use 2/3-dealiased
collocation products; Delta u is integrated exactly by an integrating factor
around an SSP-RK3 stage scheme.
"""
import glob
import os
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid

from . import config, utils
from .diagnostics import NormLedger, XMonitor, ledger_row
from .errors import (
    BlowUpError, InitializationError, LedgerError, MhdLabError, ParameterRangeError, StabilityError,
)
from .linear import eigenvector
from .spectral import (
    Grid, SpectralField, VectorField, MatrixField, require_same_grid, fft2, ifft2,
    transform_inverse, project_coeffs, leray_project, divergence, inverse_laplacian,
    laplacian, partial_derivative, advection, exact_product, dealiased_product,
    random_field, solenoidal_from_stream, solenoidal_mode, scaled_to_rms,
    write_snapshot, read_snapshot,
)
from .utils import atomic_write, log_action, set_log_file, thread_cap


@dataclass(eq=False)
class MHDState:
    u: VectorField
    H: VectorField
    A: MatrixField
    t: float = 0.0

    @property
    def grid(self):
        return self.u.grid

    @classmethod
    def zeros(cls, grid, t=0.0):
        return cls(VectorField.zeros(grid), VectorField.zeros(grid), MatrixField.zeros(grid), t)

    def fields(self):
        return [self.u.x, self.u.y, self.H.x, self.H.y, *self.A.entries()]

    @classmethod
    def from_fields(cls, fields, t=0.0):
        if len(fields) != len(config.SNAPSHOT_FIELDS):
            raise ParameterRangeError(f"{len(config.SNAPSHOT_FIELDS)} fields", f"got {len(fields)}")
        return cls(VectorField(fields[0], fields[1]), VectorField(fields[2], fields[3]),
                   MatrixField(*fields[4:8]), t)

    def stack(self):
        return np.array([f.coeffs for f in self.fields()])

    @classmethod
    def from_stack(cls, grid, stacked, t):
        return cls.from_fields([SpectralField(grid, c) for c in stacked], t)

    def max_norms(self):
        real = ifft2(self.stack()).real
        with np.errstate(invalid='ignore'):
            return {
                'max|u|': float(np.max(np.hypot(real[0], real[1]))),
                'max|H|': float(np.max(np.hypot(real[2], real[3]))),
                'max|A|': float(np.max(np.abs(real[4:8]))),
            }


# --- TENDENCY ---

def _explicit(grid, Y, nonlinear, evolve_a):
    """Everything except Delta u, Leray-projected in the u rows."""
    ik1 = 1j * grid.xi1
    ik2 = 1j * grid.xi2
    out = np.zeros_like(Y)
    out[0:2] = ik1 * Y[2:4]
    out[2:4] = ik1 * Y[0:2]
    if evolve_a:
        out[4] = -ik1 * Y[0]
        out[5] = -ik2 * Y[0]
        out[6] = -ik1 * Y[1]
        out[7] = -ik2 * Y[1]
    if nonlinear:
        mask = grid.dealias_mask
        Yd = Y * mask
        real = ifft2(Yd).real
        d1 = ifft2(ik1 * Yd).real
        d2 = ifft2(ik2 * Yd).real
        u, H = real[0:2], real[2:4]

        def along(v, rows):
            return v[0] * d1[rows] + v[1] * d2[rows]

        terms = np.zeros(Y.shape)
        terms[0:2] = along(H, slice(2, 4)) - along(u, slice(0, 2))
        terms[2:4] = along(H, slice(0, 2)) - along(u, slice(2, 4))
        if evolve_a:
            A = real[4:8]
            terms[4:8] = -along(u, slice(4, 8))
            grads = (d1, d2)
            for i in (0, 1):
                for k in (0, 1):
                    terms[4 + 2 * i + k] -= A[2 * i] * grads[k][0] + A[2 * i + 1] * grads[k][1]
        out += fft2(terms) * mask
    # the exact system conserves every mean
    out[:, 0, 0] = 0.0
    out[0], out[1] = project_coeffs(grid, out[0], out[1])
    return out


def tendency(state, nonlinear=True, evolve_a=True):
    """(du, dH, dA) at the given state."""
    grid = state.grid
    Y = state.stack()
    out = _explicit(grid, Y, nonlinear, evolve_a)
    out[0:2] -= grid.xi_sq * Y[0:2]
    fields = [SpectralField(grid, c) for c in out]
    return VectorField(*fields[0:2]), VectorField(*fields[2:4]), MatrixField(*fields[4:8])


def momentum_terms(state, product=dealiased_product):
    """Unprojected -u.grad u + H.grad H + d1 H + Delta u."""
    u, H = state.u, state.H
    forcing = VectorField(partial_derivative(H.x, 1), partial_derivative(H.y, 1))
    diffusion = VectorField(laplacian(u.x), laplacian(u.y))
    return advection(H, H, product) - advection(u, u, product) + forcing + diffusion


def pressure_diagnostic(state):
    """Total pressure P + |B|^2/2 = Delta^-1 div(H.grad H - u.grad u), zero mean, padded products."""
    stress = advection(state.H, state.H, exact_product) - advection(state.u, state.u, exact_product)
    return inverse_laplacian(divergence(stress))


# --- TIME STEPPING ---

def stability_limit(state):
    real = ifft2(state.stack()[0:4]).real
    speed = float(np.max(np.hypot(real[0], real[1]))) + float(np.max(np.hypot(1.0 + real[2], real[3])))
    if not np.isfinite(speed):
        raise BlowUpError(state.t, state.max_norms())
    return min(config.CFL_SAFETY / (speed * state.grid.k_max), config.MAX_DT)


@lru_cache(maxsize=8)
def _factors(grid, dt):
    """Integrating factors exp(-|xi|^2 tau) on the u rows for tau = dt, dt/2, -dt/2."""
    out = []
    for tau in (dt, 0.5 * dt, -0.5 * dt):
        f = np.ones((len(config.SNAPSHOT_FIELDS),) + grid.shape)
        f[0:2] = np.exp(-grid.xi_sq * tau)
        f.setflags(write=False)
        out.append(f)
    return tuple(out)


def step(state, dt, nonlinear=True, evolve_a=True):
    limit = stability_limit(state)
    if dt > limit:
        raise StabilityError(dt, limit)
    grid = state.grid
    full, half, back = _factors(grid, float(dt))
    Y0 = state.stack()

    def N(Y):
        return _explicit(grid, Y, nonlinear, evolve_a)

    Y1 = full * (Y0 + dt * N(Y0))
    Y2 = 0.75 * half * Y0 + 0.25 * back * (Y1 + dt * N(Y1))
    Y3 = full * Y0 / 3.0 + (2.0 / 3.0) * half * (Y2 + dt * N(Y2))
    Y3[0], Y3[1] = project_coeffs(grid, Y3[0], Y3[1])
    Y3[2], Y3[3] = project_coeffs(grid, Y3[2], Y3[3])
    if not np.all(np.isfinite(Y3)):
        raise BlowUpError(state.t + dt, state.max_norms())
    return MHDState.from_stack(grid, Y3, state.t + dt)


# --- INITIAL DATA ---

def _zero_mean(v):
    return VectorField(v.x.without_mean(), v.y.without_mean())


def build_state(u0, H0, linear=False, t=0.0):
    """State with A0 (h0 + H0) = h0 built from a back-to-labels map.

    alpha = x + (gamma, beta): the second row of A0 is grad beta = (-H2, H1),
    and gamma solves det(I + A0) = 1 by fixed-point iteration. Periodic gamma
    forces the x1-average of the constraint to vanish, which fixes the
    x1-independent part of H1: that part is replaced by the shear s(x2) the
    constraint admits. With linear=True the constraint is linearized instead
    and H0 is kept as given.
    """
    grid = require_same_grid(u0.x, H0.x)
    u = _zero_mean(leray_project(u0))
    H = _zero_mean(leray_project(H0))
    scale = max(1.0, float(np.max(np.abs(transform_inverse(H.x)))), float(np.max(np.abs(transform_inverse(H.y)))))
    div = float(np.max(np.abs(transform_inverse(divergence(H)))))
    if not np.isfinite(div) or div > config.INIT_DIV_TOL * scale:
        raise InitializationError(f"H0 is not divergence-free after projection (max |div H0| = {div:.3e})")

    ik1 = 1j * grid.xi1
    ik2 = 1j * grid.xi2
    axis = np.broadcast_to(grid.m1 == 0, grid.shape)
    inv_ik1 = np.zeros(grid.shape, dtype=complex)
    inv_ik1[~axis] = 1.0 / ik1[~axis]

    if linear:
        gamma = -np.where(axis, 0.0, H.x.coeffs) * inv_ik1
        h1 = H.x.coeffs
        log_action("INIT", "linearized det constraint")
    else:
        h1p = ifft2(H.x.coeffs).real
        h2 = ifft2(H.y.coeffs).real
        g1 = np.zeros(grid.shape)
        g2 = np.zeros(grid.shape)
        s_hat = np.zeros(grid.shape, dtype=complex)
        gamma = np.zeros(grid.shape, dtype=complex)
        residual = 0.0 if not np.any(H.x.coeffs) and not np.any(H.y.coeffs) else np.inf
        iteration = 0
        while residual > config.INIT_DET_TARGET and iteration < config.INIT_MAX_ITER:
            iteration += 1
            n_hat = fft2(h1p + h1p * g1 + h2 * g2)
            s_hat = np.where(axis, -n_hat, 0.0)
            s = ifft2(s_hat).real
            gamma = (-np.where(axis, 0.0, n_hat) - fft2(s * g1)) * inv_ik1
            g1 = ifft2(ik1 * gamma).real
            g2 = ifft2(ik2 * gamma).real
            h1 = h1p + s
            residual = float(np.max(np.abs(g1 + h1 + h1 * g1 + h2 * g2)))
            if not np.isfinite(residual) or residual > 1e6:
                break
        if not residual <= config.INIT_DET_TOL:
            raise InitializationError(
                f"det(A0) = 1 not reached after {iteration} iterations (residual {residual:.3e}); "
                f"reduce init.amplitude")
        h1 = H.x.coeffs + s_hat
        log_action("INIT", f"det fixed point: {iteration} iterations, residual {residual:.2e}, "
                           f"shear correction {float(np.max(np.abs(s_hat))):.2e}")

    H = VectorField(SpectralField(grid, h1), H.y)
    A = MatrixField(
        SpectralField(grid, ik1 * gamma),
        SpectralField(grid, ik2 * gamma),
        -H.y,
        H.x.copy(),
    )
    return MHDState(u, H, A, t)


def eigen_fields(grid, branch, amplitude, rng, band):
    """(u, H) made of linear eigenmodes: every mode with |m1|, |m2| <= band gets a random phase."""
    if 2 * band >= min(grid.n1, grid.n2):
        raise ParameterRangeError("band < n/2", f"band={band}, grid={grid.shape}")
    stacked = np.zeros((4,) + grid.shape, dtype=complex)
    for m1 in range(0, band + 1):
        for m2 in range(-band, band + 1):
            if m1 == 0 and m2 <= 0:
                continue
            xi = (2.0 * np.pi * m1 / grid.length1, 2.0 * np.pi * m2 / grid.length2)
            vu, vh = eigenvector(xi, branch)
            r = np.hypot(*xi)
            perp = np.array([-xi[1] / r, xi[0] / r])
            c = np.exp(2j * np.pi * rng.random()) * np.concatenate([vu * perp, vh * perp])
            stacked[(slice(None),) + grid.mode_index(m1, m2)] = c
            stacked[(slice(None),) + grid.mode_index(-m1, -m2)] = np.conj(c)
    u = VectorField(SpectralField(grid, stacked[0]), SpectralField(grid, stacked[1]))
    H = VectorField(SpectralField(grid, stacked[2]), SpectralField(grid, stacked[3]))
    total = np.hypot(u.rms(), H.rms())
    if total == 0.0:
        return u, H
    return u * (amplitude / total), H * (amplitude / total)


def initial_fields(cfg, grid):
    kind = cfg.init_kind
    if kind == 'zero':
        return VectorField.zeros(grid), VectorField.zeros(grid)
    if kind == 'single_mode':
        return (solenoidal_mode(grid, *config.SINGLE_MODE_U, cfg.amplitude),
                solenoidal_mode(grid, *config.SINGLE_MODE_H, cfg.amplitude))
    rng = np.random.default_rng(cfg.seed)
    if kind == 'random':
        u = solenoidal_from_stream(random_field(grid, rng, cfg.band))
        H = solenoidal_from_stream(random_field(grid, rng, cfg.band))
        return scaled_to_rms(u, cfg.amplitude), scaled_to_rms(H, cfg.amplitude)
    branch = 'plus' if kind == 'eigen_plus' else 'minus'
    return eigen_fields(grid, branch, cfg.amplitude, rng, cfg.band)


def grid_for(cfg):
    return Grid(cfg.n1, cfg.n2, cfg.l1, cfg.l2)


def init_state(cfg):
    grid = grid_for(cfg)
    u0, H0 = initial_fields(cfg, grid)
    return build_state(u0, H0, linear=not cfg.nonlinear)


# --- RUNS ---

class Trajectory:
    """Snapshots of a run directory in step order, loaded on access."""

    def __init__(self, run_dir):
        self.run_dir = run_dir
        self.paths = sorted(glob.glob(os.path.join(run_dir, config.SNAPSHOT_GLOB)))

    def __len__(self):
        return len(self.paths)

    def __getitem__(self, index):
        grid, t, fields = read_snapshot(self.paths[index])
        return MHDState.from_fields(fields, t)

    def __iter__(self):
        for index in range(len(self.paths)):
            yield self[index]

    @property
    def truncated(self):
        return os.path.exists(os.path.join(self.run_dir, config.TRUNCATION_MARKER))

    def config(self):
        path = os.path.join(self.run_dir, config.CONFIG_ECHO_NAME)
        return config.load_config(path) if os.path.isfile(path) else None


@dataclass
class RunResult:
    trajectory: Trajectory
    ledger: NormLedger
    status: str
    report: Optional[str] = None
    error: Optional[Exception] = None

    @property
    def ok(self):
        return self.status == 'completed'

    @property
    def failure_stage(self):
        """None for a completed run; 'initialization' when no state was ever built, else 'integration'."""
        if self.ok:
            return None
        return _failure_stage(self.error)


def _failure_stage(error):
    return 'initialization' if isinstance(error, InitializationError) else 'integration'


def failure_report(cfg, error, ledger, state):
    lines = [
        "mhdlab run truncated",
        f"error: {type(error).__name__}: {error}",
        f"config: n={cfg.n1}x{cfg.n2} dt={cfg.dt!r} t_end={cfg.t_end!r} init={cfg.init_kind} "
        f"amplitude={cfg.amplitude!r} seed={cfg.seed}",
        f"stage: {_failure_stage(error)}",
    ]
    if state is not None:
        lines.append(f"last finite state: t={state.t:.6g}")
        for name, value in state.max_norms().items():
            lines.append(f"  {name:<8} {value:.6e}")
    if len(ledger):
        lines.append("last ledger row:")
        for name, value in ledger.last().items():
            lines.append(f"  {name:<18} {value:.6e}")
    if isinstance(error, InitializationError):
        lines.append("hint: the initial data is outside the perturbative regime; lower init.amplitude")
    elif isinstance(error, StabilityError):
        lines.append("hint: lower time.dt or the initial amplitude")
    return "\n".join(lines) + "\n"


def _clear_run_dir(run_dir):
    stale = glob.glob(os.path.join(run_dir, config.SNAPSHOT_GLOB))
    for name in (config.TRUNCATION_MARKER, config.FAILURE_REPORT_NAME):
        path = os.path.join(run_dir, name)
        if os.path.exists(path):
            stale.append(path)
    for path in stale:
        os.remove(path)
    return len(stale)


def run(cfg, progress_callback=None, strict=False):
    """Integrate cfg to t_end, writing snapshots and ledger rows every cadence steps.

    Failures keep the partial output, drop a truncation marker and a failure
    report next to it, and come back as status 'truncated' (re-raised when
    strict is set).
    """
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    previous_log = utils.LOG_FILE
    set_log_file(os.path.join(out, config.RUN_LOG_NAME))
    removed = _clear_run_dir(out)
    if removed:
        log_action("RUN", f"removed {removed} stale files from {out}")
    atomic_write(os.path.join(out, config.CONFIG_ECHO_NAME), cfg.to_text())
    log_action("RUN", f"start grid={cfg.n1}x{cfg.n2} dt={cfg.dt!r} t_end={cfg.t_end!r} init={cfg.init_kind} "
                      f"amplitude={cfg.amplitude!r} seed={cfg.seed} threads={thread_cap()}")
    ledger = NormLedger()
    monitor = XMonitor()
    steps = cfg.n_steps
    state = None
    result = None
    try:
        state = init_state(cfg)

        def record(current, n):
            write_snapshot(os.path.join(out, config.SNAPSHOT_PATTERN.format(n)), current.grid, current.t, current.fields())
            ledger.append(ledger_row(current, monitor))

        record(state, 0)
        for n in range(1, steps + 1):
            state = step(state, cfg.dt, cfg.nonlinear, cfg.evolve_a)
            state.t = n * cfg.dt
            if n % cfg.cadence == 0 or n == steps:
                record(state, n)
            if progress_callback:
                progress_callback(n, steps)
        log_action("RUN", f"completed {steps} steps, {len(ledger)} ledger rows")
        result = RunResult(Trajectory(out), ledger, 'completed')
    except MhdLabError as e:
        report = failure_report(cfg, e, ledger, state)
        atomic_write(os.path.join(out, config.TRUNCATION_MARKER), f"{type(e).__name__}: {e}\n")
        atomic_write(os.path.join(out, config.FAILURE_REPORT_NAME), report)
        log_action("FAILURE", f"{type(e).__name__}: {e}")
        if strict:
            raise
        result = RunResult(Trajectory(out), ledger, 'truncated', report, e)
    finally:
        ledger.write(os.path.join(out, config.LEDGER_NAME))
        set_log_file(previous_log)
    return result


def energy_balance(states):
    """E(t) - E(0) + int_0^t |grad u|^2 with E = (|u|^2 + |H|^2)/2; zero for the linear system."""
    states = list(states)
    times = np.array([s.t for s in states])
    energy = np.array([0.5 * (s.u.l2_norm() ** 2 + s.H.l2_norm() ** 2) for s in states])
    dissipation = np.array([
        sum(partial_derivative(c, j).l2_norm() ** 2 for c in (s.u.x, s.u.y) for j in (1, 2))
        for s in states
    ])
    return energy - energy[0] + cumulative_trapezoid(dissipation, times, initial=0.0)


# --- VERIFY ---

class Check(NamedTuple):
    name: str
    measured: float
    bound: float
    passed: bool


def _relative_deviation(stored, recomputed):
    scale = max(abs(stored), abs(recomputed))
    return abs(stored - recomputed) / scale if scale > 0 else 0.0


def verify_run(run_dir):
    """Recompute invariants and X(t) from the snapshots of run_dir and check them.

    Raises LedgerError when the ledger is missing or unreadable and
    MhdLabError subclasses for unreadable snapshots.
    """
    ledger = NormLedger.read(os.path.join(run_dir, config.LEDGER_NAME))
    trajectory = Trajectory(run_dir)
    if not len(trajectory):
        raise LedgerError(f"no snapshots in {run_dir}")
    cfg = trajectory.config()
    skips = set()
    if cfg is not None and not cfg.nonlinear:
        skips.update(config.LINEAR_RUN_SKIPS)
    if cfg is not None and not cfg.evolve_a:
        skips.update(config.FROZEN_A_SKIPS)

    monitor = XMonitor()
    recomputed = [ledger_row(state, monitor) for state in trajectory]
    checks = []
    for name, bound in config.REGRESSION_BOUNDS.items():
        if name in skips:
            continue
        worst = max(row[name] for row in recomputed)
        checks.append(Check(name, worst, bound, bool(worst <= bound)))

    checks.append(Check('ledger_rows', float(abs(len(ledger) - len(recomputed))), 0.0,
                        len(ledger) == len(recomputed)))
    deviation = 0.0
    for stored, row in zip(ledger.rows, recomputed):
        for name, value in zip(ledger.columns, stored):
            deviation = max(deviation, _relative_deviation(value, row[name]))
    checks.append(Check('ledger_match', deviation, config.LEDGER_MATCH_RTOL,
                        deviation <= config.LEDGER_MATCH_RTOL))

    x0 = recomputed[0]['X_t']
    window = [row['X_t'] for row in recomputed if row['t'] <= 1.0]
    growth = max(window) / x0 if x0 > 0 else max(window)
    bound = config.X_GROWTH_BOUND if x0 > 0 else 0.0
    checks.append(Check('x_growth', growth, bound, bool(growth <= bound)))
    checks.append(Check('completed', float(trajectory.truncated), 0.0, not trajectory.truncated))
    log_action("VERIFY", f"{run_dir}: " + ", ".join(f"{c.name}={'ok' if c.passed else 'FAIL'}" for c in checks))
    return checks
