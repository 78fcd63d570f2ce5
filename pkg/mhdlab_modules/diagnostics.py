"""Invariant monitors, derived fields, energy functionals and dissipation budgets.

Functions here take any state object exposing u, H (VectorField), A (the
MatrixField perturbation A - I) and t; trajectories are any ordered sequence
of such states.
"""
import csv
import io
import math
import os
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.integrate import trapezoid

from . import config
from .errors import LedgerError, ParameterRangeError, StructureError
from .littlewood_paley import (
    get_layout, block_norms, hat_besov_norm, hybrid_norm, regime_of,
)
from .spectral import (
    SpectralField, VectorField, transform_inverse,
    partial_derivative, lambda_power, laplacian, curl, divergence,
    exact_product, advection, riesz1,
)
from .utils import atomic_write, log_action


# --- LEDGER ---

class NormLedger:
    """Rows of named, finite values with strictly increasing t."""

    def __init__(self, columns=config.LEDGER_COLUMNS):
        self.columns = tuple(columns)
        self.rows = []

    def __len__(self):
        return len(self.rows)

    def append(self, values):
        row = tuple(float(values[name]) for name in self.columns)
        bad = [name for name, v in zip(self.columns, row) if not math.isfinite(v)]
        if bad:
            raise LedgerError(f"non-finite ledger values: {', '.join(bad)}")
        if self.rows and row[0] <= self.rows[-1][0]:
            raise LedgerError(f"t must increase: {row[0]!r} after {self.rows[-1][0]!r}")
        self.rows.append(row)
        return row

    def column(self, name):
        index = self.columns.index(name)
        return np.array([row[index] for row in self.rows])

    def last(self):
        return dict(zip(self.columns, self.rows[-1])) if self.rows else {}

    def to_csv(self):
        lines = [",".join(self.columns)]
        for row in self.rows:
            lines.append(",".join("%.17g" % v for v in row))
        return "\n".join(lines) + "\n"

    def write(self, path):
        return atomic_write(path, self.to_csv())

    @classmethod
    def read(cls, path):
        if not os.path.isfile(path):
            raise LedgerError(f"ledger not found: {path}")
        with open(path, 'r', newline='') as f:
            reader = csv.reader(f)
            try:
                header = next(reader)
            except StopIteration:
                raise LedgerError(f"{path}: empty ledger") from None
            ledger = cls(header)
            for lineno, fields in enumerate(reader, 2):
                if len(fields) != len(header):
                    raise LedgerError(f"{path}:{lineno}: expected {len(header)} values, got {len(fields)}")
                try:
                    values = {name: float(v) for name, v in zip(header, fields)}
                except ValueError as e:
                    raise LedgerError(f"{path}:{lineno}: {e}") from None
                ledger.append(values)
        return ledger


# --- REAL-SPACE HELPERS ---

def _real(f):
    return transform_inverse(f)


def _max_abs(*arrays):
    return max(float(np.max(np.abs(a))) for a in arrays)


def _det_perturbation(A):
    """det(A_pert) via padded products."""
    return exact_product(A.a11, A.a22) - exact_product(A.a12, A.a21)


# --- INVARIANTS ---

def frozen_in_residual(state):
    a11, a12, a21, a22 = (_real(e) for e in state.A.entries())
    b1 = 1.0 + _real(state.H.x)
    b2 = _real(state.H.y)
    return _max_abs((1.0 + a11) * b1 + a12 * b2 - 1.0, a21 * b1 + (1.0 + a22) * b2)


def det_residual(state):
    a11, a12, a21, a22 = (_real(e) for e in state.A.entries())
    return _max_abs((1.0 + a11) * (1.0 + a22) - a12 * a21 - 1.0)


def gradient_structure_residual(A):
    rows = []
    for i in (1, 2):
        row = A.row(i)
        rows.append(_real(partial_derivative(row.x, 2) - partial_derivative(row.y, 1)))
    return _max_abs(*rows)


def coupling_residual(state):
    return _max_abs(_real(state.H.x - state.A.a22), _real(state.H.y + state.A.a21))


def trace_det_residual(A):
    return _max_abs(_real(A.a11 + A.a22 + _det_perturbation(A)))


def det_coupling_residual(state):
    """max |det(A_pert) - (A11 H1 + A12 H2)|, pointwise."""
    a11, a12, a21, a22 = (_real(e) for e in state.A.entries())
    h1, h2 = _real(state.H.x), _real(state.H.y)
    return _max_abs(a11 * a22 - a12 * a21 - (a11 * h1 + a12 * h2))


def invariant_residuals(state):
    return {
        'frozen_in_resid': frozen_in_residual(state),
        'det_resid': det_residual(state),
        'grad_struct_resid': gradient_structure_residual(state.A),
        'coupling_resid': coupling_residual(state),
        'div_u': _max_abs(_real(divergence(state.u))),
        'div_h': _max_abs(_real(divergence(state.H))),
        'trace_det_resid': trace_det_residual(state.A),
    }


# --- VORTICITY ---

def vorticity(state):
    u = getattr(state, 'u', state)
    return lambda_power(curl(u), -1.0)


def alfven_identity_residual(H):
    """max |Lambda^-1 curl(d1 H) - Lambda H2| for divergence-free H."""
    lhs = lambda_power(curl(VectorField(partial_derivative(H.x, 1), partial_derivative(H.y, 1))), -1.0)
    return _max_abs(_real(lhs - lambda_power(H.y, 1.0)))


def vorticity_forcing(state, nonlinear=True):
    """Lambda H2 + Lambda^-1 curl(H.grad H - u.grad u), the right side of the vorticity equation."""
    forcing = lambda_power(state.H.y, 1.0)
    if nonlinear:
        stress = advection(state.H, state.H) - advection(state.u, state.u)
        forcing = forcing + lambda_power(curl(stress), -1.0)
    return forcing


def vorticity_equation_residual(states, nonlinear=True):
    """RMS over grid and snapshots of d_t w - Delta w - Lambda H2 - Lambda^-1 curl(H.grad H - u.grad u)."""
    states = list(states)
    if len(states) < 3:
        raise ParameterRangeError("at least 3 snapshots", f"got {len(states)}")
    times = np.array([s.t for s in states])
    omegas = [vorticity(s) for s in states]
    stack = np.array([w.coeffs for w in omegas])
    rate = np.gradient(stack, times, axis=0, edge_order=2)
    total = 0.0
    for index, (state, omega) in enumerate(zip(states, omegas)):
        rest = laplacian(omega) + vorticity_forcing(state, nonlinear)
        residual = _real(SpectralField(omega.grid, rate[index]) - rest)
        total += float(np.mean(residual ** 2))
    return math.sqrt(total / len(states))


# --- PRESSURE-FREE DISSIPATION IDENTITY ---

def _check_structure(A):
    structure = gradient_structure_residual(A)
    if structure > config.STRUCTURE_TOL:
        raise StructureError("rows of A are gradients", structure)
    a11, a12, a21, a22 = (_real(e) for e in A.entries())
    volume = _max_abs((1.0 + a11) * (1.0 + a22) - a12 * a21 - 1.0)
    if volume > config.STRUCTURE_TOL:
        raise StructureError("det A = 1", volume)


def _identity_terms(A, weight=None):
    """(|grad H|^2, -(d1 H | div A), -sum_j (d_j det A | d_j H1)) with H read off A."""
    grid = A.grid
    h1, h2 = A.a22, -A.a21
    det = _det_perturbation(A)
    w = 1.0 if weight is None else weight

    def inner(f, g):
        return grid.area * float(np.real(np.sum((w * f.coeffs) * np.conj(w * g.coeffs))))

    lhs = sum(inner(partial_derivative(h, j), partial_derivative(h, j)) for h in (h1, h2) for j in (1, 2))
    div_a = (partial_derivative(A.a11, 1) + partial_derivative(A.a12, 2),
             partial_derivative(A.a21, 1) + partial_derivative(A.a22, 2))
    transport = -(inner(partial_derivative(h1, 1), div_a[0]) + inner(partial_derivative(h2, 1), div_a[1]))
    volume = -sum(inner(partial_derivative(det, j), partial_derivative(h1, j)) for j in (1, 2))
    return lhs, transport, volume


def dissipation_identity_residual(A, check_hypotheses=True):
    """Relative mismatch of |grad H|^2 = -(d1 H | div A) - sum_j (d_j det A | d_j H1).

    A is the perturbation A - I; H1 = A22 and H2 = -A21. The identity needs
    gradient rows and det(I + A) = 1.
    """
    if check_hypotheses:
        _check_structure(A)
    lhs, transport, volume = _identity_terms(A)
    return abs(lhs - (transport + volume)) / max(lhs, np.finfo(float).tiny)


class LocalizedDissipation(NamedTuple):
    lhs: float
    transport: float
    volume: float


def localized_dissipation(A, q, k, layout=None):
    layout = layout or get_layout(A.grid)
    return LocalizedDissipation(*_identity_terms(A, layout.block_weight(q, k)))


# --- ENERGY FUNCTIONALS ---

@dataclass
class EnergyFunctionalParams:
    iota: float = config.DEFAULT_IOTA

    def validate(self, layout):
        threshold = iota_threshold(layout)
        if not 0.0 < self.iota < threshold:
            raise ParameterRangeError("0 < iota < positivity threshold", f"iota={self.iota}, threshold={threshold:.6g}")
        return threshold


def iota_threshold(layout):
    """Largest iota keeping every regime-1 quadratic form positive definite on this layout."""
    threshold = math.inf
    for q, k in layout.blocks:
        if regime_of(q, k) != 1:
            continue
        support = layout.block_weight(q, k) > 0
        top = float(np.max(np.abs(layout.grid.xi1[support])))
        if top > 0:
            threshold = min(threshold, 2.0 ** (2 * k - 2 * q) / top)
    return threshold


class FunctionalValue(NamedTuple):
    value: float
    regime: int
    active: bool


def _block_inner(grid, w, f, g):
    return grid.area * float(np.real(np.sum((w * f.coeffs) * np.conj(w * g.coeffs))))


def _vector_inner(grid, w, v, z):
    return _block_inner(grid, w, v.x, z.x) + _block_inner(grid, w, v.y, z.y)


def _map(v, op):
    return VectorField(op(v.x), op(v.y))


def energy_functional(state, q, k, params=None, layout=None):
    params = params or EnergyFunctionalParams()
    grid = state.u.grid
    layout = layout or get_layout(grid)
    regime = regime_of(q, k)
    if (q, k) not in layout.blocks:
        return FunctionalValue(0.0, regime, False)
    w = layout.block_weight(q, k)
    u, v = state.u, state.H
    dv = _map(v, lambda c: partial_derivative(c, 1))
    if regime == 1:
        cross = params.iota * 2.0 ** (2 * q - 2 * k + 1) * _vector_inner(grid, w, u, dv)
        square = _vector_inner(grid, w, u, u) + _vector_inner(grid, w, v, v) - cross
    else:
        ru = _map(u, lambda c: riesz1(riesz1(c)))
        square = (2.0 * _vector_inner(grid, w, ru, ru) + _vector_inner(grid, w, dv, dv)
                  + 2.0 * _vector_inner(grid, w, ru, dv))
    return FunctionalValue(math.sqrt(max(square, 0.0)), regime, True)


def functional_rows(state, params=None, layout=None):
    layout = layout or get_layout(state.u.grid)
    return [(q, k, *energy_functional(state, q, k, params, layout)[:2]) for q, k in layout.blocks]


# --- TIME QUADRATURE ---

def quadrature_error(times, values):
    """|trapezoid at spacing h - trapezoid at 2h| over the longest odd-length prefix."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    m = len(times) if len(times) % 2 else len(times) - 1
    if m < 3:
        return 0.0
    fine = trapezoid(values[:m], times[:m])
    coarse = trapezoid(values[:m:2], times[:m:2])
    return abs(fine - coarse)


class XMonitor:
    """Running X(t): sup-in-time pieces and trapezoid integrals over the rows seen so far."""

    def __init__(self, layout=None):
        self.layout = layout
        self.sup_a = 0.0
        self.sup_u = 0.0
        self.sup_h = 0.0
        self.int_u = 0.0
        self.int_h_sq = 0.0
        self._last = None

    def update(self, state):
        layout = self.layout or get_layout(state.u.grid)
        norms = {
            'hatB0_u': hat_besov_norm(state.u, 0.0, layout),
            'hybrid01_h': hybrid_norm(state.H, 0.0, 1.0, layout),
            'hatB1_A': hat_besov_norm(state.A, 1.0, layout),
            'hatB2_u': hat_besov_norm(state.u, 2.0, layout),
            'hatB1_h': hat_besov_norm(state.H, 1.0, layout),
        }
        self.sup_a = max(self.sup_a, norms['hatB1_A'])
        self.sup_u = max(self.sup_u, norms['hatB0_u'])
        self.sup_h = max(self.sup_h, norms['hybrid01_h'])
        if self._last is not None:
            t0, u2, h1 = self._last
            step = state.t - t0
            self.int_u += 0.5 * step * (u2 + norms['hatB2_u'])
            self.int_h_sq += 0.5 * step * (h1 ** 2 + norms['hatB1_h'] ** 2)
        self._last = (state.t, norms['hatB2_u'], norms['hatB1_h'])
        norms['X_t'] = self.value
        return norms

    @property
    def value(self):
        return self.sup_a + self.sup_u + self.sup_h + self.int_u + math.sqrt(self.int_h_sq)


def ledger_row(state, monitor):
    norms = monitor.update(state)
    row = {
        't': state.t,
        'l2_u': state.u.l2_norm(),
        'l2_h': state.H.l2_norm(),
        'hatB0_u': norms['hatB0_u'],
        'hybrid01_h': norms['hybrid01_h'],
        'hatB1_A': norms['hatB1_A'],
        'X_t': norms['X_t'],
    }
    row.update(invariant_residuals(state))
    return row


class XSeries(NamedTuple):
    times: np.ndarray
    values: np.ndarray


def x_of_t(states, layout=None):
    monitor = XMonitor(layout)
    times, values = [], []
    for state in states:
        monitor.update(state)
        times.append(state.t)
        values.append(monitor.value)
    return XSeries(np.array(times), np.array(values))


# --- DISSIPATION BUDGET ---

class BudgetRow(NamedTuple):
    t: float
    u_hatB2: float
    h_regime1: float
    h_regime2: float
    h_hatB1_sq: float
    rhs: float
    ratio: float


def _dissipation_sums(H, layout):
    """(sum_{k+1>=2q} 2^{2q}|D_q D_k H|, sum_{k+1<2q} |D_q D_k d1 H|) at one instant."""
    plain = block_norms(H, layout)
    dx1 = block_norms(_map(H, lambda c: partial_derivative(c, 1)), layout)
    first = sum(4.0 ** q * value for (q, k), value in plain.items() if regime_of(q, k) == 1)
    second = sum(value for (q, k), value in dx1.items() if regime_of(q, k) == 2)
    return first, second


def dissipation_budget(states, layout=None):
    """Cumulative budget rows: the left side |H|^2_{L^2_t(B-hat^1)} against
    sup|H|_{B-tilde^{0,1}} * int(regime-1 sum) + sup|A|_{B-hat^1} * int(regime-2 sum)."""
    rows = []
    previous = None
    totals = [0.0, 0.0, 0.0, 0.0]
    sup_h = sup_a = 0.0
    for state in states:
        layout = layout or get_layout(state.u.grid)
        current = (
            hat_besov_norm(state.u, 2.0, layout),
            *_dissipation_sums(state.H, layout),
            hat_besov_norm(state.H, 1.0, layout) ** 2,
        )
        sup_h = max(sup_h, hybrid_norm(state.H, 0.0, 1.0, layout))
        sup_a = max(sup_a, hat_besov_norm(state.A, 1.0, layout))
        if previous is not None:
            step = state.t - previous[0]
            totals = [acc + 0.5 * step * (a + b) for acc, a, b in zip(totals, previous[1], current)]
        previous = (state.t, current)
        rhs = sup_h * totals[1] + sup_a * totals[2]
        ratio = totals[3] / rhs if rhs > 0 else 0.0
        rows.append(BudgetRow(state.t, *totals, rhs, ratio))
    return rows


# --- REPORTS ---

def _csv_text(header, rows):
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buffer.getvalue()


def gnuplot_script(ledger_name=config.LEDGER_NAME):
    residuals = ('frozen_in_resid', 'det_resid', 'grad_struct_resid', 'coupling_resid', 'div_u', 'div_h')
    columns = config.LEDGER_COLUMNS
    plots = ", \\\n     ".join(
        f"'{ledger_name}' using 1:{columns.index(name) + 1} with lines title '{name}'" for name in residuals)
    return (
        "set datafile separator ','\n"
        "set key autotitle columnhead\n"
        "set logscale y\n"
        "set xlabel 't'\n"
        "set terminal pngcairo size 1000,600\n"
        "set output 'residuals.png'\n"
        f"plot {plots}\n"
        "unset logscale y\n"
        "set output 'x_of_t.png'\n"
        f"plot '{ledger_name}' using 1:{columns.index('X_t') + 1} with lines title 'X(t)'\n"
    )


def summary_report(ledger, budget, x_series, quad_error):
    lines = ["mhdlab run summary", ""]
    if len(ledger):
        lines.append(f"rows: {len(ledger)}   t: {ledger.rows[0][0]:.6g} .. {ledger.rows[-1][0]:.6g}")
        lines.append("")
        lines.append("invariant maxima")
        for name in ('frozen_in_resid', 'det_resid', 'grad_struct_resid', 'coupling_resid', 'div_u', 'div_h'):
            lines.append(f"  {name:<18} {np.max(ledger.column(name)):.3e}")
    if budget:
        last = budget[-1]
        lines.append("")
        lines.append("dissipation budget (cumulative at final row)")
        for name, value in zip(BudgetRow._fields, last):
            lines.append(f"  {name:<18} {value:.6e}")
        lines.append(f"  {'quadrature_error':<18} {quad_error:.3e}")
    if len(x_series.times):
        lines.append("")
        lines.append(f"X(0) = {x_series.values[0]:.6e}")
        lines.append(f"X(t_end) = {x_series.values[-1]:.6e}")
        if x_series.values[0] > 0:
            lines.append(f"X(t_end)/X(0) = {x_series.values[-1] / x_series.values[0]:.6f}")
    return "\n".join(lines) + "\n"


def write_report(run_dir, states, ledger, params=None):
    """Summary text, block tables for u and H, functionals and a gnuplot script; returns written paths."""
    states = list(states)
    written = []
    budget = dissipation_budget(states)
    series = x_of_t(states)
    quad = quadrature_error([r.t for r in budget], [hat_besov_norm(s.u, 2.0) for s in states]) if states else 0.0
    files = {config.SUMMARY_NAME: summary_report(ledger, budget, series, quad)}
    if states:
        final = states[-1]
        layout = get_layout(final.u.grid)
        files[config.BUDGET_NAME] = _csv_text(BudgetRow._fields, budget)
        for name, field in ((config.BLOCKS_U_NAME, final.u), (config.BLOCKS_H_NAME, final.H)):
            rows = [(q, k, value, regime_of(q, k)) for (q, k), value in sorted(block_norms(field, layout).items())]
            files[name] = _csv_text(config.BLOCK_COLUMNS, rows)
        files[config.FUNCTIONALS_NAME] = _csv_text(('q', 'k', 'value', 'regime'), functional_rows(final, params, layout))
    files[config.GNUPLOT_NAME] = gnuplot_script()
    for name, text in files.items():
        path = os.path.join(run_dir, name)
        if atomic_write(path, text):
            written.append(path)
    log_action("REPORT", f"{run_dir}: {len(written)} files")
    return written
