"""Per-mode analysis of the linearized system du/dt = Delta u + d1 H, dH/dt = d1 u.

With the transform convention of spectral.py (d/dx -> +i xi) a mode evolves by
the matrix [[-|xi|^2, i xi1], [i xi1, 0]], i.e. symbol(-xi). Both share the
eigenvalues lambda^2 + |xi|^2 lambda + xi1^2 = 0.
"""
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import config
from .errors import DecayFitError, DegenerateModeError

PARABOLIC = "Parabolic"
DAMPED = "Damped"

# |delta t| below this switches sinh(delta t)/delta to its Taylor series
_SERIES_CUTOFF = 1e-3


def _split(xi):
    xi1, xi2 = float(xi[0]), float(xi[1])
    return xi1, xi2, xi1 * xi1 + xi2 * xi2


def symbol(xi):
    xi1, _, r2 = _split(xi)
    return np.array([[-r2, -1j * xi1], [-1j * xi1, 0.0]], dtype=complex)


def eigenvalues(xi):
    xi1, _, r2 = _split(xi)
    if r2 == 0.0:
        raise DegenerateModeError(tuple(xi))
    radicand = r2 * r2 - 4.0 * xi1 * xi1
    if radicand >= 0.0:
        lp = -0.5 * (r2 + math.sqrt(radicand))
        # product form avoids cancellation in the small root
        lm = xi1 * xi1 / lp
        return complex(lp), complex(lm)
    root = math.sqrt(-radicand)
    return complex(-0.5 * r2, -0.5 * root), complex(-0.5 * r2, 0.5 * root)


def regime(xi):
    xi1, _, r2 = _split(xi)
    if r2 == 0.0:
        raise DegenerateModeError(tuple(xi))
    return PARABOLIC if 2.0 * abs(xi1) >= r2 else DAMPED


def eigenvector(xi, branch='plus'):
    """Unit eigenvector (u, H) of the evolution matrix for lambda_plus or lambda_minus."""
    xi1, _, _ = _split(xi)
    if branch not in ('plus', 'minus'):
        raise ValueError(f"branch must be 'plus' or 'minus', got {branch!r}")
    lp, lm = eigenvalues(xi)
    if xi1 == 0.0:
        return np.array([1.0, 0.0], dtype=complex) if branch == 'plus' else np.array([0.0, 1.0], dtype=complex)
    lam = lp if branch == 'plus' else lm
    v = np.array([lam, 1j * xi1], dtype=complex)
    return v / np.linalg.norm(v)


@dataclass
class ModeReport:
    xi: tuple
    lambda_plus: complex
    lambda_minus: complex
    regime: str
    measured_rate: Optional[complex] = None
    fit_residual: float = 0.0


def mode_report(xi, fit=None):
    lp, lm = eigenvalues(xi)
    report = ModeReport(tuple(float(x) for x in xi), lp, lm, regime(xi))
    if fit is not None:
        report.measured_rate = fit.rate
        report.fit_residual = fit.residual
    return report


# --- PROPAGATOR ---

def propagator_coefficients(xi1, xi_sq, t):
    """Entries (p11, p12, p21, p22) of exp(t M) per mode, M the evolution matrix."""
    xi1 = np.asarray(xi1, dtype=float)
    xi_sq = np.asarray(xi_sq, dtype=float)
    half = -0.5 * xi_sq
    delta = np.sqrt((0.25 * xi_sq * xi_sq - xi1 * xi1).astype(complex))
    grow = np.exp((half + delta) * t)
    fade = np.exp((half - delta) * t)
    cosh_part = 0.5 * (grow + fade)
    dt_ = delta * t
    small = np.abs(dt_) < _SERIES_CUTOFF
    safe_delta = np.where(small, 1.0, delta)
    sinh_part = np.where(
        small,
        np.exp(half * t) * t * (1.0 + dt_ ** 2 / 6.0 + dt_ ** 4 / 120.0),
        (grow - fade) / (2.0 * safe_delta),
    )
    p11 = cosh_part - 0.5 * xi_sq * sinh_part
    p12 = 1j * xi1 * sinh_part
    p22 = cosh_part + 0.5 * xi_sq * sinh_part
    return p11, p12, p12, p22


def propagate_linear(grid, u0, v0, t):
    """Exact linear evolution of coefficient arrays u0 (velocity) and v0 (magnetic) over time t."""
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    p11, p12, p21, p22 = propagator_coefficients(grid.xi1, grid.xi_sq, t)
    u0 = np.asarray(u0, dtype=complex)
    v0 = np.asarray(v0, dtype=complex)
    u = p11 * u0 + p12 * v0
    v = p21 * u0 + p22 * v0
    # mode zero is frozen
    u[..., 0, 0] = u0[..., 0, 0]
    v[..., 0, 0] = v0[..., 0, 0]
    return u, v


# --- DECAY FITS ---

@dataclass
class DecayFit:
    rate: complex
    residual: float
    samples: int
    truncated: bool = False


def fit_decay(times, amplitudes):
    """Least-squares growth rate of a complex series a(t) ~ c exp(rate t)."""
    times = np.asarray(times, dtype=float)
    amplitudes = np.asarray(amplitudes, dtype=complex)
    if times.shape != amplitudes.shape or times.ndim != 1:
        raise DecayFitError(f"times and amplitudes must be 1-d of equal length, got {times.shape} and {amplitudes.shape}")
    magnitude = np.abs(amplitudes)
    truncated = False
    tiny = np.nonzero(magnitude < config.FIT_UNDERFLOW)[0]
    if tiny.size:
        cut = int(tiny[0])
        times, amplitudes, magnitude = times[:cut], amplitudes[:cut], magnitude[:cut]
        truncated = True
    if times.size < config.FIT_MIN_SAMPLES:
        raise DecayFitError(f"need at least {config.FIT_MIN_SAMPLES} samples above {config.FIT_UNDERFLOW:g}, have {times.size}")
    log_mag = np.log(magnitude)
    phase = np.unwrap(np.angle(amplitudes))
    re_coef = np.polyfit(times, log_mag, 1)
    im_coef = np.polyfit(times, phase, 1)
    res_re = log_mag - np.polyval(re_coef, times)
    res_im = phase - np.polyval(im_coef, times)
    residual = float(np.sqrt(np.mean(res_re ** 2 + res_im ** 2)))
    return DecayFit(complex(re_coef[0], im_coef[0]), residual, int(times.size), truncated)


# --- DISPERSION MAP ---

def eigenvalue_arrays(grid):
    """Vectorized lambda_plus, lambda_minus over the grid; zero mode entries are 0."""
    xi1 = grid.xi1
    r2 = grid.xi_sq
    radicand = r2 * r2 - 4.0 * xi1 * xi1
    real = radicand >= 0.0
    lp = np.empty(grid.shape, dtype=complex)
    lm = np.empty(grid.shape, dtype=complex)
    root = np.sqrt(np.abs(radicand))
    lp[real] = -0.5 * (r2[real] + root[real])
    lp[~real] = -0.5 * r2[~real] - 0.5j * root[~real]
    lm[~real] = -0.5 * r2[~real] + 0.5j * root[~real]
    with np.errstate(divide='ignore', invalid='ignore'):
        lm[real] = xi1[real] ** 2 / lp[real]
    lp[0, 0] = 0.0
    lm[0, 0] = 0.0
    return lp, lm


def dispersion_rows(grid):
    """(xi1, xi2, re_lp, im_lp, re_lm, im_lm, regime) for every nonzero mode."""
    lp, lm = eigenvalue_arrays(grid)
    parabolic = 2.0 * np.abs(grid.xi1) >= grid.xi_sq
    rows = []
    for i in range(grid.n1):
        for j in range(grid.n2):
            if i == 0 and j == 0:
                continue
            rows.append((
                float(grid.xi1[i, j]), float(grid.xi2[i, j]),
                lp[i, j].real, lp[i, j].imag, lm[i, j].real, lm[i, j].imag,
                PARABOLIC if parabolic[i, j] else DAMPED,
            ))
    return rows


def parabolic_count_estimate(grid):
    """Expected number of Parabolic grid modes: area 2*pi of the two unit disks over the mode cell area."""
    cell = (2.0 * math.pi / grid.length1) * (2.0 * math.pi / grid.length2)
    return 2.0 * math.pi / cell


def dispersion_csv(rows):
    lines = [",".join(config.DISPERSION_COLUMNS)]
    for xi1, xi2, a, b, c, d, kind in rows:
        lines.append(f"{xi1!r},{xi2!r},{a!r},{b!r},{c!r},{d!r},{kind}")
    return "\n".join(lines) + "\n"


def check_dispersion_identities(rows):
    """Largest relative deviation of lambda_plus + lambda_minus = -|xi|^2 and lambda_plus * lambda_minus = xi1^2."""
    worst = 0.0
    for xi1, xi2, a, b, c, d, _ in rows:
        r2 = xi1 * xi1 + xi2 * xi2
        lp, lm = complex(a, b), complex(c, d)
        worst = max(worst, abs(lp + lm + r2) / r2, abs(lp * lm - xi1 * xi1) / (r2 * r2))
    return worst


def rate_error(expected, measured):
    """Relative errors (real part, imaginary part); absolute when the expected part is zero."""
    def rel(a, b):
        return abs(a - b) / abs(a) if a != 0 else abs(b)
    return rel(expected.real, measured.real), rel(expected.imag, measured.imag)
