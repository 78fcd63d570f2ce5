"""Dyadic blocks, Besov-type norms and Bony's paraproduct on the periodic grid.

Isotropic shells q use psi(2^-q xi), anisotropic shells k use the same profile
on |xi1| alone. Modes with xi1 = 0 cannot be covered by the one-dimensional
homogeneous decomposition: they form a separate bucket that B-hat and
B-tilde sums leave out (see axis_bucket_norm).
"""
import csv
import io
import math
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from . import config
from .errors import GridMismatchError, NonZeroMeanError, ParameterRangeError
from .spectral import (
    SpectralField, VectorField, MatrixField, require_same_grid, pad, padded_product,
    exact_product, partial_derivative, gradient, evaluate_symbol, fft2, ifft2,
    transform_inverse,
)
from .utils import atomic_write


def _smoothstep(x):
    return x * x * x * (10.0 - 15.0 * x + 6.0 * x * x)


class BumpFunction:
    """Radial profile rho: 1 on [1, 2], 0 outside (5/6, 12/5), C2 quintic edges."""

    inner = 5.0 / 6.0
    plateau = (1.0, 2.0)
    outer = 12.0 / 5.0

    def rho(self, r):
        r = np.asarray(r, dtype=float)
        out = np.zeros(r.shape)
        lo, hi = self.plateau
        out[(r >= lo) & (r <= hi)] = 1.0
        rise = (r > self.inner) & (r < lo)
        out[rise] = _smoothstep((r[rise] - self.inner) / (lo - self.inner))
        fall = (r > hi) & (r < self.outer)
        out[fall] = _smoothstep((self.outer - r[fall]) / (self.outer - hi))
        return out

    def index_range(self, r_min, r_max):
        lo = math.floor(math.log2(r_min / self.outer))
        hi = math.ceil(math.log2(r_max / self.inner))
        return range(lo, hi + 1)

    def normalizer(self, r):
        r = np.asarray(r, dtype=float)
        total = np.zeros(r.shape)
        positive = r > 0
        if not positive.any():
            return total
        for j in self.index_range(r[positive].min(), r[positive].max()):
            total += self.rho(r * 2.0 ** (-j))
        return total

    def weights(self, r):
        """Shell index -> rho(2^-q r) / sum_j rho(2^-j r), for every shell touching r > 0."""
        r = np.asarray(r, dtype=float)
        positive = r > 0
        out = {}
        if not positive.any():
            return out
        norm = self.normalizer(r)
        for q in self.index_range(r[positive].min(), r[positive].max()):
            w = np.zeros(r.shape)
            w[positive] = self.rho(r[positive] * 2.0 ** (-q)) / norm[positive]
            if np.any(w > 0):
                out[q] = w
        return out


def _frozen(a):
    a = np.array(a)
    a.setflags(write=False)
    return a


def regime_of(q, k):
    return 1 if k + 1 >= 2 * q else 2


class DyadicLayout:
    """Active shells of a grid with their tabulated weights (read-only)."""

    def __init__(self, grid, bump=None):
        self.grid = grid
        self.bump = bump or BumpFunction()
        shell = self.bump.weights(grid.abs_xi)
        x1 = self.bump.weights(np.abs(grid.xi1[:, 0]))
        self._shell = {q: _frozen(w) for q, w in shell.items()}
        self._x1 = {k: _frozen(w) for k, w in x1.items()}
        self.shells = tuple(sorted(self._shell))
        self.x1_shells = tuple(sorted(self._x1))
        self.axis_mask = _frozen((grid.xi1 == 0) & (grid.abs_xi > 0))
        self._zero = _frozen(np.zeros(grid.shape))
        self._zero1 = _frozen(np.zeros(grid.n1))
        blocks = []
        for q in self.shells:
            rows = (self._shell[q] > 0).any(axis=1)
            for k in self.x1_shells:
                if np.any(rows & (self._x1[k] > 0)):
                    blocks.append((q, k))
        self.blocks = tuple(blocks)

    def shell_weight(self, q):
        return self._shell.get(q, self._zero)

    def x1_weight(self, k):
        """Weights along axis 0 only (shape (n1,)); broadcast with [:, None]."""
        return self._x1.get(k, self._zero1)

    def block_weight(self, q, k):
        return self.shell_weight(q) * self.x1_weight(k)[:, None]

    def regime(self, q, k):
        return regime_of(q, k)

    def shell_range(self):
        if not self.shells:
            return range(0)
        return range(self.shells[0], self.shells[-1] + 1)


@lru_cache(maxsize=16)
def get_layout(grid):
    return DyadicLayout(grid)


def _layout_for(grid, layout):
    if layout is None:
        return get_layout(grid)
    if layout.grid != grid:
        raise GridMismatchError(1, layout.grid.n1, grid.n1)
    return layout


def _components(f):
    if isinstance(f, SpectralField):
        return [f]
    if isinstance(f, VectorField):
        return [f.x, f.y]
    if isinstance(f, MatrixField):
        return list(f.entries())
    items = []
    for item in f:
        items.extend(_components(item))
    return items


def _power(f, check_mean=True):
    """Grid and summed |c|^2 over all components of a scalar, vector or matrix field."""
    parts = _components(f)
    grid = require_same_grid(*parts)
    power = np.zeros(grid.shape)
    for part in parts:
        sq = np.abs(part.coeffs) ** 2
        if check_mean:
            mean = abs(part.coeffs[0, 0])
            if mean > 0 and mean > config.MEAN_TOL * math.sqrt(sq.sum()):
                raise NonZeroMeanError(mean)
        power += sq
    return grid, power


# --- BLOCKS ---

def block(f, q, layout=None):
    layout = _layout_for(f.grid, layout)
    return SpectralField(f.grid, f.coeffs * layout.shell_weight(q))


def block_x1(f, k, layout=None):
    layout = _layout_for(f.grid, layout)
    return SpectralField(f.grid, f.coeffs * layout.x1_weight(k)[:, None])


def block_qk(f, q, k, layout=None):
    layout = _layout_for(f.grid, layout)
    return SpectralField(f.grid, f.coeffs * layout.block_weight(q, k))


def lowpass(f, q, layout=None):
    layout = _layout_for(f.grid, layout)
    weight = np.zeros(f.grid.shape)
    for p in layout.shells:
        if p <= q - 1:
            weight += layout.shell_weight(p)
    return SpectralField(f.grid, f.coeffs * weight)


def axis_part(f, layout=None):
    layout = _layout_for(f.grid, layout)
    return SpectralField(f.grid, f.coeffs * layout.axis_mask)


# --- NORMS ---

def shell_norms(f, layout=None, check_mean=True):
    grid, power = _power(f, check_mean)
    layout = _layout_for(grid, layout)
    return {q: math.sqrt(grid.area * np.sum(layout.shell_weight(q) ** 2 * power))
            for q in layout.shells}


def block_norms(f, layout=None, check_mean=True):
    """L2 norm of every active block Delta_q Delta^1_k f, keyed by (q, k)."""
    grid, power = _power(f, check_mean)
    layout = _layout_for(grid, layout)
    table = {}
    active = set(layout.blocks)
    for q in layout.shells:
        rows = np.sum(layout.shell_weight(q) ** 2 * power, axis=1)
        for k in layout.x1_shells:
            if (q, k) in active:
                table[(q, k)] = math.sqrt(grid.area * np.sum(rows * layout.x1_weight(k) ** 2))
    return table


def besov_norm(f, s, layout=None):
    return sum(2.0 ** (q * s) * value for q, value in shell_norms(f, layout).items())


def hat_besov_norm(f, s, layout=None):
    """Sum over active blocks; xi1 = 0 content is left to axis_bucket_norm, and hat + bucket >= besov_norm."""
    return sum(2.0 ** (q * s) * value for (q, k), value in block_norms(f, layout).items())


def hybrid_weight(q, k, s, t):
    if regime_of(q, k) == 1:
        return 2.0 ** (q * s)
    return 2.0 ** ((2 * q - k) * t)


def hybrid_norm(f, s, t, layout=None):
    return sum(hybrid_weight(q, k, s, t) * value
               for (q, k), value in block_norms(f, layout).items())


def axis_bucket_norm(f, s, layout=None):
    grid, power = _power(f)
    layout = _layout_for(grid, layout)
    on_axis = power * layout.axis_mask
    return sum(2.0 ** (q * s) * math.sqrt(grid.area * np.sum(layout.shell_weight(q) ** 2 * on_axis))
               for q in layout.shells)


def hybrid_embedding_constant(layout, s, t):
    """Smallest C with max(hat(f,s), hat(f,t)) <= C * hybrid(f,s,t) on this layout."""
    constant = 0.0
    for q, k in layout.blocks:
        ratio = max(2.0 ** (q * s), 2.0 ** (q * t)) / hybrid_weight(q, k, s, t)
        constant = max(constant, ratio)
    return constant


def norm_equivalence_ratio(f, s, layout=None):
    return besov_norm(gradient(f), s - 1, layout) / besov_norm(f, s, layout)


def linf_embedding_ratio(f, layout=None):
    if not np.any(f.coeffs):
        raise ParameterRangeError("f nonzero")
    denominator = hybrid_norm(f, 0.0, 1.0, layout)
    if denominator == 0.0:
        raise ParameterRangeError("f has content off the xi1 = 0 line")
    # sup sampled on a refined grid
    fine = pad(f, f.grid.refined(config.LINF_REFINEMENT))
    return float(np.max(np.abs(transform_inverse(fine)))) / denominator


# --- PARAPRODUCT ---

class BonyParts(NamedTuple):
    T: SpectralField
    Tbar: SpectralField
    R: SpectralField
    product: SpectralField


def _padded_pieces(h, layout, fine):
    mean = SpectralField.zeros(h.grid)
    mean.coeffs[0, 0] = h.coeffs[0, 0]
    # the mean sits one index below the lowest shell
    pieces = [mean] + [block(h, q, layout) for q in layout.shell_range()]
    return [ifft2(pad(piece, fine).coeffs) for piece in pieces]


def bony_decompose(f, g, layout=None):
    """Split fg into T(f,g) + T(g,f) + R(f,g) on the 2x padded grid."""
    grid = require_same_grid(f, g)
    layout = _layout_for(grid, layout)
    fine = grid.refined(2)
    fp = _padded_pieces(f, layout, fine)
    gp = _padded_pieces(g, layout, fine)
    low_f = np.cumsum(fp, axis=0)
    low_g = np.cumsum(gp, axis=0)
    T = np.zeros(fine.shape, dtype=complex)
    Tbar = np.zeros(fine.shape, dtype=complex)
    R = np.zeros(fine.shape, dtype=complex)
    n = len(fp)
    for j in range(n):
        if j >= 2:
            T += low_f[j - 2] * gp[j]
            Tbar += low_g[j - 2] * fp[j]
        for l in (j - 1, j, j + 1):
            if 0 <= l < n:
                R += fp[j] * gp[l]
    return BonyParts(
        SpectralField(fine, fft2(T)),
        SpectralField(fine, fft2(Tbar)),
        SpectralField(fine, fft2(R)),
        padded_product(f, g),
    )


def product_law_ratio(f, g, s, t, variant='hat', layout=None):
    """Measured constant of ||fg|| <= C ||f|| ||g|| (product laws in B-hat / B-tilde)."""
    grid = require_same_grid(f, g)
    if variant == 'hat':
        if s > 1 or t > 1:
            raise ParameterRangeError("s<=1 and t<=1", f"s={s}, t={t}")
        if s + t <= 0:
            raise ParameterRangeError("s+t>0", f"s={s}, t={t}")
    elif variant != 'hybrid':
        raise ParameterRangeError("variant in {hat, hybrid}", variant)
    fine = grid.refined(2)
    fine_layout = get_layout(fine)
    pf, pg = pad(f, fine), pad(g, fine)
    product = padded_product(f, g).without_mean()
    if variant == 'hat':
        numerator = hat_besov_norm(product, s + t - 1, fine_layout)
        denominator = hat_besov_norm(pf, s, fine_layout) * hat_besov_norm(pg, t, fine_layout)
    else:
        numerator = hybrid_norm(product, 0.0, 1.0, fine_layout)
        denominator = hybrid_norm(pf, 0.0, 1.0, fine_layout) * hat_besov_norm(pg, 1.0, fine_layout)
    if numerator == 0.0:
        return 0.0
    if denominator == 0.0:
        raise ParameterRangeError("denominators nonzero")
    return numerator / denominator


def commutator_table(e, f, m=0.0, n=0, layout=None):
    """|(G(D) Delta_q Delta^1_k (e.grad f) | G(D) Delta_q Delta^1_k f)| per active block, G = |xi|^m xi1^n."""
    grid = require_same_grid(e.x, e.y, f)
    layout = _layout_for(grid, layout)
    advected = (exact_product(e.x, partial_derivative(f, 1))
                + exact_product(e.y, partial_derivative(f, 2)))
    symbol = evaluate_symbol(grid, lambda a, b: np.hypot(a, b) ** m * a ** n)
    table = {}
    for q, k in layout.blocks:
        w = layout.block_weight(q, k) * symbol
        value = grid.area * np.real(np.sum((w * advected.coeffs) * np.conj(w * f.coeffs)))
        table[(q, k)] = abs(float(value))
    return table


# --- EXPORT ---

def block_rows(f, layout=None):
    grid = f.grid if isinstance(f, SpectralField) else _components(f)[0].grid
    layout = _layout_for(grid, layout)
    return [(q, k, value, layout.regime(q, k))
            for (q, k), value in sorted(block_norms(f, layout).items())]


def write_block_csv(path, f, layout=None):
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(config.BLOCK_COLUMNS)
    for q, k, value, regime in block_rows(f, layout):
        writer.writerow((q, k, repr(value), regime))
    return atomic_write(path, buffer.getvalue())
