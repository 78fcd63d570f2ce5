"""Periodic grid, discrete Fourier transforms and Fourier-multiplier operators.

Normalization: the forward transform carries the factor 1/(n1*n2), so the
coefficient at mode (0, 0) is the grid mean of the field and Parseval reads
mean(|x|^2) = sum(|c|^2). L2 norms on the torus are therefore
sqrt(length1 * length2 * sum(|c|^2)). Coefficient arrays follow the FFT index
order (axis 0 along x1, axis 1 along x2); mode indices run over the centered
range -n/2 <= m < n/2, the Nyquist index -n/2 being its own negative.
"""
import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import fft as sp_fft

from . import config
from .errors import GridMismatchError, MultiplierError, ParameterRangeError, SnapshotError
from .utils import thread_cap, atomic_write_bytes, log_action


@dataclass(frozen=True)
class Grid:
    n1: int
    n2: int
    length1: float = config.DEFAULT_LENGTH
    length2: float = config.DEFAULT_LENGTH

    def __post_init__(self):
        for name in ('n1', 'n2'):
            n = getattr(self, name)
            if n <= 0 or n % 2:
                raise ParameterRangeError(f"{name} positive and even", f"got {n}")
        for name in ('length1', 'length2'):
            if not getattr(self, name) > 0:
                raise ParameterRangeError(f"{name} > 0")

    @classmethod
    def square(cls, n, length=config.DEFAULT_LENGTH):
        return cls(n, n, length, length)

    @property
    def shape(self):
        return (self.n1, self.n2)

    @property
    def area(self):
        return self.length1 * self.length2

    def refined(self, factor=2):
        return Grid(self.n1 * factor, self.n2 * factor, self.length1, self.length2)

    @cached_property
    def m1(self):
        return np.rint(sp_fft.fftfreq(self.n1) * self.n1).astype(int)[:, None]

    @cached_property
    def m2(self):
        return np.rint(sp_fft.fftfreq(self.n2) * self.n2).astype(int)[None, :]

    @cached_property
    def xi1(self):
        return np.broadcast_to(2.0 * np.pi * self.m1 / self.length1, self.shape).copy()

    @cached_property
    def xi2(self):
        return np.broadcast_to(2.0 * np.pi * self.m2 / self.length2, self.shape).copy()

    @cached_property
    def xi_sq(self):
        return self.xi1 ** 2 + self.xi2 ** 2

    @cached_property
    def abs_xi(self):
        return np.sqrt(self.xi_sq)

    @cached_property
    def inv_xi_sq(self):
        out = np.zeros(self.shape)
        nonzero = self.xi_sq > 0
        out[nonzero] = 1.0 / self.xi_sq[nonzero]
        return out

    @cached_property
    def dealias_mask(self):
        # |m| < n/3 keeps quadratic products alias-free for every even n.
        keep1 = 3 * np.abs(self.m1) < self.n1
        keep2 = 3 * np.abs(self.m2) < self.n2
        return keep1 & keep2

    @cached_property
    def k_max(self):
        return float(self.abs_xi[self.dealias_mask].max())

    def coords(self):
        x1 = np.arange(self.n1) * (self.length1 / self.n1)
        x2 = np.arange(self.n2) * (self.length2 / self.n2)
        return np.meshgrid(x1, x2, indexing='ij')

    def mode_index(self, m1, m2):
        return (m1 % self.n1, m2 % self.n2)


def _check_shape(shape, grid):
    if len(shape) != 2:
        raise GridMismatchError(1, grid.n1, f"{len(shape)}-d array")
    for axis, (got, expected) in enumerate(zip(shape, grid.shape), 1):
        if got != expected:
            raise GridMismatchError(axis, expected, got)


def require_same_grid(*items):
    grids = [item.grid for item in items]
    first = grids[0]
    for other in grids[1:]:
        if other != first:
            if other.n1 != first.n1 or other.length1 != first.length1:
                raise GridMismatchError(1, first.n1, other.n1)
            raise GridMismatchError(2, first.n2, other.n2)
    return first


@dataclass(eq=False)
class SpectralField:
    grid: Grid
    coeffs: np.ndarray

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=complex)
        _check_shape(coeffs.shape, self.grid)
        self.coeffs = coeffs

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.shape, dtype=complex))

    @property
    def mean(self):
        return self.coeffs[0, 0].real

    def l2_norm(self):
        return float(np.sqrt(self.grid.area * np.sum(np.abs(self.coeffs) ** 2)))

    def inner(self, other):
        require_same_grid(self, other)
        return float(self.grid.area * np.real(np.sum(self.coeffs * np.conj(other.coeffs))))

    def to_real(self):
        return transform_inverse(self)

    def copy(self):
        return SpectralField(self.grid, self.coeffs.copy())

    def without_mean(self):
        out = self.coeffs.copy()
        out[0, 0] = 0.0
        return SpectralField(self.grid, out)

    def __add__(self, other):
        require_same_grid(self, other)
        return SpectralField(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other):
        require_same_grid(self, other)
        return SpectralField(self.grid, self.coeffs - other.coeffs)

    def __neg__(self):
        return SpectralField(self.grid, -self.coeffs)

    def __mul__(self, scalar):
        return SpectralField(self.grid, self.coeffs * scalar)

    __rmul__ = __mul__


@dataclass(eq=False)
class VectorField:
    x: SpectralField
    y: SpectralField

    def __post_init__(self):
        require_same_grid(self.x, self.y)

    @property
    def grid(self):
        return self.x.grid

    @classmethod
    def zeros(cls, grid):
        return cls(SpectralField.zeros(grid), SpectralField.zeros(grid))

    def components(self):
        return (self.x, self.y)

    def l2_norm(self):
        return float(np.hypot(self.x.l2_norm(), self.y.l2_norm()))

    def inner(self, other):
        return self.x.inner(other.x) + self.y.inner(other.y)

    def rms(self):
        return float(np.sqrt(np.sum(np.abs(self.x.coeffs) ** 2 + np.abs(self.y.coeffs) ** 2)))

    def __add__(self, other):
        return VectorField(self.x + other.x, self.y + other.y)

    def __sub__(self, other):
        return VectorField(self.x - other.x, self.y - other.y)

    def __mul__(self, scalar):
        return VectorField(self.x * scalar, self.y * scalar)

    __rmul__ = __mul__


@dataclass(eq=False)
class MatrixField:
    """2x2 field [[a11, a12], [a21, a22]]; row i is a VectorField."""
    a11: SpectralField
    a12: SpectralField
    a21: SpectralField
    a22: SpectralField

    def __post_init__(self):
        require_same_grid(*self.entries())

    @property
    def grid(self):
        return self.a11.grid

    @classmethod
    def zeros(cls, grid):
        return cls(*(SpectralField.zeros(grid) for _ in range(4)))

    @classmethod
    def from_rows(cls, row1, row2):
        return cls(row1.x, row1.y, row2.x, row2.y)

    def entries(self):
        return (self.a11, self.a12, self.a21, self.a22)

    def row(self, i):
        if i == 1:
            return VectorField(self.a11, self.a12)
        if i == 2:
            return VectorField(self.a21, self.a22)
        raise ParameterRangeError("row in {1, 2}", f"got {i}")

    def l2_norm(self):
        return float(np.sqrt(sum(e.l2_norm() ** 2 for e in self.entries())))

    def __add__(self, other):
        return MatrixField(*(a + b for a, b in zip(self.entries(), other.entries())))

    def __sub__(self, other):
        return MatrixField(*(a - b for a, b in zip(self.entries(), other.entries())))

    def __mul__(self, scalar):
        return MatrixField(*(a * scalar for a in self.entries()))

    __rmul__ = __mul__


# --- TRANSFORMS ---

def fft2(samples):
    return sp_fft.fft2(samples, axes=(-2, -1), norm="forward", workers=thread_cap())


def ifft2(coeffs):
    return sp_fft.ifft2(coeffs, axes=(-2, -1), norm="forward", workers=thread_cap())


def transform_forward(samples, grid):
    samples = np.asarray(samples, dtype=float)
    _check_shape(samples.shape, grid)
    return SpectralField(grid, fft2(samples))


def transform_inverse(field):
    return ifft2(field.coeffs).real


# --- MULTIPLIERS ---

def evaluate_symbol(grid, symbol):
    """Tabulate symbol(xi1, xi2) on the grid; singular values at xi = 0 become 0."""
    with np.errstate(all='ignore'):
        values = np.asarray(symbol(grid.xi1, grid.xi2), dtype=complex)
    values = np.broadcast_to(values, grid.shape).copy()
    bad = ~np.isfinite(values)
    if bad[0, 0]:
        values[0, 0] = 0.0
        bad[0, 0] = False
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise MultiplierError((grid.xi1[i, j], grid.xi2[i, j]), values[i, j])
    return values


def apply_multiplier(f, symbol):
    return SpectralField(f.grid, f.coeffs * evaluate_symbol(f.grid, symbol))


def partial_derivative(f, axis):
    if axis == 1:
        return SpectralField(f.grid, 1j * f.grid.xi1 * f.coeffs)
    if axis == 2:
        return SpectralField(f.grid, 1j * f.grid.xi2 * f.coeffs)
    raise ParameterRangeError("axis in {1, 2}", f"got {axis}")


def lambda_power(f, s):
    return apply_multiplier(f, lambda a, b: np.hypot(a, b) ** s)


def riesz1(f):
    return apply_multiplier(f, lambda a, b: 1j * a / np.hypot(a, b))


def laplacian(f):
    return SpectralField(f.grid, -f.grid.xi_sq * f.coeffs)


def inverse_laplacian(f):
    return SpectralField(f.grid, -f.grid.inv_xi_sq * f.coeffs)


def gradient(f):
    return VectorField(partial_derivative(f, 1), partial_derivative(f, 2))


def divergence(v):
    g = v.grid
    return SpectralField(g, 1j * (g.xi1 * v.x.coeffs + g.xi2 * v.y.coeffs))


def curl(v):
    """Scalar curl with the sign convention d2 v1 - d1 v2."""
    g = v.grid
    return SpectralField(g, 1j * (g.xi2 * v.x.coeffs - g.xi1 * v.y.coeffs))


def project_coeffs(grid, cx, cy):
    dot = (grid.xi1 * cx + grid.xi2 * cy) * grid.inv_xi_sq
    return cx - grid.xi1 * dot, cy - grid.xi2 * dot


def leray_project(v):
    g = v.grid
    cx, cy = project_coeffs(g, v.x.coeffs, v.y.coeffs)
    return VectorField(SpectralField(g, cx), SpectralField(g, cy))


def dealias(f):
    return SpectralField(f.grid, f.coeffs * f.grid.dealias_mask)


# --- PADDING AND EXACT PRODUCTS ---

def _pad_axis(c, axis, new_n):
    c = np.moveaxis(c, axis, 0)
    half = c.shape[0] // 2
    out = np.zeros((new_n,) + c.shape[1:], dtype=complex)
    out[:half] = c[:half]
    out[new_n - half + 1:] = c[half + 1:]
    # the Nyquist line is shared between +n/2 and -n/2 so real fields stay real
    out[half] = 0.5 * c[half]
    out[new_n - half] = 0.5 * c[half]
    return np.moveaxis(out, 0, axis)


def _truncate_axis(c, axis, new_n):
    c = np.moveaxis(c, axis, 0)
    n = c.shape[0]
    half = new_n // 2
    out = np.zeros((new_n,) + c.shape[1:], dtype=complex)
    out[:half] = c[:half]
    out[half + 1:] = c[n - half + 1:]
    out[half] = c[half] + c[n - half]
    return np.moveaxis(out, 0, axis)


def _check_refinement(coarse, fine):
    if coarse.length1 != fine.length1 or coarse.length2 != fine.length2:
        raise GridMismatchError(1, coarse.length1, fine.length1)
    if fine.n1 <= coarse.n1:
        raise GridMismatchError(1, f"> {coarse.n1}", fine.n1)
    if fine.n2 <= coarse.n2:
        raise GridMismatchError(2, f"> {coarse.n2}", fine.n2)


def pad(f, fine):
    _check_refinement(f.grid, fine)
    c = _pad_axis(f.coeffs, 0, fine.n1)
    return SpectralField(fine, _pad_axis(c, 1, fine.n2))


def truncate(f, coarse):
    """Keep the coarse band of f; modes outside it are dropped, not folded."""
    _check_refinement(coarse, f.grid)
    c = _truncate_axis(f.coeffs, 0, coarse.n1)
    return SpectralField(coarse, _truncate_axis(c, 1, coarse.n2))


def padded_product(f, g):
    grid = require_same_grid(f, g)
    fine = grid.refined(2)
    pf = ifft2(pad(f, fine).coeffs)
    pg = ifft2(pad(g, fine).coeffs)
    return SpectralField(fine, fft2(pf * pg))


def exact_product(f, g):
    return truncate(padded_product(f, g), f.grid)


def dealiased_product(f, g):
    """Collocation product of the 2/3-band parts of f and g, cut back to that band."""
    grid = require_same_grid(f, g)
    mask = grid.dealias_mask
    pf = ifft2(f.coeffs * mask).real
    pg = ifft2(g.coeffs * mask).real
    return SpectralField(grid, fft2(pf * pg) * mask)


def advection(v, w, product=dealiased_product):
    """(v . grad) w for a vector field w."""
    def along(c):
        return product(v.x, partial_derivative(c, 1)) + product(v.y, partial_derivative(c, 2))
    return VectorField(along(w.x), along(w.y))


# --- FIELD BUILDERS ---

def random_field(grid, rng, band):
    """Real zero-mean field with i.i.d. Gaussian coefficients on |m1|, |m2| <= band."""
    if 2 * band >= min(grid.n1, grid.n2):
        raise ParameterRangeError("band < n/2", f"band={band}, grid={grid.shape}")
    width = 2 * band + 1
    small = rng.standard_normal((width, width)) + 1j * rng.standard_normal((width, width))
    small = 0.5 * (small + np.conj(small[::-1, ::-1]))
    small[band, band] = 0.0
    coeffs = np.zeros(grid.shape, dtype=complex)
    rows = np.arange(-band, band + 1) % grid.n1
    cols = np.arange(-band, band + 1) % grid.n2
    coeffs[np.ix_(rows, cols)] = small
    return SpectralField(grid, coeffs)


def solenoidal_from_stream(psi):
    return VectorField(partial_derivative(psi, 2), -partial_derivative(psi, 1))


def solenoidal_mode(grid, m1, m2, amplitude=1.0):
    """Divergence-free field (d2 psi, -d1 psi) of psi = cos(xi.x), scaled to L-infinity amplitude."""
    coeffs = np.zeros(grid.shape, dtype=complex)
    coeffs[grid.mode_index(m1, m2)] += 0.5
    coeffs[grid.mode_index(-m1, -m2)] += 0.5
    v = solenoidal_from_stream(SpectralField(grid, coeffs))
    xi = np.hypot(2 * np.pi * m1 / grid.length1, 2 * np.pi * m2 / grid.length2)
    return v * (amplitude / xi)


def scaled_to_rms(v, amplitude):
    rms = v.rms()
    if rms == 0.0:
        return v
    return v * (amplitude / rms)


# --- SNAPSHOTS ---

_HEADER = struct.Struct('<8sqqddd')
_TAG = struct.Struct('<8s')


def write_snapshot(path, grid, t, fields):
    if len(fields) != len(config.SNAPSHOT_FIELDS):
        raise SnapshotError(f"expected {len(config.SNAPSHOT_FIELDS)} fields, got {len(fields)}")
    chunks = [_HEADER.pack(config.SNAPSHOT_MAGIC, grid.n1, grid.n2, grid.length1, grid.length2, float(t))]
    for tag, field in zip(config.SNAPSHOT_FIELDS, fields):
        if field.grid != grid:
            raise SnapshotError(f"field {tag} lives on {field.grid}, snapshot grid is {grid}")
        chunks.append(_TAG.pack(tag.encode('ascii')))
        chunks.append(np.ascontiguousarray(field.coeffs, dtype='<c16').tobytes())
    if not atomic_write_bytes(path, b''.join(chunks)):
        raise SnapshotError(f"could not write snapshot {path}")
    log_action("SNAPSHOT", f"{path} t={t:.6g}")


def read_snapshot(path):
    try:
        with open(path, 'rb') as fh:
            data = fh.read()
    except OSError as e:
        raise SnapshotError(f"cannot read snapshot {path}: {e}") from None
    if len(data) < _HEADER.size:
        raise SnapshotError(f"{path}: truncated header")
    magic, n1, n2, length1, length2, t = _HEADER.unpack_from(data, 0)
    if magic != config.SNAPSHOT_MAGIC:
        raise SnapshotError(f"{path}: bad magic {magic!r}")
    grid = Grid(n1, n2, length1, length2)
    count = n1 * n2
    block = _TAG.size + 16 * count
    expected = _HEADER.size + block * len(config.SNAPSHOT_FIELDS)
    if len(data) != expected:
        raise SnapshotError(f"{path}: size {len(data)} does not match header ({expected})")
    fields = []
    offset = _HEADER.size
    for tag in config.SNAPSHOT_FIELDS:
        found = _TAG.unpack_from(data, offset)[0].rstrip(b'\0').decode('ascii', 'replace')
        if found != tag:
            raise SnapshotError(f"{path}: expected field '{tag}', found '{found}'")
        coeffs = np.frombuffer(data, dtype='<c16', count=count, offset=offset + _TAG.size)
        fields.append(SpectralField(grid, coeffs.reshape(n1, n2).astype(complex)))
        offset += block
    return grid, t, fields
