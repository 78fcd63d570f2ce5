"""Randomized harnesses for the product laws, embeddings and the paraproduct identity."""
from typing import NamedTuple

import numpy as np

from . import config
from .littlewood_paley import (
    bony_decompose, product_law_ratio, linf_embedding_ratio, norm_equivalence_ratio,
)
from .spectral import Grid, random_field
from .utils import Color, log_action


class SweepResult(NamedTuple):
    name: str
    n: int
    samples: int
    value: float


def _pairs(grid, count, seed, band):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        yield random_field(grid, rng, band), random_field(grid, rng, band)


def product_law_sweep(n, pairs=config.DEFAULT_SWEEP_PAIRS, variant='hat', s=1.0, t=1.0,
                      seed=0, band=config.SWEEP_BAND, length=config.DEFAULT_LENGTH, progress_callback=None):
    """Largest measured product-law ratio over random pairs on an n x n grid."""
    grid = Grid.square(n, length)
    worst = 0.0
    for index, (f, g) in enumerate(_pairs(grid, pairs, seed, band)):
        worst = max(worst, product_law_ratio(f, g, s, t, variant))
        if progress_callback:
            progress_callback(index + 1, pairs)
    return worst


def bony_sweep(n, pairs=config.BONY_PAIRS, seed=0, band=config.SWEEP_BAND,
               length=config.DEFAULT_LENGTH, progress_callback=None):
    """Largest relative L2 error of T + Tbar + R against the padded product."""
    grid = Grid.square(n, length)
    worst = 0.0
    for index, (f, g) in enumerate(_pairs(grid, pairs, seed, band)):
        parts = bony_decompose(f, g)
        total = parts.T + parts.Tbar + parts.R
        scale = parts.product.l2_norm()
        if scale > 0:
            worst = max(worst, (total - parts.product).l2_norm() / scale)
        if progress_callback:
            progress_callback(index + 1, pairs)
    return worst


def linf_sweep(n, samples=config.DEFAULT_SWEEP_PAIRS, seed=0, band=config.SWEEP_BAND,
               length=config.DEFAULT_LENGTH):
    grid = Grid.square(n, length)
    rng = np.random.default_rng(seed)
    return max(linf_embedding_ratio(random_field(grid, rng, band)) for _ in range(samples))


def norm_equivalence_bracket(n, s, samples=config.DEFAULT_SWEEP_PAIRS, seed=0,
                             band=config.SWEEP_BAND, length=config.DEFAULT_LENGTH):
    """(min, max) of |grad f|_{B^{s-1}} / |f|_{B^s} over random fields."""
    grid = Grid.square(n, length)
    rng = np.random.default_rng(seed)
    ratios = [norm_equivalence_ratio(random_field(grid, rng, band), s) for _ in range(samples)]
    return min(ratios), max(ratios)


def relative_change(a, b):
    return abs(a - b) / max(abs(a), abs(b)) if max(abs(a), abs(b)) > 0 else 0.0


# sweep result names whose maxima must agree between the coarsest and finest grid
STABLE_SWEEPS = {'hat': 'product_hat', 'hybrid': 'product_hybrid', 'linf': 'linf_ratio'}


class Verdict(NamedTuple):
    bony_ok: bool
    changes: dict
    bracket_ok: bool

    @property
    def stable(self):
        return all(change < config.PRODUCT_LAW_STABILITY for change in self.changes.values())

    @property
    def passed(self):
        return self.bony_ok and self.bracket_ok and self.stable


def collect_paraproduct_results(grids=config.DEFAULT_SWEEP_GRIDS, pairs=config.DEFAULT_SWEEP_PAIRS,
                                bony_pairs=config.BONY_PAIRS, seed=0, progress_callback=None):
    """Bony reconstruction error on the first grid, then per grid the hat/hybrid
    product-law maxima, the L-infinity embedding maximum and the norm-equivalence bracket."""
    def announce(label):
        if progress_callback:
            progress_callback(label)

    results = []
    announce(f"Bony identity ({grids[0]}x{grids[0]})")
    results.append(SweepResult('bony_error', grids[0], bony_pairs, bony_sweep(grids[0], bony_pairs, seed)))
    for n in grids:
        for variant in ('hat', 'hybrid'):
            announce(f"product law {variant} ({n}x{n})")
            value = product_law_sweep(n, pairs, variant, seed=seed)
            results.append(SweepResult(f'product_{variant}', n, pairs, value))
        announce(f"L-infinity embedding ({n}x{n})")
        results.append(SweepResult('linf_ratio', n, pairs, linf_sweep(n, pairs, seed)))
        announce(f"norm equivalence ({n}x{n})")
        low, high = norm_equivalence_bracket(n, config.NORM_EQUIV_S, pairs, seed)
        results.append(SweepResult('equiv_min', n, pairs, low))
        results.append(SweepResult('equiv_max', n, pairs, high))
    log_action("SWEEP", "; ".join(f"{r.name}@{r.n}={r.value:.6e}" for r in results))
    return results


def sweep_stage_count(grids):
    return 1 + 4 * len(grids)


def paraproduct_verdict(results):
    """Bony tolerance, relative change of each stable sweep between the first and
    last grid, and whether every measured bracket sits inside the frozen one."""
    bony_ok = all(r.value <= config.BONY_TOL for r in results if r.name == 'bony_error')
    changes = {}
    for label, name in STABLE_SWEEPS.items():
        values = [r.value for r in results if r.name == name]
        if len(values) >= 2:
            changes[label] = relative_change(values[0], values[-1])
    low, high = config.NORM_EQUIV_BRACKET
    bracket_ok = (all(r.value > low for r in results if r.name == 'equiv_min')
                  and all(r.value < high for r in results if r.name == 'equiv_max'))
    return Verdict(bony_ok, changes, bracket_ok)


def run_paraproduct_plain(grids=config.DEFAULT_SWEEP_GRIDS, pairs=config.DEFAULT_SWEEP_PAIRS, seed=0):
    print(f"\n{Color.WARNING}[*] Paraproduct, product-law and embedding sweeps ({pairs} samples per grid)...{Color.ENDC}")

    def progress(name):
        print(f"Running {name.ljust(28)}...", flush=True)

    results = collect_paraproduct_results(grids, pairs, seed=seed, progress_callback=progress)
    for r in results:
        print(f"  {r.name:<16} n={r.n:<5} {r.value:.6e}")
    verdict = paraproduct_verdict(results)

    def mark(ok):
        return f"{Color.GREEN}OK{Color.ENDC}" if ok else f"{Color.FAIL}FAIL{Color.ENDC}"

    print(f"\n{Color.BLUE}[i] Bony identity: {mark(verdict.bony_ok)}")
    low, high = config.NORM_EQUIV_BRACKET
    print(f"{Color.BLUE}[i] Norm equivalence inside [{low:.4f}, {high:.4f}]: {mark(verdict.bracket_ok)}")
    for label, change in verdict.changes.items():
        colour = Color.GREEN if change < config.PRODUCT_LAW_STABILITY else Color.FAIL
        print(f"{Color.BLUE}[i] {label} maximum change across grids: {colour}{100 * change:.2f}%{Color.ENDC}")
    return verdict.passed
