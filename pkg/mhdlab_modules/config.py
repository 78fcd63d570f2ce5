import os
import math
from dataclasses import dataclass, asdict, fields

from .errors import ConfigError

VERSION = "1.0.0"

# --- FILE LAYOUT ---
LOG_DIR = os.path.join(os.path.expanduser("~"), ".cache", "mhdlab")
LOG_FILE = os.path.join(LOG_DIR, "mhdlab.log")
RUN_LOG_NAME = "run.log"
LEDGER_NAME = "ledger.csv"
MANIFEST_NAME = "manifest.json"
CONFIG_ECHO_NAME = "config.cfg"
TRUNCATION_MARKER = "TRUNCATED"
FAILURE_REPORT_NAME = "failure_report.txt"
SUMMARY_NAME = "summary.txt"
BUDGET_NAME = "budget.csv"
BLOCKS_U_NAME = "blocks_u.csv"
BLOCKS_H_NAME = "blocks_h.csv"
FUNCTIONALS_NAME = "functionals.csv"
GNUPLOT_NAME = "ledger.gp"
DISPERSION_NAME = "dispersion.csv"
SNAPSHOT_PATTERN = "snap_{:06d}.bin"
SNAPSHOT_GLOB = "snap_*.bin"
THREADS_ENV = "MHDLAB_THREADS"

# --- PHYSICS ---
# Background field h0 = (1, 0); viscosity and the unit Alfven speed are fixed.
VISCOSITY = 1.0
DEFAULT_LENGTH = 2.0 * math.pi * 16.0

# --- SNAPSHOT FORMAT ---
# Forward transforms carry 1/(n1*n2), so c(0,0) is the field mean.
SNAPSHOT_MAGIC = b"MHDSNAP1"
SNAPSHOT_FIELDS = ("u.x", "u.y", "H.x", "H.y", "A11", "A12", "A21", "A22")

# --- MAGIC NUMBERS ---
MEAN_TOL = 1e-10
INIT_MAX_ITER = 100
INIT_DET_TOL = 1e-12
INIT_DET_TARGET = 1e-14
INIT_DIV_TOL = 1e-10
STRUCTURE_TOL = 1e-10
CFL_SAFETY = 0.5
MAX_DT = 1.0
FIT_MIN_SAMPLES = 4
FIT_UNDERFLOW = 1e-14
DEFAULT_IOTA = 0.05

# --- REGRESSION BOUNDS (verify) ---
REGRESSION_BOUNDS = {
    'frozen_in_resid': 1e-7,
    'det_resid': 1e-7,
    'grad_struct_resid': 1e-7,
    'coupling_resid': 1e-7,
    'div_u': 1e-11,
    'div_h': 1e-11,
}
LINEAR_RUN_SKIPS = ('frozen_in_resid', 'det_resid')
# A is never updated when evolve_a is off, so its residuals are not meaningful.
FROZEN_A_SKIPS = ('frozen_in_resid', 'det_resid', 'grad_struct_resid', 'coupling_resid')
X_GROWTH_BOUND = 2.0
LEDGER_MATCH_RTOL = 1e-9

# --- LEDGER ---
LEDGER_COLUMNS = (
    't', 'l2_u', 'l2_h', 'hatB0_u', 'hybrid01_h', 'hatB1_A',
    'frozen_in_resid', 'det_resid', 'grad_struct_resid', 'coupling_resid',
    'div_u', 'div_h', 'X_t',
)
BLOCK_COLUMNS = ('q', 'k', 'l2_norm', 'regime')
DISPERSION_COLUMNS = ('xi1', 'xi2', 're_lp', 'im_lp', 're_lm', 'im_lm', 'regime')

# --- INITIAL DATA ---
INIT_KINDS = ('zero', 'single_mode', 'random', 'eigen_plus', 'eigen_minus')
SINGLE_MODE_U = (1, 1)
SINGLE_MODE_H = (1, 2)
DEFAULT_BAND = 4

# --- SWEEPS ---
DEFAULT_SWEEP_PAIRS = 100
DEFAULT_SWEEP_GRIDS = (64, 128)
BONY_PAIRS = 20
SWEEP_BAND = 8
BONY_TOL = 1e-11
PRODUCT_LAW_STABILITY = 0.10
# |grad f|_{B^{s-1}} / |f|_{B^s} stays inside the shell support of the bump
NORM_EQUIV_BRACKET = (5.0 / 6.0, 12.0 / 5.0)
NORM_EQUIV_S = 1.0
LINF_REFINEMENT = 4

# --- CONFIG KEYS ---
CONFIG_KEYS = {
    'grid.n1': 'n1',
    'grid.n2': 'n2',
    'grid.l1': 'l1',
    'grid.l2': 'l2',
    'time.dt': 'dt',
    'time.t_end': 't_end',
    'init.kind': 'init_kind',
    'init.amplitude': 'amplitude',
    'init.seed': 'seed',
    'init.band': 'band',
    'toggles.nonlinear': 'nonlinear',
    'toggles.evolve_a': 'evolve_a',
    'output.cadence': 'cadence',
    'output.dir': 'output_dir',
    'diag.iota': 'iota',
}
_TRUE = ('1', 'true', 'yes', 'on')
_FALSE = ('0', 'false', 'no', 'off')


@dataclass
class SolverConfig:
    n1: int = 64
    n2: int = 64
    l1: float = DEFAULT_LENGTH
    l2: float = DEFAULT_LENGTH
    dt: float = 1e-3
    t_end: float = 1.0
    init_kind: str = 'random'
    amplitude: float = 1e-3
    seed: int = 0
    band: int = DEFAULT_BAND
    nonlinear: bool = True
    evolve_a: bool = True
    cadence: int = 100
    output_dir: str = 'run'
    iota: float = DEFAULT_IOTA

    def __post_init__(self):
        for name in ('n1', 'n2'):
            value = getattr(self, name)
            if value <= 0 or value % 2:
                raise ConfigError(f"grid.{name}", f"must be a positive even integer, got {value}")
        for name in ('l1', 'l2'):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ConfigError(f"grid.{name}", f"must be a positive period, got {value}")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigError("time.dt", f"must be > 0, got {self.dt}")
        if not (self.t_end >= 0 and math.isfinite(self.t_end)):
            raise ConfigError("time.t_end", f"must be >= 0, got {self.t_end}")
        if not (self.amplitude >= 0 and math.isfinite(self.amplitude)):
            raise ConfigError("init.amplitude", f"must be >= 0, got {self.amplitude}")
        if self.init_kind not in INIT_KINDS:
            raise ConfigError("init.kind", f"unknown kind '{self.init_kind}' (choose from {', '.join(INIT_KINDS)})")
        if self.band < 1:
            raise ConfigError("init.band", f"must be >= 1, got {self.band}")
        if self.cadence < 1:
            raise ConfigError("output.cadence", f"must be >= 1, got {self.cadence}")
        if not (0 < self.iota < 1):
            raise ConfigError("diag.iota", f"must lie in (0, 1), got {self.iota}")

    @property
    def n_steps(self):
        return int(round(self.t_end / self.dt))

    def to_dict(self):
        return asdict(self)

    def to_text(self):
        inverse = {attr: key for key, attr in CONFIG_KEYS.items()}
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = 'true' if value else 'false'
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{inverse[f.name]} = {value}")
        return "\n".join(lines) + "\n"


def _coerce(key, attr, raw):
    kind = {f.name: f.type for f in fields(SolverConfig)}[attr]
    kind = kind if isinstance(kind, str) else kind.__name__
    try:
        if kind == 'int':
            return int(raw)
        if kind == 'float':
            return float(raw)
        if kind == 'bool':
            lowered = raw.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(raw)
        return raw
    except ValueError:
        raise ConfigError(key, f"cannot parse '{raw}' as {kind}") from None


def parse_config_text(text):
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split('#', 1)[0].strip()
        if not stripped:
            continue
        if '=' not in stripped:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got '{stripped}'")
        key, raw = (part.strip() for part in stripped.split('=', 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(key, "unknown config key")
        attr = CONFIG_KEYS[key]
        values[attr] = _coerce(key, attr, raw)
    return SolverConfig(**values)


def load_config(path):
    if not os.path.isfile(path):
        raise ConfigError(path, "config not found")
    with open(path, 'r') as f:
        return parse_config_text(f.read())
