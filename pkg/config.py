"""
Configuration for the emission-permits equilibrium solver.

Process-wide settings come from the environment (a .env file is honoured);
run settings come from an INI file with the sections [model], [solver],
[schedule], [initial_density] and [validation]. Every key defaults to the
constant-price Example 1 setup.
"""
import configparser
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from dotenv import load_dotenv

from coupling import SolverConfig
from logger import LEVELS
from model import ConstantPrice, ModelParams, RampPrice, Tent, TruncatedNormal

# Load environment variables
load_dotenv()


class ConfigError(ValueError):
    """Raised for unreadable or invalid configuration; the message names the key"""


class Config:
    """Process-wide settings read from the environment"""

    # Log verbosity: off, info or debug
    MFG_LOG = os.getenv('MFG_LOG', 'info')
    LOG_DIR = os.getenv('MFG_LOG_DIR', 'logs')

    # Default output folder and parallelism for the CLI
    OUTPUT_DIR = os.getenv('MFG_OUTPUT_DIR', 'results')
    JOBS = int(os.getenv('MFG_JOBS', 1))

    # CSV float format: 17 significant digits round-trips every double
    FLOAT_FORMAT = '%.17g'

    @classmethod
    def validate(cls):
        """Validate the environment settings"""
        if cls.MFG_LOG.strip().lower() not in LEVELS:
            raise ConfigError(
                f"MFG_LOG must be one of {', '.join(LEVELS)}, got '{cls.MFG_LOG}'"
            )
        if cls.JOBS == 0:
            raise ConfigError("MFG_JOBS must be non-zero")
        return True


@dataclass(frozen=True)
class ValidationConfig:
    """Monte Carlo cross-check settings"""
    particles: int = 100_000
    seed: int = 0
    substeps: int = 4
    block_size: int = 8192


@dataclass(frozen=True)
class RunConfig:
    """Everything one experiment needs"""
    model: ModelParams = field(default_factory=ModelParams)
    solver: SolverConfig = field(default_factory=SolverConfig)
    schedule: object = field(default_factory=ConstantPrice)
    initial_density: object = field(default_factory=TruncatedNormal)
    validation: ValidationConfig = field(default_factory=ValidationConfig)

    def replace_schedule(self, schedule):
        return replace(self, schedule=schedule)


# Accepted keys per section, with their parsers

_FLOAT, _INT, _STR = float, int, str

SECTIONS = {
    'model': {
        'e_min': ('E_min', _FLOAT), 'e_max': ('E_max', _FLOAT), 't': ('T', _FLOAT),
        'sigma': ('sigma', _FLOAT), 'r': ('r', _FLOAT), 'c1': ('c1', _FLOAT),
        'c2': ('c2', _FLOAT), 'e0': ('E0', _FLOAT), 'a': ('A', _FLOAT),
    },
    'solver': {
        'n': ('N', _INT), 'k': ('K', _INT), 'theta': ('theta', _FLOAT),
        'tol': ('tol', _FLOAT), 'max_iter': ('max_iter', _INT),
        'relaxation': ('relaxation', _FLOAT), 'initial_tau': ('initial_tau', _FLOAT),
        'tau_min': ('tau_min', _FLOAT), 'tau_max': ('tau_max', _FLOAT),
        'boundary': ('boundary', _STR),
    },
    'schedule': {
        'kind': ('kind', _STR), 's': ('S', _FLOAT), 't_start': ('t_start', _FLOAT),
        't_end': ('t_end', _FLOAT), 's_max': ('S_max', _FLOAT),
    },
    'initial_density': {
        'kind': ('kind', _STR), 'mean': ('mean', _FLOAT),
        'variance': ('variance', _FLOAT), 'peak': ('peak', _FLOAT),
    },
    'validation': {
        'particles': ('particles', _INT), 'seed': ('seed', _INT),
        'substeps': ('substeps', _INT), 'block_size': ('block_size', _INT),
    },
}


def _read_section(parser, section):
    """Parse one section into a dict of typed values keyed by field name"""
    if not parser.has_section(section):
        return {}
    allowed = SECTIONS[section]
    values = {}
    for key, raw in parser.items(section):
        if key not in allowed:
            raise ConfigError(f"[{section}] {key}: unknown key")
        name, convert = allowed[key]
        try:
            values[name] = convert(raw.strip())
        except ValueError:
            raise ConfigError(f"[{section}] {key}: cannot read '{raw}' as {convert.__name__}")
    return values


def _build(section, factory, **kwargs):
    """Construct a config object; invariant messages already name the field"""
    try:
        return factory(**kwargs)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"[{section}] {e}")


def _schedule(values):
    kind = values.pop('kind', 'constant').lower()
    if kind == 'constant':
        allowed = {k: values[k] for k in ('S',) if k in values}
        extra = set(values) - set(allowed)
        if extra:
            raise ConfigError(f"[schedule] {sorted(extra)[0].lower()}: not used by a constant schedule")
        return _build('schedule', ConstantPrice, **allowed)
    if kind == 'ramp':
        if 'S' in values:
            raise ConfigError("[schedule] s: not used by a ramp schedule (use s_max)")
        return _build('schedule', RampPrice, **values)
    raise ConfigError(f"[schedule] kind: expected 'constant' or 'ramp', got '{kind}'")


def _initial_density(values):
    kind = values.pop('kind', 'normal').lower()
    if kind == 'normal':
        if 'peak' in values:
            raise ConfigError("[initial_density] peak: not used by a normal density")
        return _build('initial_density', TruncatedNormal, **values)
    if kind == 'tent':
        extra = set(values) - {'peak'}
        if extra:
            raise ConfigError(f"[initial_density] {sorted(extra)[0]}: not used by a tent density")
        return _build('initial_density', Tent, **values)
    raise ConfigError(f"[initial_density] kind: expected 'normal' or 'tent', got '{kind}'")


def _solver(values):
    tau_min = values.pop('tau_min', None)
    tau_max = values.pop('tau_max', None)
    if (tau_min is None) != (tau_max is None):
        raise ConfigError("[solver] tau_min: tau_min and tau_max must be given together")
    if tau_min is not None:
        values['tau_bounds'] = (tau_min, tau_max)
    return _build('solver', SolverConfig, **values)


def parse_run_config(text, source='<string>'):
    """
    Parse INI text into a RunConfig

    Args:
        text: INI content
        source: Name used in error messages

    Returns:
        RunConfig
    """
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(f"{source}: {e}")

    sections = parser.sections()
    for section in sections:
        if section not in SECTIONS:
            raise ConfigError(f"[{section}]: unknown section")
    if sections and 'model' not in sections:
        raise ConfigError("missing [model] section")

    model_values = _read_section(parser, 'model')
    model = _build('model', ModelParams, **model_values)
    schedule = _schedule(_read_section(parser, 'schedule'))
    try:
        schedule.validate(model.T)
    except ValueError as e:
        raise ConfigError(f"[schedule] t_end: {e}")

    validation_values = _read_section(parser, 'validation')
    for name in ('particles', 'substeps', 'block_size'):
        if name in validation_values and validation_values[name] < 1:
            raise ConfigError(f"[validation] {name}: must be at least 1")

    return RunConfig(
        model=model,
        solver=_solver(_read_section(parser, 'solver')),
        schedule=schedule,
        initial_density=_initial_density(_read_section(parser, 'initial_density')),
        validation=ValidationConfig(**validation_values),
    )


def load_run_config(path):
    """
    Load a RunConfig from an INI file; an empty file gives the defaults

    Args:
        path: Path to the config file

    Returns:
        RunConfig
    """
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}")
    return parse_run_config(text, source=str(path))
