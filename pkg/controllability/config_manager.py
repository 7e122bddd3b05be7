import copy
import os
import re
try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib
from typing import Any, Dict, List, Optional, Tuple

from .error_handler import ConfigurationError

SCHEMA_TAG = "impulsive-steering/1"
LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL')

_SECTION = re.compile(r'^\s*\[\s*([A-Za-z0-9_.]+)\s*\]\s*(#.*)?$')
_ARRAY_SECTION = re.compile(r'^\s*\[\[\s*([A-Za-z0-9_.]+)\s*\]\]\s*(#.*)?$')
_KEY = re.compile(r'^\s*("?[A-Za-z0-9_.-]+"?)\s*=')


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


class ConfigManager:
    def __init__(self):
        self.config = {}
        self.config_path = None
        self.key_lines = {}
        self.load_default_config()
        self.load_environment_config()

    def load_default_config(self):
        """Load default configuration"""
        self.config = {
            'schema': SCHEMA_TAG,
            'grid': {
                'horizon': 1.0,
                'steps': 400,
                'points': 513,
                'modes': 32,
                'p': 2.0
            },
            'coefficient': {
                'kind': 'constant',
                'base': 1.0,
                'slope': 0.0,
                'times': [],
                'values': [],
                'center': 0.0,
                'amplitude': 0.0,
                'holder_order': 1.0,
                'holder_const': 0.0
            },
            'history': {
                'kind': 'zero',
                'value': 0.0,
                'mode': 1,
                'decay': 0.0,
                'amplitude': 1.0,
                'file': '',
                'nu': 1.0,
                'delay': 0.5,
                'window': 0.0,
                'tail_tolerance': 1e-12,
                'spacing': 0.05
            },
            'inclusion': {
                'envelope': 'zero',
                'epsilon': 0.0,
                'level': 0.0,
                'weight_kind': 'constant',
                'weight': 1.0,
                'weight_rate': 0.0,
                'weight_amplitude': 0.0,
                'weight_frequency': 0.0
            },
            'selection': {
                'policy': 'midpoint',
                'mix': 0.5,
                'mix_amplitude': 0.0,
                'mix_frequency': 0.0,
                'seed': 0
            },
            'impulses': [],
            'target': {
                'kind': 'modes',
                'modes': {'3': 1.0},
                'file': ''
            },
            'control': {
                'coupling': 2.0,
                'gain': 1.0,
                'lambdas': [1e-1, 1e-2, 1e-3, 1e-4, 1e-5],
                'samples': 64
            },
            'tolerances': {
                'quadrature': 1e-10,
                'newton': 1e-10,
                'newton_max_iter': 50,
                'iteration': 1e-8,
                'max_iter': 200,
                'relaxation': 1.0,
                'singular_floor': 1e-10,
                'tail': 1e-12,
                'impulse_snap': 0.5
            },
            'run': {
                'seed': 0,
                'workers': 1,
                'snapshot': False
            },
            'logging': {
                'level': 'INFO'
            }
        }

    def load_environment_config(self):
        """Load configuration from environment variables"""
        env_mappings = {
            'STEER_LOG_LEVEL': ['logging', 'level'],
            'STEER_SEED': ['run', 'seed'],
            'STEER_WORKERS': ['run', 'workers'],
            'STEER_STEPS': ['grid', 'steps'],
            'STEER_MODES': ['grid', 'modes'],
            'STEER_POINTS': ['grid', 'points']
        }

        for env_var, config_path in env_mappings.items():
            value = os.getenv(env_var)
            if value is not None:
                self._set_nested_config(config_path, self._convert_env_value(value))

    def load_config_file(self, config_path: str):
        """Overlay a TOML run file; environment variables keep precedence"""
        if not os.path.exists(config_path):
            raise ConfigurationError(f"configuration file {config_path} not found")
        with open(config_path, 'rb') as f:
            raw = f.read()
        try:
            file_config = tomllib.loads(raw.decode('utf-8'))
        except tomllib.TOMLDecodeError as e:
            match = re.search(r'line (\d+)', str(e))
            line = int(match.group(1)) if match else None
            raise ConfigurationError(f"TOML syntax error: {e}", key=os.path.basename(config_path), line=line) from e
        except UnicodeDecodeError as e:
            raise ConfigurationError(f"configuration file is not UTF-8: {e}") from e

        self.config_path = config_path
        self.key_lines = self._index_key_lines(raw.decode('utf-8'))
        self._merge_config(self.config, file_config)
        self.load_environment_config()

    def _index_key_lines(self, text: str) -> Dict[str, int]:
        """Map dotted keys (impulses[k].time for arrays of tables) to their line in the file"""
        lines = {}
        section = ''
        array_counts = {}
        for number, line in enumerate(text.splitlines(), start=1):
            array_match = _ARRAY_SECTION.match(line)
            if array_match:
                name = array_match.group(1)
                index = array_counts.get(name, 0)
                array_counts[name] = index + 1
                section = f"{name}[{index}]"
                lines.setdefault(section, number)
                continue
            section_match = _SECTION.match(line)
            if section_match:
                section = section_match.group(1)
                lines.setdefault(section, number)
                continue
            key_match = _KEY.match(line)
            if key_match:
                key = key_match.group(1).strip('"')
                dotted = f"{section}.{key}" if section else key
                lines.setdefault(dotted, number)
        return lines

    def line_of(self, key: str) -> Optional[int]:
        """Line of a dotted key in the loaded file, falling back to its section"""
        while key:
            if key in self.key_lines:
                return self.key_lines[key]
            if '.' not in key:
                return None
            key = key.rsplit('.', 1)[0]
        return None

    def get(self, key: str, default: Any = None) -> Any:
        """Get configuration value by key (supports dot notation)"""
        keys = key.split('.')
        value = self.config

        try:
            for k in keys:
                value = value[k]
            return value
        except (KeyError, TypeError):
            return default

    def set(self, key: str, value: Any):
        """Set configuration value by key (supports dot notation)"""
        keys = key.split('.')
        self._set_nested_config(keys, value)

    def _set_nested_config(self, keys: list, value: Any):
        """Set nested configuration value"""
        config = self.config
        for key in keys[:-1]:
            if key not in config:
                config[key] = {}
            config = config[key]

        config[keys[-1]] = self._convert_env_value(value)

    def _convert_env_value(self, value: str) -> Any:
        """Convert environment variable string to appropriate type"""
        if isinstance(value, str):
            if value.lower() in ('true', 'false'):
                return value.lower() == 'true'

            try:
                if '.' not in value and 'e' not in value.lower():
                    return int(value)
            except ValueError:
                pass

            try:
                return float(value)
            except ValueError:
                pass

        return value

    @staticmethod
    def _is_section(table) -> bool:
        """Sections are keyed by setting names; data tables (mode = coefficient) are not."""
        return isinstance(table, dict) and all(str(key).isidentifier() for key in table)

    def _merge_config(self, base: dict, override: dict):
        """Merge override config into base config; lists and data tables replace wholesale"""
        for key, value in override.items():
            if key in base and self._is_section(base[key]) and self._is_section(value):
                self._merge_config(base[key], value)
            else:
                base[key] = value

    def get_all(self) -> Dict[str, Any]:
        """Get all configuration"""
        return copy.deepcopy(self.config)

    def _error(self, key: str, message: str) -> str:
        line = self.line_of(key)
        if line is None:
            return f"{key}: {message}"
        return f"line {line}: {key}: {message}"

    def validate_config(self) -> Tuple[bool, List[str]]:
        """Validate configuration and return (is_valid, errors)"""
        errors = []

        def check(key, condition, message):
            if not condition:
                errors.append(self._error(key, message))
            return condition

        check('schema', self.get('schema') == SCHEMA_TAG, f"unsupported schema tag {self.get('schema')!r}, expected {SCHEMA_TAG!r}")

        p = self.get('grid.p')
        check('grid.p', _is_number(p) and 1.0 < p < float('inf'), f"p must be a number in (1, inf), got {p!r}")
        points = self.get('grid.points')
        check('grid.points', _is_int(points) and points >= 4, f"points must be an integer >= 4, got {points!r}")
        modes = self.get('grid.modes')
        if check('grid.modes', _is_int(modes) and modes >= 2, f"modes must be an integer >= 2, got {modes!r}") and _is_int(points):
            check('grid.modes', 2 * modes <= points, f"{modes} modes cannot be resolved on {points} points (need modes <= points/2)")
        horizon = self.get('grid.horizon')
        horizon_ok = check('grid.horizon', _is_number(horizon) and horizon > 0, f"horizon must be positive, got {horizon!r}")
        steps = self.get('grid.steps')
        check('grid.steps', _is_int(steps) and steps >= 2, f"steps must be an integer >= 2, got {steps!r}")

        self._validate_coefficient(check, horizon if horizon_ok else None)
        self._validate_history(check)
        self._validate_inclusion(check)
        self._validate_selection(check)
        self._validate_impulses(check, horizon if horizon_ok else None)
        self._validate_target(check, modes if _is_int(modes) else None)
        self._validate_control(check, modes if _is_int(modes) else None)
        self._validate_tolerances(check)

        workers = self.get('run.workers')
        check('run.workers', _is_int(workers) and workers >= 1, f"workers must be an integer >= 1, got {workers!r}")
        seed = self.get('run.seed')
        check('run.seed', _is_int(seed) and seed >= 0, f"seed must be a nonnegative integer, got {seed!r}")
        level = str(self.get('logging.level', '')).upper()
        check('logging.level', level in LOG_LEVELS, f"level must be one of {LOG_LEVELS}, got {self.get('logging.level')!r}")

        return len(errors) == 0, errors

    def _validate_coefficient(self, check, horizon):
        kind = self.get('coefficient.kind')
        kinds = ('constant', 'affine', 'table', 'holder')
        if not check('coefficient.kind', kind in kinds, f"kind must be one of {kinds}, got {kind!r}"):
            return
        for key in ('base', 'slope', 'center', 'amplitude', 'holder_order', 'holder_const'):
            value = self.get(f'coefficient.{key}')
            check(f'coefficient.{key}', _is_number(value), f"must be a number, got {value!r}")
        order = self.get('coefficient.holder_order')
        check('coefficient.holder_order', _is_number(order) and 0 < order <= 1, f"holder_order must lie in (0, 1], got {order!r}")
        holder_const = self.get('coefficient.holder_const')
        check('coefficient.holder_const', _is_number(holder_const) and holder_const >= 0, "holder_const must be nonnegative")
        if kind in ('constant', 'holder'):
            base = self.get('coefficient.base')
            check('coefficient.base', _is_number(base) and base > 0, f"base must be positive, got {base!r}")
        if kind == 'table':
            times = self.get('coefficient.times', [])
            values = self.get('coefficient.values', [])
            ok = check('coefficient.times', isinstance(times, list) and len(times) >= 2 and all(_is_number(t) for t in times),
                       "table needs at least two numeric times")
            ok = check('coefficient.values', isinstance(values, list) and len(values) == len(times or [])
                       and all(_is_number(v) and v > 0 for v in values),
                       "table values must be positive and match the times") and ok
            if ok:
                check('coefficient.times', all(b > a for a, b in zip(times, times[1:])), "table times must be strictly increasing")
                if horizon is not None:
                    check('coefficient.times', times[0] <= 0 and times[-1] >= horizon, f"table times must cover [0, {horizon}]")

    def _validate_history(self, check):
        kind = self.get('history.kind')
        kinds = ('zero', 'constant', 'mode', 'table')
        check('history.kind', kind in kinds, f"kind must be one of {kinds}, got {kind!r}")
        nu = self.get('history.nu')
        check('history.nu', _is_number(nu) and nu > 0, f"nu must be positive, got {nu!r}")
        delay = self.get('history.delay')
        delay_ok = check('history.delay', _is_number(delay) and delay > 0, f"delay must be positive, got {delay!r}")
        window = self.get('history.window')
        if check('history.window', _is_number(window) and window >= 0, f"window must be nonnegative, got {window!r}") and delay_ok:
            check('history.window', window == 0 or window >= delay, f"window {window} shorter than the delay {delay}")
        tail = self.get('history.tail_tolerance')
        check('history.tail_tolerance', _is_number(tail) and 0 < tail < 1, f"tail_tolerance must lie in (0, 1), got {tail!r}")
        spacing = self.get('history.spacing')
        check('history.spacing', _is_number(spacing) and spacing > 0, f"spacing must be positive, got {spacing!r}")
        mode = self.get('history.mode')
        check('history.mode', _is_int(mode) and mode >= 1, f"mode must be a positive integer, got {mode!r}")
        for key in ('value', 'decay', 'amplitude'):
            value = self.get(f'history.{key}')
            check(f'history.{key}', _is_number(value), f"must be a number, got {value!r}")
        if kind == 'table':
            path = self.resolve_path(self.get('history.file', ''))
            check('history.file', bool(path) and os.path.exists(path), f"history table {path!r} not found")

    def _validate_inclusion(self, check):
        envelope = self.get('inclusion.envelope')
        kinds = ('zero', 'tanh', 'sine', 'constant')
        check('inclusion.envelope', envelope in kinds, f"envelope must be one of {kinds}, got {envelope!r}")
        for key in ('epsilon', 'weight', 'weight_rate'):
            value = self.get(f'inclusion.{key}')
            check(f'inclusion.{key}', _is_number(value) and value >= 0, f"{key} must be a nonnegative number, got {value!r}")
        for key in ('level', 'weight_amplitude', 'weight_frequency'):
            value = self.get(f'inclusion.{key}')
            check(f'inclusion.{key}', _is_number(value), f"must be a number, got {value!r}")
        weight_kind = self.get('inclusion.weight_kind')
        weight_kinds = ('constant', 'exponential', 'sinusoid')
        if check('inclusion.weight_kind', weight_kind in weight_kinds, f"weight_kind must be one of {weight_kinds}, got {weight_kind!r}"):
            if weight_kind == 'sinusoid' and _is_number(self.get('inclusion.weight_amplitude')):
                check('inclusion.weight_amplitude', abs(self.get('inclusion.weight_amplitude')) <= self.get('inclusion.weight', 0),
                      "sinusoid weight needs |weight_amplitude| <= weight")

    def _validate_selection(self, check):
        policy = self.get('selection.policy')
        kinds = ('lower', 'upper', 'midpoint', 'convex_mix', 'seeded_random')
        check('selection.policy', policy in kinds, f"policy must be one of {kinds}, got {policy!r}")
        mix = self.get('selection.mix')
        check('selection.mix', _is_number(mix) and 0 <= mix <= 1, f"mix must lie in [0, 1], got {mix!r}")
        seed = self.get('selection.seed')
        check('selection.seed', _is_int(seed) and seed >= 0, f"seed must be a nonnegative integer, got {seed!r}")

    def _validate_impulses(self, check, horizon):
        impulses = self.get('impulses', [])
        if not check('impulses', isinstance(impulses, list), "impulses must be an array of tables"):
            return
        previous = None
        for k, impulse in enumerate(impulses):
            key = f'impulses[{k}]'
            if not check(key, isinstance(impulse, dict), "impulse entry must be a table"):
                continue
            time = impulse.get('time')
            if check(f'{key}.time', _is_number(time), f"time must be a number, got {time!r}") and horizon is not None:
                check(f'{key}.time', 0 < time < horizon, f"time {time} must lie inside (0, {horizon})")
                if previous is not None:
                    check(f'{key}.time', time > previous, "impulse times must be strictly increasing")
                previous = time
            scale = impulse.get('scale', 1.0)
            check(f'{key}.scale', _is_number(scale), f"scale must be a number, got {scale!r}")
            if impulse.get('file'):
                path = self.resolve_path(impulse['file'])
                check(f'{key}.file', os.path.exists(path), f"kernel table {path!r} not found")
                continue
            for side in ('source', 'response'):
                shape = impulse.get(side, 'sine')
                check(f'{key}.{side}', shape in ('sine', 'constant'), f"{side} must be 'sine' or 'constant', got {shape!r}")
                mode = impulse.get(f'{side}_mode', 1)
                check(f'{key}.{side}_mode', _is_int(mode) and mode >= 1, f"{side}_mode must be a positive integer")

    def _validate_target(self, check, modes):
        kind = self.get('target.kind')
        if not check('target.kind', kind in ('modes', 'table'), f"kind must be 'modes' or 'table', got {kind!r}"):
            return
        if kind == 'table':
            path = self.resolve_path(self.get('target.file', ''))
            check('target.file', bool(path) and os.path.exists(path), f"target table {path!r} not found")
            return
        combination = self.get('target.modes', {})
        if not check('target.modes', isinstance(combination, dict), "modes must be a table of mode = coefficient"):
            return
        for name, value in combination.items():
            valid = str(name).isdigit() and int(name) >= 1 and (modes is None or int(name) <= modes)
            check(f'target.modes.{name}', valid, f"mode index {name!r} must be an integer in [1, {modes}]")
            check(f'target.modes.{name}', _is_number(value), f"coefficient must be a number, got {value!r}")

    def _validate_control(self, check, modes):
        lambdas = self.get('control.lambdas')
        if check('control.lambdas', isinstance(lambdas, list) and len(lambdas) > 0 and all(_is_number(v) for v in lambdas),
                 "lambdas must be a non-empty list of numbers"):
            check('control.lambdas', all(v > 0 for v in lambdas), "lambda values must be strictly positive")
            check('control.lambdas', all(b < a for a, b in zip(lambdas, lambdas[1:])), "lambda values must be sorted strictly descending")
        samples = self.get('control.samples')
        if check('control.samples', _is_int(samples), f"samples must be an integer, got {samples!r}") and modes is not None:
            check('control.samples', samples >= modes, f"samples must be at least the mode count {modes}")
        coupling = self.get('control.coupling')
        check('control.coupling', _is_number(coupling), f"coupling must be a number, got {coupling!r}")
        gain = self.get('control.gain')
        check('control.gain', _is_number(gain) and gain >= 0, f"gain must be nonnegative, got {gain!r}")

    def _validate_tolerances(self, check):
        for key in ('quadrature', 'newton', 'iteration', 'singular_floor', 'tail'):
            value = self.get(f'tolerances.{key}')
            check(f'tolerances.{key}', _is_number(value) and value > 0, f"{key} must be positive, got {value!r}")
        for key in ('newton_max_iter', 'max_iter'):
            value = self.get(f'tolerances.{key}')
            check(f'tolerances.{key}', _is_int(value) and value >= 1, f"{key} must be a positive integer, got {value!r}")
        relaxation = self.get('tolerances.relaxation')
        check('tolerances.relaxation', _is_number(relaxation) and 0 < relaxation <= 1, f"relaxation must lie in (0, 1], got {relaxation!r}")
        snap = self.get('tolerances.impulse_snap')
        check('tolerances.impulse_snap', _is_number(snap) and 0 < snap <= 0.5, f"impulse_snap must lie in (0, 0.5], got {snap!r}")

    def resolve_path(self, path: str) -> str:
        """Resolve a path relative to the loaded configuration file"""
        if not path or os.path.isabs(path) or self.config_path is None:
            return path
        return os.path.join(os.path.dirname(os.path.abspath(self.config_path)), path)

    def ensure_valid(self):
        """Raise ConfigurationError listing every validation failure"""
        is_valid, errors = self.validate_config()
        if not is_valid:
            first = errors[0]
            match = re.match(r'line (\d+): ', first)
            raise ConfigurationError("; ".join(errors), line=int(match.group(1)) if match else None)
        return self


def get_config_manager(config_path: Optional[str] = None) -> ConfigManager:
    """Build a config manager, overlaying the run file when given"""
    manager = ConfigManager()
    if config_path:
        manager.load_config_file(config_path)
    return manager
