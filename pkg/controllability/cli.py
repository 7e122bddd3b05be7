"""
Command line runner: invariant suites, Gramian dumps, single steering runs
and the lambda sweep.

    python controllability_cli.py check --config configs/default.toml
    python controllability_cli.py steer --config configs/linear_e3.toml --lambda 0.01
    python controllability_cli.py sweep --config configs/linear_e3.toml --out results
"""

from __future__ import annotations

import argparse
import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .config_manager import SCHEMA_TAG, ConfigManager, get_config_manager
from .error_handler import (
    EXIT_CONFIG,
    EXIT_INVARIANT,
    EXIT_NONCONVERGED,
    EXIT_OK,
    ConfigurationError,
    ControllabilityError,
    get_error_handler,
    safe_execute,
)
from .evolution import CoefficientSpec, StepPropagators, TimeGrid, get_evolution_operator
from .inclusion import InclusionSpec, SelectionPolicy, TimeWeight
from .mild_solver import Impulse, ImpulseSchedule, SteeringProblem, steering_iteration
from .performance_monitor import get_performance_monitor
from .phase_space import build_history
from .spectral_state import ModeVector, SpatialGrid, StateVector, check_resolution, from_modes, modes_to_values
from .startup_validation import validate_startup
from .steering import ControlOperator, SteeringContext, gramian
from .structured_logger import get_structured_logger
from .validation_framework import get_validation_framework

REPORT_SCHEMA = "impulsive-steering-report/1"
SWEEP_COLUMNS = ('lambda', 'terminal_error', 'control_l2', 'cost', 'iters', 'converged')
REPORT_KEYS = {
    'check': ('is_valid', 'suites', 'failed', 'startup'),
    'gramian': ('modes', 'horizon', 'matrix', 'asymmetry', 'min_eigenvalue'),
    'steer': ('lambda', 'converged', 'iterations', 'terminal_error', 'terminal_identity_residual',
              'control_bound', 'growth_check', 'orbit_bound', 'self_checks'),
    'sweep': ('rows', 'monotone', 'linear', 'nonconverged'),
}
FORMATS = ('csv', 'json')


@dataclass(frozen=True)
class RunConfig:
    """Typed view of a validated configuration."""

    horizon: float
    steps: int
    points: int
    modes: int
    p: float
    coefficient: CoefficientSpec
    history: Dict[str, Any]
    nu: float
    delay: float
    window: float
    tail_tolerance: float
    inclusion: InclusionSpec
    policy: SelectionPolicy
    impulses: Tuple[Dict[str, Any], ...]
    target: Dict[str, Any]
    coupling: float
    gain: float
    lambdas: Tuple[float, ...]
    samples: int
    quadrature: float
    newton_tolerance: float
    newton_max_iter: int
    iteration_tolerance: float
    max_iter: int
    relaxation: float
    singular_floor: float
    impulse_snap: float
    seed: int
    workers: int
    snapshot: bool
    log_level: str

    @classmethod
    def from_manager(cls, manager: ConfigManager) -> "RunConfig":
        manager.ensure_valid()
        get = manager.get
        coefficient = CoefficientSpec(
            kind=get('coefficient.kind'),
            base=float(get('coefficient.base')),
            slope=float(get('coefficient.slope')),
            times=tuple(get('coefficient.times', [])),
            values=tuple(get('coefficient.values', [])),
            center=float(get('coefficient.center')),
            amplitude=float(get('coefficient.amplitude')),
            holder_order=float(get('coefficient.holder_order')),
            holder_const=float(get('coefficient.holder_const')),
        )
        weight = TimeWeight(
            kind=get('inclusion.weight_kind'),
            base=float(get('inclusion.weight')),
            rate=float(get('inclusion.weight_rate')),
            amplitude=float(get('inclusion.weight_amplitude')),
            frequency=float(get('inclusion.weight_frequency')),
        )
        delay = float(get('history.delay'))
        inclusion = InclusionSpec(
            envelope=get('inclusion.envelope'),
            epsilon=float(get('inclusion.epsilon')),
            level=float(get('inclusion.level')),
            delay=delay,
            weight=weight,
        )
        seed = int(get('run.seed'))
        policy = SelectionPolicy(
            kind=get('selection.policy'),
            mix=float(get('selection.mix')),
            mix_amplitude=float(get('selection.mix_amplitude')),
            mix_frequency=float(get('selection.mix_frequency')),
            seed=seed + int(get('selection.seed')),
        )
        history = {key: get(f'history.{key}') for key in ('kind', 'value', 'mode', 'decay', 'amplitude', 'spacing')}
        history['file'] = manager.resolve_path(get('history.file', ''))

        impulses = []
        for k, entry in enumerate(get('impulses', [])):
            entry = dict(entry)
            if entry.get('file'):
                entry['file'] = manager.resolve_path(entry['file'])
            entry['key'] = f'impulses[{k}]'
            impulses.append(entry)

        target = {
            'kind': get('target.kind'),
            'modes': {int(n): float(v) for n, v in dict(get('target.modes', {})).items()},
            'file': manager.resolve_path(get('target.file', '')),
        }

        return cls(
            horizon=float(get('grid.horizon')),
            steps=int(get('grid.steps')),
            points=int(get('grid.points')),
            modes=int(get('grid.modes')),
            p=float(get('grid.p')),
            coefficient=coefficient,
            history=history,
            nu=float(get('history.nu')),
            delay=delay,
            window=float(get('history.window')),
            # the stricter of the two tail settings decides the window
            tail_tolerance=min(float(get('history.tail_tolerance')), float(get('tolerances.tail'))),
            inclusion=inclusion,
            policy=policy,
            impulses=tuple(impulses),
            target=target,
            coupling=float(get('control.coupling')),
            gain=float(get('control.gain')),
            lambdas=tuple(float(v) for v in get('control.lambdas')),
            samples=int(get('control.samples')),
            quadrature=float(get('tolerances.quadrature')),
            newton_tolerance=float(get('tolerances.newton')),
            newton_max_iter=int(get('tolerances.newton_max_iter')),
            iteration_tolerance=float(get('tolerances.iteration')),
            max_iter=int(get('tolerances.max_iter')),
            relaxation=float(get('tolerances.relaxation')),
            singular_floor=float(get('tolerances.singular_floor')),
            impulse_snap=float(get('tolerances.impulse_snap')),
            seed=seed,
            workers=int(get('run.workers')),
            snapshot=bool(get('run.snapshot')),
            log_level=str(get('logging.level')).upper(),
        )

    @property
    def is_linear(self) -> bool:
        """F = {0}, no impulses and a Hilbert state space."""
        return self.inclusion.is_trivial and not self.impulses and self.p == 2.0


def _build_impulse(entry: Dict[str, Any], grid: SpatialGrid) -> Impulse:
    key = entry['key']
    if entry.get('file'):
        return Impulse.from_table(float(entry['time']), entry['file'], grid, key=key)
    return Impulse.separable(
        float(entry['time']), grid,
        scale=float(entry.get('scale', 1.0)),
        source=entry.get('source', 'sine'),
        source_mode=int(entry.get('source_mode', 1)),
        response=entry.get('response', 'sine'),
        response_mode=int(entry.get('response_mode', 1)),
        key=key,
    )


def _build_target(config: RunConfig, grid: SpatialGrid) -> StateVector:
    if config.target['kind'] == 'table':
        path = config.target['file']
        if not path or not os.path.exists(path):
            raise ConfigurationError(f"target table {path!r} not found", key='target.file')
        data = np.loadtxt(path, delimiter=',', skiprows=1, ndmin=2)
        if data.shape[1] < 2:
            raise ConfigurationError("target table needs columns xi, value", key='target.file')
        return StateVector(np.interp(grid.nodes, data[:, 0], data[:, 1]), grid)
    coeffs = np.zeros(config.modes)
    for n, value in config.target['modes'].items():
        coeffs[n - 1] = value
    return from_modes(ModeVector(coeffs), grid)


def build_problem(config: RunConfig, logger=None) -> SteeringProblem:
    """Assemble grids, propagators, history, impulses and target for one configuration."""
    check_resolution(config.modes, config.points)
    grid = SpatialGrid(config.points, config.p)
    evolution = get_evolution_operator(config.coefficient, config.horizon, config.modes)
    time_grid = TimeGrid(config.horizon, config.steps, tuple(float(e['time']) for e in config.impulses),
                         config.impulse_snap)
    control = ControlOperator(config.modes, config.coupling, config.gain)
    propagators = StepPropagators(evolution, time_grid, control.input_gram)
    context = SteeringContext.build(grid, propagators, control, config.newton_tolerance, config.newton_max_iter)

    history = config.history
    phi = build_history(
        history['kind'], grid, config.nu, config.delay,
        window=config.window,
        tail_tolerance=config.tail_tolerance,
        spacing=float(history['spacing']),
        value=float(history['value']),
        mode=int(history['mode']),
        decay=float(history['decay']),
        amplitude=float(history['amplitude']),
        file=history['file'] or None,
    )
    impulses = ImpulseSchedule.on_grid([_build_impulse(entry, grid) for entry in config.impulses], time_grid)
    target = _build_target(config, grid)

    if logger:
        logger.info("Problem assembled", {
            'modes': config.modes,
            'points': config.points,
            'steps': config.steps,
            'p': config.p,
            'history_window': phi.window,
            'impulse_nodes': list(impulses.nodes),
            'inclusion': config.inclusion.envelope
        })

    return SteeringProblem(
        grid=grid,
        propagators=propagators,
        context=context,
        phi=phi,
        target=target,
        inclusion=config.inclusion,
        policy=config.policy,
        impulses=impulses,
        tolerance=config.iteration_tolerance,
        max_iter=config.max_iter,
        relaxation=config.relaxation,
        lambdas=config.lambdas,
        unique_samples=config.samples,
        singular_floor=config.singular_floor,
    )


def _format_value(value):
    if isinstance(value, (bool, np.bool_)):
        return 'true' if value else 'false'
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.12e}"
    return value


def _to_builtin(value):
    if isinstance(value, dict):
        return {str(k): _to_builtin(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_builtin(v) for v in value]
    if isinstance(value, np.ndarray):
        return _to_builtin(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if np.isfinite(value) else None
    return value


def write_csv(path: str, rows: List[Dict], columns: Sequence[str]):
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.DictWriter(f, fieldnames=list(columns), lineterminator='\n')
        writer.writeheader()
        for row in rows:
            writer.writerow({key: _format_value(row.get(key)) for key in columns})
    return path


def write_json(path: str, payload: Dict):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(_to_builtin(payload), f, indent=2, sort_keys=True)
        f.write('\n')
    return path


def write_table(out_dir: str, name: str, rows: List[Dict], columns: Sequence[str], fmt: str) -> str:
    if fmt == 'json':
        return write_json(os.path.join(out_dir, f"{name}.json"),
                          {'schema_version': REPORT_SCHEMA, 'columns': list(columns), 'rows': rows})
    return write_csv(os.path.join(out_dir, f"{name}.csv"), rows, columns)


def validate_report_format(report: Dict) -> Dict:
    """Check a JSON report against the documented schema version and required keys"""
    result = {'is_valid': True, 'errors': [], 'warnings': []}
    if report.get('schema_version') != REPORT_SCHEMA:
        result['errors'].append(f"schema_version must be {REPORT_SCHEMA!r}, got {report.get('schema_version')!r}")
    command = report.get('command')
    if command not in REPORT_KEYS:
        result['errors'].append(f"unknown report command {command!r}")
    else:
        missing = [key for key in REPORT_KEYS[command] if key not in report]
        if missing:
            result['errors'].append(f"{command} report is missing {', '.join(missing)}")
    if 'performance' not in report:
        result['warnings'].append("report carries no performance block")
    result['is_valid'] = len(result['errors']) == 0
    return result


def _report(command: str, body: Dict, monitor) -> Dict:
    report = {'schema_version': REPORT_SCHEMA, 'config_schema': SCHEMA_TAG, 'command': command}
    report.update(body)
    report['performance'] = monitor.get_performance_stats()
    return report


def _emit_report(path: str, report: Dict, logger) -> str:
    verdict = validate_report_format(report)
    if not verdict['is_valid']:
        logger.error("Report does not match its schema", {'path': path, 'errors': verdict['errors']})
    return write_json(path, report)


def trajectory_rows(x, snapshot: bool = False) -> Tuple[List[Dict], List[str]]:
    """One row per node, plus a right-limit row at every impulse node."""
    modes = x.modes
    columns = ['t', 'side'] + [f'c{n}' for n in range(1, modes + 1)]
    if snapshot:
        columns += [f'x{i}' for i in range(x.grid.points)]

    def row(t, side, coeffs):
        entry = {'t': float(t), 'side': side}
        entry.update({f'c{n + 1}': float(c) for n, c in enumerate(coeffs)})
        if snapshot:
            values = modes_to_values(coeffs, x.grid)
            entry.update({f'x{i}': float(v) for i, v in enumerate(values)})
        return entry

    rows = []
    for j, t in enumerate(x.times):
        rows.append(row(t, 'left', x.coeffs[j]))
        if j in x.jumps:
            rows.append(row(t, 'right', x.jumps[j]))
    return rows, columns


def control_rows(control) -> Tuple[List[Dict], List[str]]:
    count = control.coeffs.shape[1]
    columns = ['t'] + [f'u{n}' for n in range(2, count + 2)]
    rows = []
    for t, coeffs in zip(control.times, control.coeffs):
        entry = {'t': float(t)}
        entry.update({f'u{n + 2}': float(c) for n, c in enumerate(coeffs)})
        rows.append(entry)
    return rows, columns


def self_checks(report, tolerance: float) -> Dict:
    identity_limit = 10.0 * tolerance
    checks = {
        'control_bound': bool(report.control_bound.get('holds')),
        'history_growth': bool(report.growth_check.get('all_hold')),
        'orbit_bound': bool(report.orbit_bound.get('holds')),
    }
    if report.converged:
        checks['terminal_identity'] = report.terminal_identity_residual <= identity_limit
    checks['all_passed'] = all(checks.values())
    checks['terminal_identity_limit'] = identity_limit
    return checks


def cmd_check(config: RunConfig, problem: SteeringProblem, out_dir: str, logger, monitor) -> Tuple[int, Dict]:
    startup = validate_startup(out_dir)
    for warning in startup['warnings']:
        logger.warning("Startup warning", {'warning': warning})

    framework = get_validation_framework(seed=config.seed, logger=logger)
    with monitor.track('check'):
        suites = framework.run_suites(problem)
        coefficient = config.coefficient.verify(config.horizon, tolerance=max(config.quadrature, 1e-12))
    logger.log_suite_result(coefficient)
    suites['suites'].append(coefficient)
    if not coefficient['is_valid']:
        suites['failed'].append('coefficient')

    is_valid = suites['is_valid'] and coefficient['is_valid'] and startup['success']
    report = _report('check', {
        'is_valid': is_valid,
        'suites': suites['suites'],
        'failed': suites['failed'],
        'startup': startup,
    }, monitor)
    _emit_report(os.path.join(out_dir, 'check.json'), report, logger)
    if is_valid:
        logger.info("All invariant suites passed", {'suites': len(suites['suites'])})
        return EXIT_OK, report
    logger.error("Invariant suites failed", {'failed': suites['failed'], 'startup_errors': startup['errors']})
    return EXIT_INVARIANT, report


def cmd_gramian(config: RunConfig, problem: SteeringProblem, out_dir: str, fmt: str, logger, monitor) -> Tuple[int, Dict]:
    with monitor.track('gramian'):
        psi = gramian(config.horizon, config.coefficient, config.modes, problem.context.control)
    report = _report('gramian', {
        'modes': psi.modes,
        'horizon': psi.horizon,
        'matrix': psi.matrix,
        'asymmetry': psi.asymmetry(),
        'min_eigenvalue': psi.min_eigenvalue(),
    }, monitor)
    if fmt == 'json':
        _emit_report(os.path.join(out_dir, 'gramian.json'), report, logger)
    else:
        write_csv(os.path.join(out_dir, 'gramian.csv'), psi.rows(), ('m', 'n', 'value'))
    logger.info("Gramian written", {'modes': psi.modes, 'asymmetry': report['asymmetry'],
                                    'min_eigenvalue': report['min_eigenvalue']})
    return EXIT_OK, report


def cmd_steer(config: RunConfig, problem: SteeringProblem, lam: float, out_dir: str, fmt: str,
              logger, monitor) -> Tuple[int, Dict]:
    with monitor.track('steer'):
        x, control, solve = steering_iteration(lam, problem, logger=logger)

    rows, columns = trajectory_rows(x, config.snapshot)
    write_table(out_dir, 'trajectory', rows, columns, fmt)
    rows, columns = control_rows(control)
    write_table(out_dir, 'control', rows, columns, fmt)

    body = solve.to_dict()
    body['self_checks'] = self_checks(solve, problem.tolerance)
    report = _report('steer', body, monitor)
    _emit_report(os.path.join(out_dir, 'report.json'), report, logger)
    logger.log_solve_report(body)

    if not solve.converged:
        logger.warning("Steering did not converge; artifacts written",
                       {'lambda': lam, 'iterations': solve.iterations, 'increment': solve.increment})
        return EXIT_NONCONVERGED, report
    if not body['self_checks']['all_passed']:
        logger.error("Steering self-checks failed", body['self_checks'])
        return EXIT_INVARIANT, report
    return EXIT_OK, report


def _sweep_row(lam: float, problem: SteeringProblem, logger) -> Dict:
    _, _, solve = steering_iteration(lam, problem, logger=logger)
    return {
        'lambda': lam,
        'terminal_error': solve.terminal_error,
        'control_l2': solve.control_l2,
        'cost': solve.cost,
        'iters': solve.iterations,
        'converged': solve.converged,
    }


def _failed_row(error, lam, *args, **kwargs) -> Dict:
    return {
        'lambda': lam,
        'terminal_error': float('nan'),
        'control_l2': float('nan'),
        'cost': float('nan'),
        'iters': 0,
        'converged': False,
        'error': str(error),
    }


def sweep_rows(lambdas: Sequence[float], problem: SteeringProblem, workers: int = 1,
               logger=None, error_handler=None) -> List[Dict]:
    """Rows in descending lambda order whatever the completion order."""
    run = safe_execute(_sweep_row, default_return=_failed_row, error_handler=error_handler)
    ordered = sorted(lambdas, reverse=True)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        rows = list(pool.map(lambda lam: run(lam, problem, logger), ordered))
    if logger:
        for row in rows:
            logger.log_sweep_row(row)
    return rows


def is_monotone(errors: Sequence[float], tolerance: float = 1e-12) -> bool:
    errors = np.asarray(errors, dtype=float)
    if errors.size < 2 or not np.all(np.isfinite(errors)):
        return False
    return bool(np.all(np.diff(errors) <= tolerance * np.maximum(1.0, errors[:-1])))


def plot_sweep(path: str, rows: List[Dict]) -> str:
    """Log-log SVG of terminal error against lambda."""
    plt.rcParams['svg.hashsalt'] = 'impulsive-steering'
    lam = np.array([row['lambda'] for row in rows], dtype=float)
    err = np.array([row['terminal_error'] for row in rows], dtype=float)
    keep = np.isfinite(err) & (err > 0)

    fig, ax = plt.subplots(figsize=(6, 4))
    if np.any(keep):
        ax.loglog(lam[keep], err[keep], 'o-', label='terminal error')
        ax.set_xlim(lam.min() * 0.5, lam.max() * 2.0)
    else:
        ax.text(0.5, 0.5, 'all terminal errors are zero', ha='center', va='center', transform=ax.transAxes)
    ax.set_xlabel('lambda')
    ax.set_ylabel('||x(T) - x_T||')
    ax.set_title('Terminal error against regularization')
    ax.grid(True, which='both', alpha=0.3)
    if np.any(keep):
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, format='svg', metadata={'Date': None})
    plt.close(fig)
    return path


def cmd_sweep(config: RunConfig, problem: SteeringProblem, out_dir: str, fmt: str, logger, monitor,
              error_handler=None) -> Tuple[int, Dict]:
    if len(config.lambdas) < 3:
        raise ConfigurationError(f"sweep needs at least 3 lambda values, got {len(config.lambdas)}",
                                 key='control.lambdas')
    with monitor.track('sweep'):
        rows = sweep_rows(config.lambdas, problem, config.workers, logger, error_handler)

    write_table(out_dir, 'sweep', rows, SWEEP_COLUMNS, fmt)
    plot_sweep(os.path.join(out_dir, 'sweep.svg'), rows)

    nonconverged = [row['lambda'] for row in rows if not row['converged']]
    monotone = is_monotone([row['terminal_error'] for row in rows])
    report = _report('sweep', {
        'rows': rows,
        'monotone': monotone,
        'linear': config.is_linear,
        'nonconverged': nonconverged,
    }, monitor)
    _emit_report(os.path.join(out_dir, 'sweep_report.json'), report, logger)

    if config.is_linear and not monotone:
        logger.error("Terminal error is not monotone in lambda for the linear case",
                     {'errors': [row['terminal_error'] for row in rows]})
        return EXIT_INVARIANT, report
    if nonconverged:
        logger.warning("Sweep rows did not converge", {'lambdas': nonconverged})
        return EXIT_NONCONVERGED, report
    return EXIT_OK, report


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='controllability',
        description='Approximate controllability experiments for impulsive delayed evolution inclusions',
    )
    parser.add_argument('command', choices=('check', 'gramian', 'steer', 'sweep'))
    parser.add_argument('--config', default=None, help='TOML run configuration (defaults are used when omitted)')
    parser.add_argument('--lambda', dest='lam', type=float, default=None,
                        help='regularization parameter for steer (first configured value by default)')
    parser.add_argument('--out', default='results', help='output directory')
    parser.add_argument('--seed', type=int, default=None, help='overrides run.seed')
    parser.add_argument('--format', dest='fmt', choices=FORMATS, default='csv', help='table format')
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logger = get_structured_logger()
    error_handler = get_error_handler(logger)
    monitor = get_performance_monitor(logger)

    try:
        manager = get_config_manager(args.config)
        if args.seed is not None:
            manager.set('run.seed', args.seed)
        config = RunConfig.from_manager(manager)
        logger.set_level(config.log_level)
        if args.lam is not None and not args.lam > 0:
            raise ConfigurationError(f"lambda must be strictly positive, got {args.lam}", key='--lambda')
        os.makedirs(args.out, exist_ok=True)
        with monitor.track('build_problem'):
            problem = build_problem(config, logger)
    except (ControllabilityError, ValueError, OSError) as e:
        error_handler.handle_error(e, 'configuration')
        return EXIT_CONFIG

    logger.info("Running command", {'command': args.command, 'config': args.config, 'out': args.out,
                                    'seed': config.seed})
    try:
        if args.command == 'check':
            code, _ = cmd_check(config, problem, args.out, logger, monitor)
        elif args.command == 'gramian':
            code, _ = cmd_gramian(config, problem, args.out, args.fmt, logger, monitor)
        elif args.command == 'steer':
            lam = args.lam if args.lam is not None else config.lambdas[0]
            code, _ = cmd_steer(config, problem, lam, args.out, args.fmt, logger, monitor)
        else:
            code, _ = cmd_sweep(config, problem, args.out, args.fmt, logger, monitor, error_handler)
    except ControllabilityError as e:
        error_handler.handle_error(e, args.command)
        return error_handler.exit_code_for(e)
    return code
