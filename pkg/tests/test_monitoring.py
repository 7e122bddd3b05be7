import logging

import pytest

from controllability.convergence_monitor import ConvergenceMonitor
from controllability.error_handler import (
    EXIT_CONFIG,
    EXIT_FAILURE,
    EXIT_NONCONVERGED,
    ConfigurationError,
    InvalidInputError,
    SolverFailureError,
    get_error_handler,
    safe_execute,
)
from controllability.performance_monitor import get_performance_monitor
from controllability.startup_validation import validate_startup
from controllability.structured_logger import get_structured_logger


def test_log_lines_carry_json_data(caplog):
    logger = get_structured_logger('DEBUG')
    with caplog.at_level(logging.DEBUG, logger='controllability'):
        logger.info("Sweep row", {'lambda': 0.1, 'converged': True})
        logger.log_iteration(0.1, 3, 1e-9, 1.0)
    assert 'Sweep row | Data: {"lambda": 0.1, "converged": true}' in caplog.messages
    assert any(message.startswith('Fixed-point iteration | Data: ') for message in caplog.messages)


def test_exit_codes_follow_the_error_kind():
    handler = get_error_handler()
    assert handler.exit_code_for(ConfigurationError("bad", key='grid.p')) == EXIT_CONFIG
    assert handler.exit_code_for(SolverFailureError("stalled", 1e-3, 50)) == EXIT_NONCONVERGED
    assert handler.exit_code_for(InvalidInputError("bad")) == EXIT_FAILURE


def test_configuration_error_message():
    error = ConfigurationError("must be positive", key='control.lambdas', line=12)
    assert str(error) == "line 12: control.lambdas: must be positive"
    assert isinstance(InvalidInputError("x"), ValueError)


def test_handle_error_counts_and_annotates():
    handler = get_error_handler()
    info = handler.handle_error(SolverFailureError("stalled", 2e-3, 7), 'steer')
    handler.handle_error(SolverFailureError("stalled again"), 'steer')
    assert info['residual'] == 2e-3
    assert info['iterations'] == 7
    assert handler.get_error_stats() == {'SolverFailureError': 2}


def test_safe_execute_builds_the_fallback_from_the_error():
    def fail(lam):
        raise SolverFailureError("no", 1.0, 3)

    handler = get_error_handler()
    run = safe_execute(fail, default_return=lambda e, lam: {'lambda': lam, 'error': str(e)}, error_handler=handler)
    row = run(0.5)
    assert row['lambda'] == 0.5
    assert 'no' in row['error']
    with pytest.raises(ZeroDivisionError):
        safe_execute(lambda: 1 / 0, default_return=0.0)()


def test_performance_monitor_tracks_blocks():
    monitor = get_performance_monitor()
    with monitor.track('gramian'):
        pass
    with monitor.track('gramian'):
        pass
    stats = monitor.get_performance_stats()
    assert stats['operations']['gramian']['count'] == 2
    assert set(stats['memory']) == {'rss_mb', 'percent', 'available_mb'}
    monitor.reset_metrics()
    assert monitor.get_component_breakdown() == {}


def test_convergence_monitor_estimates_contraction():
    monitor = ConvergenceMonitor()
    for k in range(6):
        monitor.monitor(0.5 ** k)
    assert abs(monitor.contraction_estimate() - 0.5) < 1e-12
    assert monitor.get_recent_trend() == 'improving'
    assert not monitor.is_oscillating()
    for value in (1.0, 2.0, 1.5, 3.0):
        monitor.monitor(value)
    assert monitor.is_oscillating()
    assert monitor.get_statistics()['count'] == 10
    monitor.reset()
    assert monitor.get_statistics()['count'] == 0


def test_startup_validation(tmp_path):
    result = validate_startup(str(tmp_path / 'results'))
    assert result['success'], result['errors']
    assert (tmp_path / 'results').is_dir()
