import csv
import json

import pytest

from controllability.cli import REPORT_SCHEMA, SWEEP_COLUMNS, is_monotone, main, validate_report_format
from controllability.error_handler import EXIT_CONFIG, EXIT_INVARIANT, EXIT_NONCONVERGED, EXIT_OK

from conftest import LINEAR_LAMBDAS, LINEAR_TOML, SHIPPED_IMPULSIVE, output_files


def read_json(path):
    with open(path, encoding='utf-8') as f:
        return json.load(f)


def read_csv(path):
    with open(path, newline='', encoding='utf-8') as f:
        return list(csv.DictReader(f))


def test_check_passes_on_the_linear_case(tmp_path, linear_config_path):
    out = tmp_path / 'out'
    assert main(['check', '--config', linear_config_path, '--out', str(out)]) == EXIT_OK
    report = read_json(out / 'check.json')
    assert report['is_valid']
    assert report['failed'] == []
    assert validate_report_format(report)['is_valid']
    assert 'coefficient' in [suite['name'] for suite in report['suites']]


def test_check_fails_without_control(tmp_path, write_config):
    config = write_config(LINEAR_TOML.replace('samples = 32', 'samples = 32\ngain = 0.0'))
    out = tmp_path / 'out'
    assert main(['check', '--config', config, '--out', str(out)]) == EXIT_INVARIANT
    report = read_json(out / 'check.json')
    assert 'unique_continuation' in report['failed']


def test_invalid_exponent_is_a_configuration_error(tmp_path, write_config):
    config = write_config(LINEAR_TOML.replace('p = 2.0', 'p = 1.0'))
    out = tmp_path / 'out'
    assert main(['check', '--config', config, '--out', str(out)]) == EXIT_CONFIG
    assert not out.exists()


def test_nonpositive_lambda_is_rejected(tmp_path, linear_config_path):
    assert main(['steer', '--config', linear_config_path, '--lambda', '0', '--out', str(tmp_path)]) == EXIT_CONFIG


def test_steer_writes_trajectory_control_and_report(tmp_path, linear_config_path):
    out = tmp_path / 'out'
    assert main(['steer', '--config', linear_config_path, '--lambda', '0.01', '--out', str(out)]) == EXIT_OK
    assert output_files(out) == ['control.csv', 'report.json', 'trajectory.csv']
    report = read_json(out / 'report.json')
    assert report['schema_version'] == REPORT_SCHEMA
    assert report['lambda'] == 0.01
    assert report['converged']
    assert report['terminal_error'] == pytest.approx(0.1525424, abs=1e-7)
    assert report['self_checks']['all_passed']
    trajectory = read_csv(out / 'trajectory.csv')
    assert len(trajectory) == 51
    assert float(trajectory[-1]['c3']) == pytest.approx(1.0 - 0.1525424, abs=1e-7)
    control = read_csv(out / 'control.csv')
    assert list(control[0]) == ['t'] + [f'u{n}' for n in range(2, 9)]


def test_steer_json_tables(tmp_path, impulsive_config_path):
    out = tmp_path / 'out'
    assert main(['steer', '--config', impulsive_config_path, '--format', 'json', '--out', str(out)]) == EXIT_OK
    trajectory = read_json(out / 'trajectory.json')
    sides = [row['side'] for row in trajectory['rows']]
    assert sides.count('right') == 1
    assert len(trajectory['rows']) == 42


def test_exhausted_iterations_exit_nonconverged(tmp_path, write_config):
    config = write_config(LINEAR_TOML + '\n[tolerances]\nmax_iter = 1\n')
    out = tmp_path / 'out'
    assert main(['steer', '--config', config, '--out', str(out)]) == EXIT_NONCONVERGED
    assert output_files(out) == ['control.csv', 'report.json', 'trajectory.csv']
    assert not read_json(out / 'report.json')['converged']


def test_sweep_is_reproducible(tmp_path, linear_config_path):
    first, second = tmp_path / 'first', tmp_path / 'second'
    assert main(['sweep', '--config', linear_config_path, '--out', str(first)]) == EXIT_OK
    assert main(['sweep', '--config', linear_config_path, '--out', str(second)]) == EXIT_OK
    assert output_files(first) == ['sweep.csv', 'sweep.svg', 'sweep_report.json']
    assert (first / 'sweep.csv').read_bytes() == (second / 'sweep.csv').read_bytes()
    assert (first / 'sweep.svg').read_text(encoding='utf-8').lstrip().startswith('<?xml')

    rows = read_csv(first / 'sweep.csv')
    assert list(rows[0]) == list(SWEEP_COLUMNS)
    assert [float(row['lambda']) for row in rows] == list(LINEAR_LAMBDAS)
    assert all(row['converged'] == 'true' for row in rows)
    report = read_json(first / 'sweep_report.json')
    assert report['monotone'] and report['linear']


def test_sweep_needs_three_lambdas(tmp_path, write_config):
    config = write_config(LINEAR_TOML.replace('lambdas = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5]', 'lambdas = [1e-1, 1e-2]'))
    assert main(['sweep', '--config', config, '--out', str(tmp_path / 'out')]) == EXIT_CONFIG


def test_gramian_table(tmp_path, linear_config_path):
    out = tmp_path / 'out'
    assert main(['gramian', '--config', linear_config_path, '--out', str(out)]) == EXIT_OK
    rows = read_csv(out / 'gramian.csv')
    assert len(rows) == 64
    assert float(rows[0]['value']) == pytest.approx(1.7293294, abs=5e-8)


def test_report_format_validation():
    verdict = validate_report_format({'command': 'steer'})
    assert not verdict['is_valid']
    assert any('schema_version' in error for error in verdict['errors'])
    assert verdict['warnings']


def test_monotonicity_helper():
    assert is_monotone([0.6, 0.15, 0.02])
    assert not is_monotone([0.6, 0.7])
    assert not is_monotone([0.6])
    assert not is_monotone([0.6, float('nan')])


def test_steer_on_the_shipped_lp_config(tmp_path):
    out = tmp_path / 'out'
    assert main(['steer', '--config', SHIPPED_IMPULSIVE, '--lambda', '0.01', '--out', str(out)]) == EXIT_OK
    report = read_json(out / 'report.json')
    assert report['converged']
    assert report['resolvent_method'] == 'newton'
    assert report['terminal_identity_residual'] <= 1e-8
    assert report['self_checks']['all_passed']
    sides = [row['side'] for row in read_csv(out / 'trajectory.csv')]
    assert sides.count('right') == 2
