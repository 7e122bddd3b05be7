import pytest

from controllability.config_manager import SCHEMA_TAG, ConfigManager, get_config_manager
from controllability.error_handler import ConfigurationError

from conftest import LINEAR_TOML, load_run_config


def test_defaults_are_valid():
    manager = ConfigManager()
    is_valid, errors = manager.validate_config()
    assert is_valid, errors
    assert manager.get('schema') == SCHEMA_TAG
    assert manager.get('grid.modes') == 32
    assert manager.get('grid.nothing', 'fallback') == 'fallback'


def test_errors_carry_the_file_line(write_config):
    path = write_config("""
        schema = "impulsive-steering/1"

        [grid]
        points = 33
        p = 1.0
        modes = 8
    """)
    manager = get_config_manager(path)
    is_valid, errors = manager.validate_config()
    assert not is_valid
    assert errors == ["line 5: grid.p: p must be a number in (1, inf), got 1.0"]
    with pytest.raises(ConfigurationError) as err:
        manager.ensure_valid()
    assert err.value.line == 5


def test_resolution_limit_is_reported_against_modes(write_config):
    path = write_config("""
        schema = "impulsive-steering/1"

        [grid]
        points = 33
        modes = 20
    """)
    _, errors = get_config_manager(path).validate_config()
    assert any(error.startswith('line 5: grid.modes:') for error in errors)


def test_toml_syntax_error_has_a_line(write_config):
    path = write_config("""
        schema = "impulsive-steering/1"
        [grid
        points = 33
    """)
    with pytest.raises(ConfigurationError) as err:
        get_config_manager(path)
    assert err.value.line == 2


def test_missing_file(tmp_path):
    with pytest.raises(ConfigurationError):
        get_config_manager(str(tmp_path / 'absent.toml'))


def test_environment_overrides_the_file(monkeypatch, linear_config_path):
    monkeypatch.setenv('STEER_STEPS', '80')
    monkeypatch.setenv('STEER_LOG_LEVEL', 'debug')
    manager = get_config_manager(linear_config_path)
    assert manager.get('grid.steps') == 80
    assert manager.validate_config()[0]
    assert load_run_config(linear_config_path).steps == 80


def test_lambda_list_must_descend(write_config):
    text = LINEAR_TOML.replace('lambdas = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5]', 'lambdas = [1e-3, 1e-2, 1e-1]')
    _, errors = get_config_manager(write_config(text)).validate_config()
    assert any('control.lambdas' in error and 'descending' in error for error in errors)


def test_impulse_times_must_increase(write_config):
    text = LINEAR_TOML + """
[[impulses]]
time = 0.6

[[impulses]]
time = 0.4
"""
    manager = get_config_manager(write_config(text))
    _, errors = manager.validate_config()
    line = manager.line_of('impulses[1].time')
    assert line is not None
    assert f"line {line}: impulses[1].time: impulse times must be strictly increasing" in errors


def test_target_modes_replace_the_default(impulsive_config_path):
    manager = get_config_manager(impulsive_config_path)
    assert manager.get('target.modes') == {'2': 0.5}
    assert load_run_config(impulsive_config_path).target['modes'] == {2: 0.5}


def test_relative_paths_follow_the_config_file(tmp_path, linear_config_path):
    manager = get_config_manager(linear_config_path)
    assert manager.resolve_path('history.csv') == str(tmp_path / 'history.csv')
    assert manager.resolve_path('/abs/history.csv') == '/abs/history.csv'
    assert ConfigManager().resolve_path('history.csv') == 'history.csv'


def test_sections_merge_while_data_tables_and_lists_replace():
    manager = ConfigManager()
    base = {'grid': {'points': 65, 'p': 2.0},
            'weights': {'1': 1.0, '4': 0.5},
            'impulses': [{'time': 0.2}, {'time': 0.4}]}
    manager._merge_config(base, {'grid': {'p': 3.0},
                                 'weights': {'2': 0.25},
                                 'impulses': [{'time': 0.7}]})
    assert base == {'grid': {'points': 65, 'p': 3.0},
                    'weights': {'2': 0.25},
                    'impulses': [{'time': 0.7}]}


def test_partial_sections_keep_their_defaults(write_config):
    manager = get_config_manager(write_config("""
        schema = "impulsive-steering/1"

        [grid]
        points = 33
        modes = 8

        [target.modes]
        1 = 0.5
    """))
    assert manager.get('grid.p') == 2.0
    assert manager.get('grid.horizon') == 1.0
    assert manager.get('target.kind') == 'modes'
    assert manager.get('target.modes') == {'1': 0.5}
