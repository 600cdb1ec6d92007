import csv
import json

import numpy as np
import pytest

from main import EXIT_CONFIG, EXIT_FAIL, EXIT_PASS, main
from src.config_manager import ConfigError, load_config
from src.oracles import DEVELOPMENT, PAIR, ZERO_POISSON
from src.report import CheckReport, Report, convergence_rows, emit_convergence_table, emit_report
from src.service import run_suite

SO3_DUAL = [{'i': 1, 'j': 2, 'expr': 'x3'}, {'i': 2, 'j': 3, 'expr': 'x1'}, {'i': 3, 'j': 1, 'expr': 'x2'}]

PLANE_YAML = """
task: integrate-path
manifold: {dim: 2, box: [-2.0, 2.0]}
model:
  poisson:
    - {i: 1, j: 2, expr: "1"}
path:
  x0: [0.0, -0.5]
  fiber: ["1", "0"]
numerics: {n_t: 33}
"""


def write_config(tmp_path, document, name='config.json'):
    path = tmp_path / name
    path.write_text(json.dumps(document))
    return str(path)


def test_defaults_are_filled():
    config = load_config({'task': 'check-algebroid', 'manifold': {'dim': 3}, 'model': {'poisson': SO3_DUAL}})
    numerics = config.numerics
    assert (numerics.n_t, numerics.n_eps, numerics.seed) == (129, 129, 1729)
    assert (numerics.samples, numerics.trials) == (100, 100)
    assert numerics.convergence_n_t == [33, 65, 129, 257]
    assert config.chart.lower == (-2.0, -2.0, -2.0)
    assert config.algebroid.rank == 3


def test_yaml_text_is_accepted():
    config = load_config(PLANE_YAML)
    assert config.task == 'integrate-path'
    assert config.numerics.n_t == 33
    assert np.array_equal(config.path.x0, [0.0, -0.5])


def test_overrides_replace_document_values():
    config = load_config(PLANE_YAML, {'seed': 7, 'n_t': 17, 'report': 'out.json', 'csv': None})
    assert config.numerics.seed == 7
    assert config.numerics.n_t == 17
    assert config.report_path == 'out.json'
    assert config.csv_path is None


def test_expression_error_carries_path_and_offset():
    document = {'task': 'check-algebroid', 'manifold': {'dim': 2},
                'model': {'poisson': [{'i': 1, 'j': 2, 'expr': 'x1 + * x2'}]}}
    with pytest.raises(ConfigError) as info:
        load_config(document)
    assert info.value.path == 'model.poisson.0.expr'
    assert info.value.offset == 5


def test_malformed_json_reports_line():
    with pytest.raises(ConfigError) as info:
        load_config('{\n  "task": "check-algebroid",\n  "model": \n}')
    assert info.value.line == 4


@pytest.mark.parametrize('document, path', [
    ({'task': 'fly', 'model': {'lie_algebra': 'so3'}}, 'task'),
    ({'task': 'homotopy', 'model': {'lie_algebra': 'so3'}}, 'family'),
    ({'task': 'etale-suite', 'model': {'lie_algebra': 'so3'}}, 'model'),
    ({'task': 'convergence', 'model': {'lie_algebra': 'so3'}, 'numerics': {'n_t': 2}}, 'numerics.n_t'),
    ({'task': 'check-algebroid', 'model': {'poisson': []}}, 'manifold.dim'),
])
def test_invalid_documents(document, path):
    with pytest.raises(ConfigError) as info:
        load_config(document)
    assert info.value.path == path


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / 'absent.yaml'))


def test_oracle_is_inferred():
    base = {'task': 'oracle-suite', 'manifold': {'dim': 2}}
    assert load_config({**base, 'model': {'poisson': []}}).oracle == ZERO_POISSON
    assert load_config({**base, 'model': {'poisson': [{'i': 1, 'j': 2, 'expr': '1'}]}}).oracle == PAIR
    assert load_config({'task': 'oracle-suite', 'model': {'lie_algebra': 'so3'}}).oracle == DEVELOPMENT
    with pytest.raises(ConfigError):
        load_config({'task': 'oracle-suite', 'manifold': {'dim': 3}, 'model': {'poisson': SO3_DUAL}})


def test_integrate_path_task():
    report = run_suite(load_config(PLANE_YAML))
    assert report.passed
    record = report.records[0].to_record()
    assert record['name'] == 'a-path'
    assert np.allclose(record['detail']['target'], [0.0, 0.5])


def test_homotopy_task_on_coadjoint_orbit():
    document = {
        'task': 'homotopy', 'manifold': {'dim': 3}, 'model': {'poisson': SO3_DUAL},
        'family': {'x0': [1.0, 0.0, 0.0], 'fiber': ['sin(3.141592653589793*x1)^2', '0', '0'], 'expect': True},
        'numerics': {'n_t': 65, 'n_eps': 9},
    }
    report = run_suite(load_config(document))
    names = [record.name for record in report.records]
    assert names == ['family', 'homotopy', 'intermediate-slices', 'connection-independence']
    assert report.passed


def test_zero_poisson_oracle_suite():
    document = {'task': 'oracle-suite', 'manifold': {'dim': 2}, 'model': {'poisson': []},
                'numerics': {'n_t': 65, 'n_eps': 17, 'trials': 4}}
    report = run_suite(load_config(document))
    assert [record.name for record in report.records] == [f'functoriality-{ZERO_POISSON}']
    assert report.passed


def test_symplectic_suite_exports_pairing_matrix(tmp_path):
    document = {'task': 'symplectic-suite', 'manifold': {'dim': 2}, 'model': {'poisson': [{'i': 1, 'j': 2, 'expr': '1'}]},
                'numerics': {'n_t': 17, 'n_eps': 17, 'trials': 10, 'samples': 20},
                'output': {'csv': str(tmp_path / 'pairing.csv')}}
    report = run_suite(load_config(document))
    assert [record.name for record in report.records] == ['nondegeneracy', 'multiplicativity', 'reduced-bracket-pair']
    assert report.passed
    with open(tmp_path / 'pairing.csv', newline='') as f:
        rows = list(csv.reader(f))
    assert len(rows) == 4 * 17
    assert all(len(row) == 4 * 17 for row in rows)


def test_etale_suite_on_inversion():
    document = {
        'task': 'etale-suite', 'manifold': {'dim': 2},
        'model': {'groupoid': {
            'name': 'Z/2', 'elements': ['e', 'r'], 'table': [[0, 1], [1, 0]],
            'action': [['x1', 'x2'], ['-x1', '-x2']],
            'form': {'degree': 2, 'entries': [{'indices': [1, 2], 'expr': '1'}]},
            'functions': ['x1^2', 'x2^2', 'x1*x2'],
            'copies': [2, 3],
        }},
        'numerics': {'samples': 30},
    }
    report = run_suite(load_config(document))
    names = [record.name for record in report.records]
    assert names[:5] == ['action-composition', 'form-invariance', 'arrow-invariance', 'bracket-closure',
                         'bracket-jacobi']
    assert 'refined-composition-3' in names
    assert 'presentation-independence-2' in names
    assert report.passed


def test_failing_check_becomes_failed_record():
    document = {'task': 'etale-suite', 'manifold': {'dim': 2}, 'model': {'groupoid': {
        'cyclic': 2,
        'form': {'degree': 2, 'entries': [{'indices': [1, 2], 'expr': 'x1'}]},
        'functions': ['x1^2', 'x2^2'],
        'copies': [2],
    }}, 'numerics': {'samples': 20}}
    report = run_suite(load_config(document))
    records = {record.name: record for record in report.records}
    assert not records['form-invariance'].passed
    closure = records['bracket-closure'].to_record()
    assert closure['residual'] is None
    assert closure['detail']['error'] == 'NonInvariantFormError'
    assert not report.passed


def test_main_exit_codes(tmp_path):
    report_path = tmp_path / 'reports' / 'so3.json'
    good = write_config(tmp_path, {'task': 'check-algebroid', 'manifold': {'dim': 3},
                                   'model': {'poisson': SO3_DUAL}, 'numerics': {'samples': 20}})
    assert main(['check-algebroid', '-c', good, '--report', str(report_path), '--no-console']) == EXIT_PASS
    written = json.loads(report_path.read_text())
    assert set(written) == {'version', 'seed', 'config', 'records', 'pass', 'wall_ms'}
    assert written['pass'] is True
    assert {'name', 'residual', 'tol', 'pass'} <= set(written['records'][0])

    non_jacobi = [{'i': 1, 'j': 2, 'expr': 'x3'}, {'i': 2, 'j': 3, 'expr': 'x1'}, {'i': 3, 'j': 1, 'expr': 'x1'}]
    bad = write_config(tmp_path, {'task': 'check-algebroid', 'manifold': {'dim': 3},
                                  'model': {'poisson': non_jacobi}}, 'non_jacobi.json')
    assert main(['check-algebroid', '-c', bad, '--report', str(tmp_path / 'nj.json'), '--no-console']) == EXIT_FAIL

    broken = tmp_path / 'broken.json'
    broken.write_text('{"task": ')
    assert main(['check-algebroid', '-c', str(broken), '--no-console']) == EXIT_CONFIG
    assert main(['etale-suite', '-c', good, '--no-console']) == EXIT_CONFIG


def test_variable_beyond_dimension_is_config_error():
    document = {'task': 'check-algebroid', 'manifold': {'dim': 2},
                'model': {'poisson': [{'i': 1, 'j': 2, 'expr': 'x3'}]}}
    with pytest.raises(ConfigError) as info:
        load_config(document)
    assert info.value.path == 'model.poisson.0.expr'


def test_report_pass_is_conjunction(tmp_path):
    report = Report(version='0.1.0', seed=1729, config={})
    emit_report(report, str(tmp_path / 'empty.json'))
    empty = json.loads((tmp_path / 'empty.json').read_text())
    assert empty['pass'] is True
    assert empty['records'] == []

    report.add(CheckReport.from_residual('ok', 0.0, 1.0))
    report.add(CheckReport.from_residual('bad', 2.0, 1.0))
    emit_report(report, str(tmp_path / 'failing.json'))
    failing = json.loads((tmp_path / 'failing.json').read_text())
    assert failing['pass'] is False
    assert [record['pass'] for record in failing['records']] == [True, False]


def test_convergence_table(tmp_path):
    rows = convergence_rows([33, 65, 129], [1.6e-5, 1e-6, 6.25e-8])
    assert rows[0]['order'] is None
    assert rows[1]['order'] == pytest.approx(4.0)
    emit_convergence_table(rows, str(tmp_path / 'table.csv'))
    with open(tmp_path / 'table.csv', newline='') as f:
        lines = list(csv.reader(f))
    assert lines[0] == ['n_t', 'defect', 'order']
    assert lines[1][2] == ''
    assert float(lines[3][2]) == pytest.approx(4.0)
