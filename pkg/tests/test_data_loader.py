import json

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from modules.data_loader import (
    RESULT_COLUMNS,
    RESULTS_SCHEMA_LINE,
    find_results_files,
    load_class_features,
    load_dataset,
    load_phi_rows,
    load_results,
    meta_path_for,
    save_dataset,
)
from modules.datagen import GeneratorSpec, generate
from modules.errors import InvalidInputError, ResultsParseError
from modules.exporter import write_results_csv
from modules.model import PreferenceDataset


def _write_lines(path, lines):
    path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
    return path


def _result_row(**overrides):
    row = {
        'algorithm': 'uniform',
        'seed': 0,
        'budget': 32,
        'max_logit_error': 0.5,
        'mean_logit_error': 0.1,
        'error_rate': 0.05,
        'wall_time_ms': 0.0,
        'fingerprint': 'abc123',
        'kappa': None,
    }
    row.update(overrides)
    return row


class TestDatasetFiles:

    def test_roundtrip_preserves_values_exactly(self, tmp_path):
        dataset, truth = generate(GeneratorSpec(n_points=50, dim=3, rng_seed=4))
        path = tmp_path / 'desk.jsonl'
        save_dataset(dataset, path, truth, {'beta': 1.0})

        loaded, meta = load_dataset(path)
        assert_array_equal(loaded.phi, dataset.phi)
        assert_array_equal(loaded.bias, dataset.bias)
        assert_array_equal(loaded.feedback, dataset.feedback)
        assert_array_equal(np.array(meta['theta_star']), truth.theta_star.theta)
        assert meta['beta'] == 1.0 and meta['N'] == 50 and meta['d'] == 3

    def test_record_and_metadata_keys(self, tmp_path):
        dataset = PreferenceDataset(np.eye(2), np.zeros(2), [1, 0])
        path = tmp_path / 'keys.jsonl'
        save_dataset(dataset, path)
        first = json.loads(path.read_text(encoding='utf-8').splitlines()[0])
        assert set(first) == {'id', 'phi', 'b', 's'}
        assert first['s'] == 1

        meta = json.loads(meta_path_for(path).read_text(encoding='utf-8'))
        assert meta['d'] == 2 and meta['N'] == 2

    def test_missing_feedback_is_written_as_null(self, tmp_path):
        dataset = PreferenceDataset(np.eye(2), np.zeros(2), [1, -1])
        path = tmp_path / 'partial.jsonl'
        save_dataset(dataset, path)
        second = json.loads(path.read_text(encoding='utf-8').splitlines()[1])
        assert second['s'] is None
        loaded, _ = load_dataset(path)
        assert not loaded.has_all_feedback

    def test_same_dataset_same_bytes(self, tmp_path):
        dataset, truth = generate(GeneratorSpec(n_points=40, dim=2, rng_seed=7))
        save_dataset(dataset, tmp_path / 'a.jsonl', truth, {'beta': 1.0})
        save_dataset(dataset, tmp_path / 'b.jsonl', truth, {'beta': 1.0})
        assert (tmp_path / 'a.jsonl').read_bytes() == (tmp_path / 'b.jsonl').read_bytes()
        assert meta_path_for(tmp_path / 'a.jsonl').read_bytes() == meta_path_for(tmp_path / 'b.jsonl').read_bytes()

    def test_ids_must_be_dense(self, tmp_path):
        path = _write_lines(tmp_path / 'bad.jsonl', [
            json.dumps({'id': 0, 'phi': [1.0], 'b': 0.0, 's': 1}),
            json.dumps({'id': 2, 'phi': [1.0], 'b': 0.0, 's': 1}),
        ])
        with pytest.raises(InvalidInputError):
            load_dataset(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(tmp_path / 'none.jsonl')


class TestImports:

    def test_phi_rows(self, tmp_path):
        path = _write_lines(tmp_path / 'phi.jsonl', [
            json.dumps({'phi': [1.0, 2.0]}),
            json.dumps({'phi': [0.5, -1.0]}),
        ])
        assert load_phi_rows(path).shape == (2, 2)

    def test_phi_rows_with_ragged_dimensions(self, tmp_path):
        path = _write_lines(tmp_path / 'phi.jsonl', [
            json.dumps({'phi': [1.0, 2.0]}),
            json.dumps({'phi': [0.5]}),
        ])
        with pytest.raises(InvalidInputError):
            load_phi_rows(path)

    def test_class_features(self, tmp_path):
        path = _write_lines(tmp_path / 'features.jsonl', [
            json.dumps({'x': [1.0, 0.0, 2.0], 'label': 3}),
            json.dumps({'x': [0.0, 1.0, 2.0], 'label': 1}),
        ])
        features, labels = load_class_features(path)
        assert features.shape == (2, 3)
        assert labels.tolist() == [3, 1]

    def test_broken_json_line(self, tmp_path):
        path = _write_lines(tmp_path / 'broken.jsonl', ['{"phi": [1.0]}', '{phi'])
        with pytest.raises(InvalidInputError):
            load_phi_rows(path)


class TestLoadResults:

    def test_written_results_load_back(self, tmp_path):
        path = write_results_csv([_result_row(), _result_row(seed=1, kappa=2.5)], tmp_path / 'results.csv')
        df = load_results(path)
        assert list(df.columns) == RESULT_COLUMNS
        assert df['seed'].tolist() == [0, 1]
        assert np.isnan(df['kappa'].iloc[0]) and df['kappa'].iloc[1] == 2.5

    def test_missing_schema_line(self, tmp_path):
        path = _write_lines(tmp_path / 'results.csv', [','.join(RESULT_COLUMNS)])
        with pytest.raises(ResultsParseError) as excinfo:
            load_results(path)
        assert excinfo.value.line_number == 1

    def test_wrong_header(self, tmp_path):
        path = _write_lines(tmp_path / 'results.csv', [RESULTS_SCHEMA_LINE, 'algorithm,seed'])
        with pytest.raises(ResultsParseError) as excinfo:
            load_results(path)
        assert excinfo.value.line_number == 2

    def test_malformed_row_cites_line_number(self, tmp_path):
        path = _write_lines(tmp_path / 'results.csv', [
            RESULTS_SCHEMA_LINE,
            ','.join(RESULT_COLUMNS),
            'uniform,0,32,0.5,0.1,0.05,0.0,abc,',
            'uniform,1,32,oops,0.1,0.05,0.0,abc,',
        ])
        with pytest.raises(ResultsParseError) as excinfo:
            load_results(path)
        assert excinfo.value.line_number == 4
        assert '4行目' in str(excinfo.value)

    def test_wrong_column_count(self, tmp_path):
        path = _write_lines(tmp_path / 'results.csv', [
            RESULTS_SCHEMA_LINE,
            ','.join(RESULT_COLUMNS),
            'uniform,0,32',
        ])
        with pytest.raises(ResultsParseError) as excinfo:
            load_results(path)
        assert excinfo.value.line_number == 3

    def test_values_with_commas_are_quoted(self, tmp_path):
        path = write_results_csv([_result_row(fingerprint='a,b')], tmp_path / 'results.csv')
        lines = path.read_text(encoding='utf-8').splitlines()
        assert lines[0] == RESULTS_SCHEMA_LINE
        assert '"a,b"' in lines[2]
        assert load_results(path)['fingerprint'].tolist() == ['a,b']

    def test_float_values_round_trip_exactly(self, tmp_path):
        value = 0.1 + 0.2
        path = write_results_csv([_result_row(max_logit_error=value)], tmp_path / 'results.csv')
        assert load_results(path)['max_logit_error'].iloc[0] == value

    def test_find_results_files(self, tmp_path):
        write_results_csv([_result_row()], tmp_path / 'b' / 'results.csv')
        write_results_csv([_result_row()], tmp_path / 'a' / 'results.csv')
        found = find_results_files(tmp_path)
        assert [p.parent.name for p in found] == ['a', 'b']
        assert find_results_files(tmp_path / 'missing') == []
