import os

import pytest

from modules.config import FitOptions, ModelConfig, SelectionConfig, load_env_defaults
from modules.errors import InvalidInputError


class TestConfigValidation:

    @pytest.mark.parametrize("kwargs", [{'beta': 0.0}, {'gamma': -1.0}, {'alpha': -0.5}])
    def test_model_config(self, kwargs):
        with pytest.raises(InvalidInputError):
            ModelConfig(**kwargs)

    def test_selection_config(self):
        with pytest.raises(InvalidInputError):
            SelectionConfig(budget=0)
        with pytest.raises(InvalidInputError):
            SelectionConfig(budget=4, refit='sometimes')

    def test_unconstrained_by_default(self):
        assert not FitOptions().constrained
        assert FitOptions(constraint_radius=1.0).constrained


class TestFingerprint:

    def test_ignores_seed_and_budget(self):
        base = SelectionConfig(budget=32, rng_seed=0)
        assert base.fingerprint() == base.with_seed(5).with_budget(4096).fingerprint()

    def test_changes_with_model(self):
        base = SelectionConfig(budget=32)
        other = SelectionConfig(budget=32, model=ModelConfig(beta=2.0))
        assert base.fingerprint() != other.fingerprint()
        assert len(base.fingerprint()) == 12


class TestEnvDefaults:

    def test_reads_dotenv_file(self, tmp_path, monkeypatch):
        for name in ('ADPO_OUTPUT_DIR', 'ADPO_LOG_LEVEL', 'ADPO_JOBS'):
            monkeypatch.delenv(name, raising=False)
        env_file = tmp_path / '.env'
        env_file.write_text('ADPO_OUTPUT_DIR=out\nADPO_LOG_LEVEL=debug\nADPO_JOBS=3\n', encoding='utf-8')

        defaults = load_env_defaults(str(env_file))
        assert defaults.output_dir == 'out'
        assert defaults.log_level == 'DEBUG'
        assert defaults.jobs == 3

        for name in ('ADPO_OUTPUT_DIR', 'ADPO_LOG_LEVEL', 'ADPO_JOBS'):
            os.environ.pop(name, None)

    def test_invalid_jobs(self, monkeypatch):
        monkeypatch.setenv('ADPO_JOBS', 'x')
        with pytest.raises(InvalidInputError):
            load_env_defaults('/nonexistent/.env')
