import numpy as np
import pytest

from advlab import data, nn
from advlab.attacks import (AttackConfig, GanConfig, aself_mds_attack, gself_mds_attack,
                            self_mds_attack, train_gan)
from advlab.attacks.base import empty_perturbed
from advlab.defence import GENERATED, PERTURBED, DefenceConfig, self_train, self_train_defence
from advlab.errors import ConfigurationError, DataError, StateError, TrainingDivergedError


@pytest.fixture(scope="module")
def self_case(blobs, trained_cnn):
    tr, _, te = blobs
    stream = data.make_stream(data.Dataset.concat([tr, te]), len(tr))
    attacked = te.replace(features=self_mds_attack(stream, trained_cnn, AttackConfig()).apply_to(te).features)
    pool = self_mds_attack(data.make_stream(tr, 0), trained_cnn, AttackConfig())
    result = self_train(pool, tr, trained_cnn, DefenceConfig())
    return pool, attacked, result


@pytest.fixture(scope="module")
def small_pool(small_blobs, small_model):
    return aself_mds_attack(small_blobs, small_model, AttackConfig(), ["FGSM"])


def accuracy(model, ds):
    return np.mean(model.predict(ds.features) == ds.labels)


class TestBookkeeping:
    def test_zero_iterations_is_a_no_op(self, small_pool, small_blobs, small_model):
        model, corrected = self_train_defence(small_pool, small_blobs, small_model,
                                              DefenceConfig(iterations=0))
        assert model.to_bytes() == small_model.to_bytes()
        assert corrected is small_pool.samples

    def test_corrected_size_and_untouched_members(self, small_pool, small_blobs, small_model):
        res = self_train(small_pool, small_blobs, small_model, DefenceConfig(iterations=3))
        n = len(small_pool)
        assert len(res.corrected) == n + n
        assert res.origin == (PERTURBED,) * n + (GENERATED,) * n
        head = res.corrected.subset(range(n))
        assert np.array_equal(head.features, small_pool.samples.features)
        assert np.array_equal(head.ids, small_pool.samples.ids)
        assert np.array_equal(res.corrected.labels[n:], small_pool.samples.labels)
        # generated rows get fresh ids, clear of the training set
        assert len(set(res.corrected.ids.tolist()) | set(small_blobs.ids.tolist())) == \
            len(small_blobs) + n

    def test_generated_rows_lie_within_budget(self, small_pool, small_blobs, small_model):
        cfg = DefenceConfig(iterations=2, perturbation_budget=0.03)
        res = self_train(small_pool, small_blobs, small_model, cfg)
        n = len(small_pool)
        gap = np.abs(res.corrected.features[n:] - res.corrected.features[:n])
        assert gap.max() <= 0.03

    def test_input_model_untouched(self, small_pool, small_blobs, small_model):
        before = small_model.to_bytes()
        self_train(small_pool, small_blobs, small_model, DefenceConfig(iterations=2))
        assert small_model.to_bytes() == before

    def test_deterministic(self, small_pool, small_blobs, small_model):
        cfg = DefenceConfig(iterations=3, seed=11)
        a = self_train(small_pool, small_blobs, small_model, cfg)
        b = self_train(small_pool, small_blobs, small_model, cfg)
        assert a.model.to_bytes() == b.model.to_bytes()
        assert a.corrected.features.tobytes() == b.corrected.features.tobytes()
        assert a.consistency == b.consistency and a.loss == b.loss

    def test_sourceless_samples_are_accepted(self, small_blobs, small_model):
        gan = train_gan(small_blobs, GanConfig(generator_epochs=5))
        pool = gself_mds_attack(gan, 12, 0, id_start=small_blobs.next_id())
        res = self_train(pool, small_blobs, small_model, DefenceConfig(iterations=2))
        assert len(res.corrected) == 24

    def test_csv_has_origin_column(self, tmp_path, small_pool, small_blobs, small_model):
        res = self_train(small_pool, small_blobs, small_model, DefenceConfig(iterations=1))
        path = tmp_path / "corrected.csv"
        res.write_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0].split(",")[-1] == "origin"
        assert lines[1].endswith(PERTURBED) and lines[-1].endswith(GENERATED)
        assert len(lines) == 1 + len(res.corrected)


class TestErrors:
    def test_empty_pool(self, small_blobs, small_model):
        with pytest.raises(DataError):
            self_train(empty_perturbed(small_blobs), small_blobs, small_model, DefenceConfig())

    def test_untrained_model(self, small_pool, small_blobs):
        with pytest.raises(StateError):
            self_train(small_pool, small_blobs, nn.ModelParams([], [], [], 0, 6), DefenceConfig())

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_reports_epoch(self, small_pool, small_blobs, small_model):
        broken = small_model.copy()
        broken.weights[0] = broken.weights[0] * np.inf
        with pytest.raises(TrainingDivergedError) as err:
            self_train(small_pool, small_blobs, broken, DefenceConfig(iterations=2))
        assert err.value.epoch == 0

    @pytest.mark.parametrize("field, value", [("iterations", -1), ("batch_size", 0),
                                              ("learning_rate", 0.0), ("perturbation_budget", 0.0)])
    def test_invalid_config(self, field, value):
        with pytest.raises(ConfigurationError):
            DefenceConfig(**{field: value})


class TestEffect:
    def test_recovers_accuracy_under_attack(self, self_case, trained_cnn):
        _, attacked, result = self_case
        assert accuracy(result.model, attacked) > accuracy(trained_cnn, attacked)

    def test_consistency_falls_on_self_mds_pool(self, self_case):
        _, _, result = self_case
        assert len(result.consistency) == DefenceConfig().iterations
        assert result.consistency[-1] <= result.consistency[0]

    @pytest.mark.xfail(strict=True, reason="equal loss weights: supervised term dominates and "
                                           "the consistency term grows on gradient-attack pools")
    def test_consistency_falls_on_jsma_pool(self, blobs, trained_cnn):
        tr, _, _ = blobs
        pool = aself_mds_attack(tr, trained_cnn, AttackConfig(), ["JSMA"])
        result = self_train(pool, tr, trained_cnn, DefenceConfig())
        assert result.consistency[-1] <= result.consistency[0]
