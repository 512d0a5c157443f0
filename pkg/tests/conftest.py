import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from advlab import data, nn

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# filled by tests/test_acceptance.py, printed once at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def blobs():
    """Normalised reference blobs split 60/20/20."""
    ds, _ = data.fit_normalize(data.synth_generate(data.SynthConfig()))
    return data.split(ds, 0)


@pytest.fixture(scope="session")
def small_blobs():
    cfg = data.SynthConfig(samples_per_class=40, feature_count=6, separation=4.0)
    ds, _ = data.fit_normalize(data.synth_generate(cfg))
    return ds


@pytest.fixture(scope="session")
def small_model(small_blobs):
    model = nn.build_classifier(nn.mlp_spec(6, 2, hidden=8), 0, 6)
    trained, _ = nn.train(model, small_blobs, nn.TrainConfig(epochs=15, learning_rate=0.3))
    return trained


@pytest.fixture(scope="session")
def trained_cnn(blobs):
    tr, _, _ = blobs
    model = nn.build_classifier(nn.cnn_spec(20), 0, 20)
    return nn.train(model, tr, nn.TrainConfig())[0]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
