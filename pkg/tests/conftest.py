import numpy as np
import pytest

from bellmeson import DetectorParams, DetectorResponse, GeneratorConfig, PhysicsParams, generate_dataset


@pytest.fixture(scope="session")
def params():
    return PhysicsParams(tau_b=1.542, delta_m=0.507, beta_gamma=0.425)


@pytest.fixture(scope="session")
def ideal_events(params):
    """10^6 quantum events through an ideal detector, shared across modules."""
    events = generate_dataset(GeneratorConfig(1_000_000, 4242, params), n_workers=4)
    det = DetectorResponse.from_params(DetectorParams.ideal(params.beta_gamma), random_state=4242)
    return det.fit_transform(events)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one summary line per acceptance criterion."""
    return request.config.stash.setdefault(_ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
