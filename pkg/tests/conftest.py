import numpy as np
import pytest

from mvjump import MarkSpace, ModelConfig, make_triple

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

# suppress first-call numba compilation noise in timing-sensitive tests
np.seterr(over="ignore")


def symmetric_marks(theta=1.0):
    return MarkSpace(points=[1.0, -1.0], weights=[theta, theta])


def single_mark():
    return MarkSpace(points=[1.0], weights=[1.0])


def linear_config(**kw):
    base = dict(model_id="linear_sde", n=1, T=1.0, mark_space=symmetric_marks(),
                kappa=0.1, linear_rate=1.0, sigma=0.5, initial_state=1.0)
    base.update(kw)
    return ModelConfig(**base)


def mv_sde_config(**kw):
    base = dict(model_id="mv_sde", n=2, T=1.0, mark_space=symmetric_marks(0.5),
                kappa=0.3, linear_rate=1.0, sigma=0.4, initial_state=[1.0, 0.0])
    base.update(kw)
    return ModelConfig(**base)


def p_laplace_config(**kw):
    n = kw.pop("n", 7)
    base = dict(model_id="p_laplace", n=n, h=1.0 / (n + 1), T=0.5,
                mark_space=symmetric_marks(0.5), exponent=3.0, kappa=0.2,
                sigma=0.3, initial_state=np.sin(np.pi * np.arange(1, n + 1) / (n + 1)))
    base.update(kw)
    return ModelConfig(**base)


def porous_config(**kw):
    n = kw.pop("n", 7)
    base = dict(model_id="porous_media", n=n, h=1.0 / (n + 1), T=0.5,
                mark_space=symmetric_marks(0.5), exponent=3.0, kappa=0.0,
                sigma=0.3, initial_state=np.sin(np.pi * np.arange(1, n + 1) / (n + 1)))
    base.update(kw)
    return ModelConfig(**base)


ALL_CONFIG_MAKERS = {
    "linear_sde": linear_config,
    "mv_sde": mv_sde_config,
    "p_laplace": p_laplace_config,
    "porous_media": porous_config,
}


@pytest.fixture(scope="session")
def linear_triple():
    return make_triple(linear_config())


@pytest.fixture(scope="session")
def mv_triple():
    return make_triple(mv_sde_config())


@pytest.fixture(scope="session")
def plap_triple():
    return make_triple(p_laplace_config())


@pytest.fixture(scope="session")
def porous_triple():
    return make_triple(porous_config())
