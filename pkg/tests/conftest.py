import numpy as np
import pytest

from riccati_opnet import datagen, riccati


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def scalar_system(a=-1.0, b=1.0, q=1.0, r=1.0, horizon=1.0, p_terminal=1.0, n_steps=100):
    return riccati.SystemInstance(kind=riccati.TIME_INVARIANT, n=1, m=1, horizon=horizon,
                                  p_terminal=[[p_terminal]], A=[[a]], B=[[b]], Q=[[q]],
                                  R=[[r]], n_steps=n_steps)


@pytest.fixture
def brunovsky3():
    """A handful of admissible 3-d systems covering all partitions and classes."""
    out = []
    for i, (part, cls) in enumerate([((3,), "stable"), ((2, 1), "mixed"),
                                     ((1, 1, 1), "unstable"), ((3,), "mixed")]):
        _, sys = datagen.sample_brunovsky(3, part, cls, np.random.default_rng(i))
        out.append(sys)
    return out


def finite_difference_errors(model, x, y, times=None, step=1e-5, floor=1e-8):
    """Relative errors ``|g - g_fd| / max(|g|, |g_fd|, floor)`` over every parameter entry."""
    from riccati_opnet.opnet import loss_and_grad, loss_mse

    _, grads = loss_and_grad(model, x, y, times)
    worst = 0.0
    for p, g in zip(model.trainable_params(), grads):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_mse(model, x, y, times)
            flat[i] = orig - step
            down = loss_mse(model, x, y, times)
            flat[i] = orig
            fd = (up - down) / (2.0 * step)
            rel = abs(fd - gflat[i]) / max(abs(fd), abs(gflat[i]), floor)
            worst = max(worst, rel)
    return worst


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
