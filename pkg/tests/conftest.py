import numpy as np
import pytest

from prunebench import kernels
from prunebench.datagen import DatasetSpec, DeviceDataset, generate_synthetic


@pytest.fixture(params=["numba", "numpy"])
def loss_grad_impl(request):
    return kernels.loss_grad_nb if request.param == "numba" else kernels.loss_grad_np


@pytest.fixture(params=["numba", "numpy"])
def topm_impl(request):
    return kernels.topm_mask_nb if request.param == "numba" else kernels.topm_mask_np


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def reference_mean_loss(theta, d, h, C, X, y):
    """Straight-line forward pass used as an independent oracle."""
    if h == 0:
        W = theta[: C * d].reshape(C, d)
        b = theta[C * d:]
        Z = X @ W.T + b
    else:
        W1 = theta[: h * d].reshape(h, d)
        b1 = theta[h * d: h * d + h]
        W2 = theta[h * d + h: h * d + h + C * h].reshape(C, h)
        b2 = theta[h * d + h + C * h:]
        Z = np.maximum(X @ W1.T + b1, 0.0) @ W2.T + b2
    total = 0.0
    for z, label in zip(Z, y):
        m = max(z)
        total += m + np.log(sum(np.exp(v - m) for v in z)) - z[label]
    return total / len(y)


def small_shard(n=300, C=3, d=4, seed=0, label_noise=0.0, device_id=0):
    data = generate_synthetic(DatasetSpec(n, C, d, 4.0, 1.0, label_noise, seed))
    return DeviceDataset.from_dataset(data, device_id)


# one line per acceptance criterion, echoed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
