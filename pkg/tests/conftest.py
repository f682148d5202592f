import numpy as np
import pytest


def central_diff(fun, x, h=1e-5):
    """Central finite-difference gradient of scalar ``fun`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = fun(x)
        flat[i] = old - h
        down = fun(x)
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return grad


def rel_error(analytic, numeric):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def unit_rows(rng, n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


SMALL_SPEC_KW = dict(classes=3, dim=8, n_per_domain=120, seed=3)
SMALL_CFG_KW = dict(epochs=3, warmup_epochs=1, batch_size=32, k=3, hidden=16, d_out=8,
                    kmeans_restarts=2)


@pytest.fixture(scope="session")
def small_domains():
    from protoot.synthetic import SyntheticSpec, generate_synthetic_domains
    return generate_synthetic_domains(SyntheticSpec(**SMALL_SPEC_KW))


@pytest.fixture
def small_cfg():
    from protoot.training import TrainConfig
    return TrainConfig(**SMALL_CFG_KW)


@pytest.fixture(scope="session")
def default_data_dir(tmp_path_factory):
    """The frozen default benchmark written by ``gen-data`` with default flags."""
    from protoot.cli import main
    out = tmp_path_factory.mktemp("default_data")
    assert main(["gen-data", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="session")
def default_run(default_data_dir, tmp_path_factory):
    """One default ``train`` run on the frozen benchmark; returns (out_dir, seconds)."""
    import time
    from protoot.cli import main
    out = tmp_path_factory.mktemp("default_run")
    start = time.perf_counter()
    assert main(["train", "--data", str(default_data_dir), "--out", str(out)]) == 0
    return out, time.perf_counter() - start
