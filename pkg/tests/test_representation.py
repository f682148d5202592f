import numpy as np
import pytest

from protoot.exceptions import BankTooSmallError, DimMismatchError, ShapeMismatchError, ZeroRowError
from protoot.representation import (
    MemoryBank,
    MlpEncoder,
    MomentumEncoder,
    augment,
    encoder_forward,
    memory_bank_write,
    momentum_update,
    nearest_neighbor,
)

from conftest import central_diff, rel_error, unit_rows


def small_net(seed, d_in=4, hidden=6, d_out=3):
    rng = np.random.default_rng(seed)
    enc = MlpEncoder(d_in, hidden, d_out, rng=rng, init="he")
    enc.b1 = rng.normal(scale=0.1, size=hidden)
    enc.b2 = rng.normal(scale=0.1, size=d_out)
    return enc, rng


def test_constant_network_outputs_bias_direction():
    enc = MlpEncoder(3, 4, 2)
    enc.b2 = np.array([1.0, 0.0])
    np.testing.assert_array_equal(encoder_forward(enc, np.ones((5, 3))), np.tile([1.0, 0.0], (5, 1)))


def test_identity_network_normalizes():
    enc = MlpEncoder(2, 2, 2)
    enc.w1, enc.w2 = np.eye(2), np.eye(2)
    np.testing.assert_allclose(enc.forward([[3.0, 4.0]]), [[0.6, 0.8]], atol=1e-15)


def test_identity_init_preserves_geometry():
    x = unit_rows(np.random.default_rng(0), 20, 8)
    enc = MlpEncoder(8, 16, 8, rng=np.random.default_rng(1), init="identity", init_scale=0.0)
    np.testing.assert_allclose(enc.forward(x), x, atol=1e-12)


def test_forward_errors():
    enc = MlpEncoder(3, 4, 2)
    with pytest.raises(ZeroRowError):
        enc.forward(np.ones((1, 3)))
    with pytest.raises(DimMismatchError):
        enc.forward(np.ones((1, 4)))


@pytest.mark.parametrize("seed", range(20))
def test_backward_matches_finite_differences(seed):
    enc, rng = small_net(seed)
    x = rng.normal(size=(5, 4))
    w = rng.normal(size=(5, 3))
    theta = enc.get_flat()
    enc.forward(x)
    analytic = enc.backward(w)

    def objective(flat):
        probe = enc.copy()
        probe.set_flat(flat)
        return float(np.sum(w * probe.forward(x, keep_cache=False)))

    assert rel_error(analytic, central_diff(objective, theta)) < 1e-4


def test_flat_parameter_round_trip():
    enc, _ = small_net(3)
    flat = enc.get_flat()
    assert flat.size == enc.n_params == 4 * 6 + 6 + 6 * 3 + 3
    other = MlpEncoder(4, 6, 3)
    other.set_flat(flat)
    np.testing.assert_array_equal(other.get_flat(), flat)
    with pytest.raises(ShapeMismatchError):
        other.set_flat(flat[:-1])


def test_backward_before_forward():
    with pytest.raises(RuntimeError):
        MlpEncoder(2, 2, 2).backward(np.ones((1, 2)))


def _pair(m, online_value, target_value):
    online = MlpEncoder(2, 3, 2)
    online.set_flat(np.full(online.n_params, online_value))
    target = MomentumEncoder(2, 3, 2, momentum=m)
    target.set_flat(np.full(target.n_params, target_value))
    return online, target


@pytest.mark.parametrize("m,expected", [(1.0, 2.0), (0.0, 0.0), (0.5, 1.0)])
def test_momentum_examples(m, expected):
    online, target = _pair(m, 0.0, 2.0)
    momentum_update(online, target)
    np.testing.assert_array_equal(target.get_flat(), expected)


def test_momentum_contracts_towards_online():
    enc, _ = small_net(4)
    target = MomentumEncoder.from_online(enc, momentum=0.9)
    target.set_flat(np.random.default_rng(5).normal(size=enc.n_params))
    gaps = []
    for _ in range(10):
        momentum_update(enc, target)
        gaps.append(np.linalg.norm(target.get_flat() - enc.get_flat()))
    assert np.all(np.diff(gaps) < 0)


def test_momentum_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        momentum_update(MlpEncoder(2, 3, 2), MomentumEncoder(2, 4, 2))
    with pytest.raises(ValueError):
        MomentumEncoder(momentum=1.5)


def test_bank_write_then_read(rng):
    bank = MemoryBank(unit_rows(rng, 6, 3))
    row = unit_rows(rng, 1, 3)
    before = bank.features.copy()
    memory_bank_write(bank, [2], row)
    np.testing.assert_array_equal(bank.read([2]), row)
    others = [0, 1, 3, 4, 5]
    np.testing.assert_array_equal(bank.features[others], before[others])


def test_bank_disjoint_writes_commute(rng):
    init = unit_rows(rng, 6, 3)
    a, b = unit_rows(rng, 2, 3), unit_rows(rng, 3, 3)
    one, two = MemoryBank(init), MemoryBank(init)
    one.write([0, 1], a)
    one.write([3, 4, 5], b)
    two.write([3, 4, 5], b)
    two.write([0, 1], a)
    np.testing.assert_array_equal(one.features, two.features)


def test_bank_full_refresh(rng):
    bank = MemoryBank(unit_rows(rng, 5, 4))
    new = unit_rows(rng, 5, 4)
    bank.write(np.arange(5), new)
    np.testing.assert_array_equal(bank.features, new)


def test_bank_errors(rng):
    bank = MemoryBank(unit_rows(rng, 3, 2))
    with pytest.raises(IndexError):
        bank.write([3], unit_rows(rng, 1, 2))
    with pytest.raises(DimMismatchError):
        bank.write([0, 1], unit_rows(rng, 1, 2))
    with pytest.raises(ValueError):
        bank.write([0], [[2.0, 0.0]])
    with pytest.raises(ValueError):
        MemoryBank([[1.0, 1.0]])


def test_augment_identity(rng):
    x = rng.normal(size=(4, 3))
    np.testing.assert_array_equal(augment(x, rng, 0.0, 0.0), x)


def test_augment_noise_variance():
    x = np.zeros((100, 100))
    out = augment(x, np.random.default_rng(0), noise_sigma=0.3, mask_prob=0.0)
    assert out.var() == pytest.approx(0.09, rel=0.1)


def test_augment_mask_rate():
    out = augment(np.ones((100, 100)), np.random.default_rng(0), noise_sigma=0.0, mask_prob=0.5)
    assert np.mean(out == 0) == pytest.approx(0.5, abs=0.02)


def test_augment_rejects_bad_parameters(rng):
    with pytest.raises(ValueError):
        augment(np.ones((1, 1)), rng, -1.0, 0.0)
    with pytest.raises(ValueError):
        augment(np.ones((1, 1)), rng, 0.0, 1.0)


def test_nearest_neighbor_examples():
    bank = MemoryBank(np.eye(2))
    assert nearest_neighbor(bank, [1.0, 0.0], 0)[0] == 1
    bank = MemoryBank([[1.0, 0.0], [0.0, 1.0], [0.8, 0.6]])
    idx, row = nearest_neighbor(bank, [1.0, 0.0], 0)
    assert idx == 2
    np.testing.assert_array_equal(row, [0.8, 0.6])


def test_nearest_neighbor_tie_takes_smallest_index():
    bank = MemoryBank([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    assert nearest_neighbor(bank, [0.0, 1.0], 0)[0] == 1


def test_nearest_neighbor_matches_scan(rng):
    bank = MemoryBank(unit_rows(rng, 50, 5))
    queries = unit_rows(rng, 30, 5)
    exclude = rng.integers(0, 50, size=30)
    idx, _ = nearest_neighbor(bank, queries, exclude)
    for qi in range(30):
        best, best_sim = None, -np.inf
        for j in range(50):
            if j == exclude[qi]:
                continue
            sim = sum(queries[qi, t] * bank.features[j, t] for t in range(5))
            if sim > best_sim:
                best, best_sim = j, sim
        assert idx[qi] == best


def test_nearest_neighbor_small_bank():
    with pytest.raises(BankTooSmallError):
        nearest_neighbor(MemoryBank([[1.0, 0.0]]), [1.0, 0.0], 0)
