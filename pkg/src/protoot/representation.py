"""Feature encoders, the momentum target encoder and per-domain memory banks.

The encoder is a two-layer perceptron with a ReLU hidden layer and an
L2-normalized output. Its backward pass is written out by hand; parameters
are exposed as a flat vector in the order ``W1, b1, W2, b2`` so optimizers
and gradient checks can treat them uniformly.
"""

import numpy as np

from .exceptions import (
    BankTooSmallError,
    DimMismatchError,
    ShapeMismatchError,
    ZeroRowError,
)
from .tensor import ZERO_NORM, as_matrix, is_unit_rows

PARAM_NAMES = ("w1", "b1", "w2", "b2")


class MlpEncoder:
    """``x -> normalize(relu(x @ w1 + b1) @ w2 + b2)``.

    Parameters
    ----------
    d_in, hidden, d_out : int
        Layer widths.
    rng : numpy.random.Generator, optional
        Source of initial weights. Without it all weights start at zero,
        which is only useful in tests.
    init : {"identity", "he"}
        ``"he"`` draws normal weights scaled by fan-in. ``"identity"`` starts
        from the pass-through network ``relu(x) - relu(-x)`` on the leading
        ``min(d_in, hidden // 2, d_out)`` coordinates and adds small normal
        noise (``init_scale``), so training begins from the input geometry.
    """

    def __init__(self, d_in=32, hidden=64, d_out=32, rng=None, init="identity",
                 init_scale=0.01):
        self.d_in, self.hidden, self.d_out = d_in, hidden, d_out
        self.w1 = np.zeros((d_in, hidden))
        self.w2 = np.zeros((hidden, d_out))
        if rng is not None:
            if init == "he":
                self.w1 = rng.normal(0.0, np.sqrt(2.0 / d_in), size=(d_in, hidden))
                self.w2 = rng.normal(0.0, np.sqrt(1.0 / hidden), size=(hidden, d_out))
            elif init == "identity":
                m = min(d_in, hidden // 2, d_out)
                eye = np.eye(m)
                self.w1[:m, :m] = eye
                self.w1[:m, m:2 * m] = -eye
                self.w2[:m, :m] = eye
                self.w2[m:2 * m, :m] = -eye
                self.w1 += rng.normal(0.0, init_scale, size=self.w1.shape)
                self.w2 += rng.normal(0.0, init_scale, size=self.w2.shape)
            else:
                raise ValueError(f"unknown init {init!r}")
        self.b1 = np.zeros(hidden)
        self.b2 = np.zeros(d_out)
        self._cache = None

    @property
    def shape(self):
        return (self.d_in, self.hidden, self.d_out)

    @property
    def n_params(self):
        return self.d_in * self.hidden + self.hidden + self.hidden * self.d_out + self.d_out

    def params(self):
        return [getattr(self, name) for name in PARAM_NAMES]

    def get_flat(self):
        return np.concatenate([p.ravel() for p in self.params()])

    def set_flat(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_params:
            raise ShapeMismatchError(f"expected {self.n_params} parameters, got {flat.size}")
        offset = 0
        for name in PARAM_NAMES:
            p = getattr(self, name)
            setattr(self, name, flat[offset:offset + p.size].reshape(p.shape).copy())
            offset += p.size

    def copy(self):
        new = self.__class__.__new__(self.__class__)
        new.__dict__.update(self.__dict__)
        for name in PARAM_NAMES:
            setattr(new, name, getattr(self, name).copy())
        new._cache = None
        return new

    def forward(self, x, keep_cache=True):
        """Encode rows of ``x``; the pre-activations are cached for :meth:`backward`."""
        x = as_matrix(x, "x")
        if x.shape[1] != self.d_in:
            raise DimMismatchError(f"input has {x.shape[1]} columns, encoder expects {self.d_in}")
        pre = x @ self.w1 + self.b1
        h = np.maximum(pre, 0.0)
        z = h @ self.w2 + self.b2
        norm = np.linalg.norm(z, axis=1)
        bad = np.flatnonzero(norm < ZERO_NORM)
        if bad.size:
            raise ZeroRowError(f"encoder output row {int(bad[0])} is zero before normalization")
        out = z / norm[:, None]
        if keep_cache:
            self._cache = (x, pre, h, norm, out)
        return out

    __call__ = forward

    def backward(self, grad_out):
        """Flat parameter gradient given ``dL/d out`` for the last :meth:`forward` batch."""
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        x, pre, h, norm, out = self._cache
        g = np.asarray(grad_out, dtype=np.float64)
        # Jacobian of z/|z| is (I - o o^T)/|z|
        dz = (g - out * np.sum(g * out, axis=1, keepdims=True)) / norm[:, None]
        dw2 = h.T @ dz
        db2 = dz.sum(axis=0)
        dpre = (dz @ self.w2.T) * (pre > 0)
        dw1 = x.T @ dpre
        db1 = dpre.sum(axis=0)
        return np.concatenate([dw1.ravel(), db1, dw2.ravel(), db2])


def encoder_forward(enc, x):
    return enc.forward(x)


class MomentumEncoder(MlpEncoder):
    """Exponential-moving-average copy of an online encoder."""

    def __init__(self, d_in=32, hidden=64, d_out=32, momentum=0.999):
        super().__init__(d_in, hidden, d_out)
        if not 0.0 <= momentum <= 1.0:
            raise ValueError("momentum must lie in [0, 1]")
        self.momentum = momentum

    @classmethod
    def from_online(cls, online, momentum=0.999):
        target = cls(*online.shape, momentum=momentum)
        target.set_flat(online.get_flat())
        return target


def momentum_update(online, target):
    """In place: ``theta_t <- m * theta_t + (1 - m) * theta_o``; returns ``target``."""
    if online.shape != target.shape:
        raise ShapeMismatchError(f"encoder shapes differ: {online.shape} vs {target.shape}")
    m = target.momentum
    for name in PARAM_NAMES:
        setattr(target, name, m * getattr(target, name) + (1.0 - m) * getattr(online, name))
    return target


class MemoryBank:
    """Index-stable store of unit-norm features for one domain.

    Row ``i`` always belongs to dataset sample ``i``. Single writer only.
    """

    def __init__(self, features, domain=""):
        features = as_matrix(features, "features")
        if not is_unit_rows(features):
            raise ValueError("memory bank rows must be unit-norm")
        self.features = features.copy()
        self.domain = domain

    def __len__(self):
        return len(self.features)

    @property
    def dim(self):
        return self.features.shape[1]

    def write(self, indices, rows):
        indices = np.asarray(indices, dtype=np.intp)
        rows = as_matrix(rows, "rows")
        if len(indices) != len(rows):
            raise DimMismatchError(f"{len(indices)} indices for {len(rows)} rows")
        if rows.shape[1] != self.dim:
            raise DimMismatchError(f"row width {rows.shape[1]} != bank width {self.dim}")
        if indices.size and (indices.min() < 0 or indices.max() >= len(self)):
            raise IndexError(f"bank index out of range [0, {len(self)})")
        if not is_unit_rows(rows):
            raise ValueError("memory bank rows must be unit-norm")
        self.features[indices] = rows

    def read(self, indices):
        return self.features[np.asarray(indices, dtype=np.intp)].copy()


def memory_bank_write(bank, indices, rows):
    bank.write(indices, rows)


def augment(x, rng, noise_sigma=0.1, mask_prob=0.1):
    """Feature-space view: additive Gaussian noise, then independent coordinate dropout."""
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    if not 0.0 <= mask_prob < 1.0:
        raise ValueError("mask_prob must lie in [0, 1)")
    out = np.array(x, dtype=np.float64, copy=True)
    if noise_sigma > 0:
        out += rng.normal(0.0, noise_sigma, size=out.shape)
    if mask_prob > 0:
        out[rng.random(out.shape) < mask_prob] = 0.0
    return out


def nearest_neighbor(bank, query, exclude_index):
    """Most similar bank row to each query, skipping ``exclude_index``.

    ``query`` may be a single vector or a batch, with ``exclude_index`` a
    scalar or one index per query. Ties go to the smallest index.

    Returns
    -------
    indices : int or ndarray
    rows : ndarray
        The selected bank rows (copies).
    """
    if len(bank) < 2:
        raise BankTooSmallError("need at least two bank rows to exclude one")
    single = np.ndim(query) == 1
    q = np.atleast_2d(np.asarray(query, dtype=np.float64))
    excl = np.broadcast_to(np.asarray(exclude_index, dtype=np.intp), (len(q),))
    if excl.min() < 0 or excl.max() >= len(bank):
        raise IndexError("exclude_index out of range")
    sims = q @ bank.features.T
    sims[np.arange(len(q)), excl] = -np.inf
    idx = np.argmax(sims, axis=1)
    rows = bank.features[idx].copy()
    if single:
        return int(idx[0]), rows[0]
    return idx, rows
