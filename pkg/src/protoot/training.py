"""End-to-end training: warm-up, per-epoch clustering and transport, batch updates.

Two domains share one online encoder and one momentum encoder; each domain
keeps its own memory bank. Ground-truth labels never enter this module.
Evaluation happens through an optional callback that only sees embeddings.
"""

import dataclasses
import time
from dataclasses import dataclass, field

import numpy as np

from .assignment import (
    cross_assign,
    cross_marginal_align,
    gather_negatives,
    initial_prototypes,
    intra_assign,
    update_prototypes,
)
from .clustering import kmeans, marginal_from_labels
from .losses import LossValue, loss_cross, loss_intra, loss_pretrain
from .ot import SolverConfig
from .representation import (
    MemoryBank,
    MlpEncoder,
    MomentumEncoder,
    augment,
    momentum_update,
    nearest_neighbor,
)
from .tensor import as_matrix

SOLVER_CHOICES = ("protoot", "sot", "uot", "pot", "none")
DOMAINS = ("a", "b")


@dataclass
class TrainConfig:
    """Hyperparameters of a training run.

    The field names double as config-file keys and, kebab-cased, as CLI
    flags. ``lambda_`` is spelled ``lambda`` in both.
    """

    epochs: int = 60
    warmup_epochs: int = 10
    batch_size: int = 64
    learning_rate: float = 2.5e-4
    lambda_: float = 0.01
    tau: float = 0.2
    momentum: float = 0.999
    epsilon: float = 0.05
    sinkhorn_mode: str = "fixed:3"
    k: int = 5
    seed: int = 7
    intra_solver: str = "protoot"
    cross_solver: str = "protoot"
    hidden: int = 64
    d_out: int = 32
    encoder_init: str = "identity"
    noise_sigma: float = 0.03
    mask_prob: float = 0.05
    kl_strength: float = 1.0
    mass_fraction: float = 0.9
    beta_align: str = "matching"
    kmeans_max_iter: int = 100
    kmeans_restarts: int = 10
    record_wallclock: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.epochs < 0 or self.warmup_epochs < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.warmup_epochs > self.epochs:
            raise ValueError("warmup_epochs must not exceed epochs")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.kmeans_restarts < 1:
            raise ValueError("kmeans_restarts must be >= 1")
        if self.learning_rate < 0 or self.lambda_ < 0:
            raise ValueError("learning_rate and lambda must be >= 0")
        if not self.tau > 0:
            raise ValueError("tau must be > 0")
        for name in ("intra_solver", "cross_solver"):
            if getattr(self, name) not in SOLVER_CHOICES:
                raise ValueError(f"{name} must be one of {SOLVER_CHOICES}")
        if self.beta_align not in ("matching", "index"):
            raise ValueError("beta_align must be 'matching' or 'index'")
        self.solver_config()

    def solver_config(self):
        return SolverConfig.from_string(self.sinkhorn_mode, epsilon=self.epsilon)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


class Adam:
    """Adam on a flat parameter vector."""

    def __init__(self, n_params, lr=2.5e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, params, grad):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class DomainAssignments:
    """Per-epoch state for one domain, fixed for all of that epoch's batches."""

    prototypes: object = None  # PrototypeSet after the soft update
    intra_labels: np.ndarray = None
    cross_labels: np.ndarray = None
    beta: np.ndarray = None
    beta_cr: np.ndarray = None


@dataclass
class TrainState:
    encoder: MlpEncoder
    target: MomentumEncoder
    optimizer: Adam
    banks: dict
    rngs: dict
    assignments: dict = field(default_factory=dict)
    epoch: int = 0


@dataclass
class TrainedModel:
    encoder: MlpEncoder
    target: MomentumEncoder
    banks: dict
    assignments: dict
    config: TrainConfig

    def transform(self, x):
        return self.encoder.forward(x, keep_cache=False)


def _spawn_rngs(seed):
    names = ("init", "kmeans", "shuffle", "augment")
    seqs = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.Generator(np.random.PCG64(s)) for n, s in zip(names, seqs)}


def init_state(cfg, data):
    """Fresh encoders, optimizer and memory banks filled by a full momentum-encoder pass."""
    d_in = data["a"].shape[1]
    rngs = _spawn_rngs(cfg.seed)
    encoder = MlpEncoder(d_in, cfg.hidden, cfg.d_out, rng=rngs["init"], init=cfg.encoder_init)
    target = MomentumEncoder.from_online(encoder, cfg.momentum)
    banks = {d: MemoryBank(target.forward(data[d], keep_cache=False), domain=d) for d in DOMAINS}
    return TrainState(encoder=encoder, target=target,
                      optimizer=Adam(encoder.n_params, lr=cfg.learning_rate),
                      banks=banks, rngs=rngs)


def _solver_kw(cfg):
    return {"kl_strength": cfg.kl_strength, "mass_fraction": cfg.mass_fraction}


def compute_assignments(state, cfg):
    """K-means, intra-domain transport and cross-domain transport on the current banks."""
    solver_cfg = cfg.solver_config()
    kw = _solver_kw(cfg)
    results = {}
    clusters = {}
    for d in DOMAINS:
        bank = state.banks[d]
        km = kmeans(bank.features, cfg.k, state.rngs["kmeans"], max_iter=cfg.kmeans_max_iter,
                    n_init=cfg.kmeans_restarts)
        clusters[d] = km
        beta = marginal_from_labels(km.labels, cfg.k)
        # SOT baselines still use K-means centroids as initial prototypes
        solver = cfg.intra_solver if cfg.intra_solver != "none" else "protoot"
        st = intra_assign(bank, initial_prototypes(km.centroids), beta, solver_cfg,
                          solver=solver, **kw)
        results[d] = DomainAssignments(prototypes=update_prototypes(st.plan, bank),
                                       intra_labels=st.pseudo_labels, beta=beta)
    if cfg.cross_solver != "none":
        for d, other in zip(DOMAINS, reversed(DOMAINS)):
            other_protos = results[other].prototypes
            beta_cr = cross_marginal_align(clusters[d], other_protos, mode=cfg.beta_align)
            st = cross_assign(state.banks[d], other_protos, beta_cr, solver_cfg,
                              solver=cfg.cross_solver, **kw)
            results[d].cross_labels = st.pseudo_labels
            results[d].beta_cr = beta_cr
    return results


def _zero_loss(n, d):
    return LossValue(0.0, np.zeros((n, d)))


def train_step(state, cfg, domain, idx, x, warmup):
    """One optimizer step on a batch of ``domain``; returns the loss scalars."""
    enc, target = state.encoder, state.target
    bank = state.banks[domain]
    q = enc.forward(x)
    k = target.forward(augment(x, state.rngs["augment"], cfg.noise_sigma, cfg.mask_prob),
                       keep_cache=False)
    n, d = q.shape
    out = {"pre": 0.0, "in": 0.0, "cr": 0.0}
    if warmup:
        total = loss_pretrain(q, k, cfg.tau)
        out["pre"] = total.value
    else:
        own = state.assignments[domain]
        l_in = _zero_loss(n, d)
        l_cr = _zero_loss(n, d)
        if cfg.intra_solver != "none":
            _, nbr = nearest_neighbor(bank, q, idx)
            labels = own.intra_labels[idx]
            protos = own.prototypes.vectors
            l_in = loss_intra(q, [k, nbr, protos[labels]], gather_negatives(protos, labels),
                              cfg.tau)
        if cfg.cross_solver != "none":
            other = state.assignments[DOMAINS[1 - DOMAINS.index(domain)]]
            labels = own.cross_labels[idx]
            protos = other.prototypes.vectors
            l_cr = loss_cross(q, protos[labels], gather_negatives(protos, labels), cfg.tau)
        total = LossValue(l_in.value + cfg.lambda_ * l_cr.value,
                          l_in.grad_q + cfg.lambda_ * l_cr.grad_q)
        out["in"], out["cr"] = l_in.value, l_cr.value
    out["total"] = total.value
    if cfg.intra_solver != "none" or cfg.cross_solver != "none" or warmup:
        grad = enc.backward(total.grad_q)
        enc.set_flat(state.optimizer.step(enc.get_flat(), grad))
    momentum_update(enc, target)
    bank.write(idx, k)
    return out


def train_epoch(state, cfg, data, epoch):
    """Run one epoch in place and return its loss summary (per-sample means)."""
    warmup = epoch < cfg.warmup_epochs
    if warmup:
        state.assignments = {}
    else:
        state.assignments = compute_assignments(state, cfg)
    rng = state.rngs["shuffle"]
    batches = {}
    for d in DOMAINS:
        order = rng.permutation(len(data[d]))
        batches[d] = [order[i:i + cfg.batch_size] for i in range(0, len(order), cfg.batch_size)]
        # a trailing singleton cannot form an instance-discrimination batch
        if len(batches[d]) > 1 and len(batches[d][-1]) < 2:
            batches[d][-2] = np.concatenate(batches[d][-2:])
            batches[d].pop()
    sums = {"pre": 0.0, "in": 0.0, "cr": 0.0, "total": 0.0}
    n_total = 0
    for b in range(max(len(v) for v in batches.values())):
        for d in DOMAINS:
            if b >= len(batches[d]):
                continue
            idx = batches[d][b]
            losses = train_step(state, cfg, d, idx, data[d][idx], warmup)
            for key in sums:
                sums[key] += losses[key]
            n_total += len(idx)
    state.epoch = epoch + 1
    summary = {key: val / n_total for key, val in sums.items()}
    summary["loss_pre"] = summary.pop("pre") if warmup else None
    summary["loss_in"] = summary.pop("in") if not warmup and cfg.intra_solver != "none" else None
    summary["loss_cr"] = summary.pop("cr") if not warmup and cfg.cross_solver != "none" else None
    summary["loss_total"] = summary.pop("total")
    return {k: v for k, v in summary.items() if k.startswith("loss_")}


def run_training(cfg, x_a, x_b, evaluator=None, callback=None):
    """Train from scratch and return ``(TrainedModel, history)``.

    Parameters
    ----------
    cfg : TrainConfig
    x_a, x_b : ndarray
        Unlabeled input features of the two domains (same width).
    evaluator : callable, optional
        ``evaluator(emb_a, emb_b)`` returning a dict with a ``"mean"`` entry
        of ``{k: precision}``; called after every epoch on the online
        encoder's embeddings. Labels stay inside it.
    callback : callable, optional
        Receives each metrics record as soon as it is produced.
    """
    data = {"a": as_matrix(x_a, "x_a"), "b": as_matrix(x_b, "x_b")}
    if data["a"].shape[1] != data["b"].shape[1]:
        raise ValueError("domains must share the input dimension")
    state = init_state(cfg, data)
    history = []
    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        record = {"epoch": epoch}
        record.update(train_epoch(state, cfg, data, epoch))
        if evaluator is not None:
            emb_a = state.encoder.forward(data["a"], keep_cache=False)
            emb_b = state.encoder.forward(data["b"], keep_cache=False)
            record["p_at_k"] = {str(k): v for k, v in evaluator(emb_a, emb_b)["mean"].items()}
        else:
            record["p_at_k"] = {}
        record["wallclock_ms"] = (round((time.perf_counter() - start) * 1000.0, 3)
                                  if cfg.record_wallclock else None)
        history.append(record)
        if callback is not None:
            callback(record)
    model = TrainedModel(encoder=state.encoder, target=state.target, banks=state.banks,
                         assignments=state.assignments, config=cfg)
    return model, history
