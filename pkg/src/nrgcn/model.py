"""NRGCN predictor with hand-written backprop and Adam.

Every slot embedding goes through one shared ``relu(e @ W + b)``; the outputs
of a hop's repeats are averaged, the per-hop vectors are concatenated
(hop 0 first) and a two-layer MLP produces class logits.
"""

from __future__ import annotations

import struct
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .sampler import LayerSpec, SamplingPlan

PARAM_NAMES = ("fc_w", "fc_b", "w1", "b1", "w2", "b2")
WEIGHT_NAMES = ("fc_w", "w1", "w2")


class ConfigurationError(ValueError):
    """Tensor layout does not match the model or plan."""


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class ModelParams:
    fc_w: np.ndarray  # F x H, shared by every hop and repeat
    fc_b: np.ndarray
    w1: np.ndarray    # (K+1)H x H2
    b1: np.ndarray
    w2: np.ndarray    # H2 x C
    b2: np.ndarray

    @property
    def dims(self) -> tuple[int, int, int, int]:
        """``(F, H, H2, C)``."""
        return self.fc_w.shape[0], self.fc_w.shape[1], self.w1.shape[1], self.w2.shape[1]

    @property
    def num_hops(self) -> int:
        return self.w1.shape[0] // self.fc_w.shape[1]

    def as_dict(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def copy(self) -> "ModelParams":
        return ModelParams(**{k: v.copy() for k, v in self.as_dict().items()})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(**{k: v.astype(dtype) for k, v in self.as_dict().items()})


def init_params(feature_dim: int, hidden: int, num_classes: int, num_hops: int, mlp_hidden: int | None = None,
                seed: int = 0, dtype=np.float32) -> ModelParams:
    """Glorot-uniform weights, zero biases. ``num_hops`` counts hop 0, i.e. K + 1."""
    rng = np.random.default_rng(seed)
    mlp_hidden = mlp_hidden or hidden

    def glorot(fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)

    return ModelParams(
        fc_w=glorot(feature_dim, hidden), fc_b=np.zeros(hidden, dtype),
        w1=glorot(num_hops * hidden, mlp_hidden), b1=np.zeros(mlp_hidden, dtype),
        w2=glorot(mlp_hidden, num_classes), b2=np.zeros(num_classes, dtype),
    )


def hop_pool_matrix(plan: SamplingPlan, dtype=np.float64) -> np.ndarray:
    """``(M, K+1)`` matrix averaging each hop's slots."""
    repeats = plan.repeats
    pool = np.zeros((plan.num_slots, plan.K + 1), dtype=dtype)
    pool[np.arange(plan.num_slots), plan.slot_hops] = 1.0 / np.repeat(repeats, repeats)
    return pool


def _check(params: ModelParams, rows: np.ndarray, plan: SamplingPlan):
    if rows.ndim != 3:
        raise ConfigurationError(f"expected (batch, slots, features) rows, got shape {rows.shape}")
    if rows.shape[1] != plan.num_slots:
        raise ConfigurationError(f"tensor has {rows.shape[1]} slots, plan expects {plan.num_slots}")
    if rows.shape[2] != params.fc_w.shape[0]:
        raise ConfigurationError(f"tensor feature dim {rows.shape[2]} != model input {params.fc_w.shape[0]}")
    if params.num_hops != plan.K + 1:
        raise ConfigurationError(f"model built for {params.num_hops - 1} hops, plan has K={plan.K}")


def _dropout_mask(rng, shape, rate, dtype):
    if rate <= 0 or rng is None:
        return None
    keep = 1.0 - rate
    return (rng.random(shape) < keep).astype(dtype) / dtype(keep)


def forward(params: ModelParams, rows: np.ndarray, plan: SamplingPlan, dropout: float = 0.0, rng=None):
    """Logits for a batch of slot matrices ``rows`` of shape (B, M, F).

    Dropout applies to the concatenated hop vector and the MLP hidden layer,
    only when ``rng`` is given.
    """
    _check(params, rows, plan)
    dtype = params.fc_w.dtype.type
    B, M, F = rows.shape
    H = params.fc_w.shape[1]
    x = rows.reshape(B * M, F).astype(dtype, copy=False)
    z = x @ params.fc_w + params.fc_b
    a = np.maximum(z, 0).reshape(B, M, H)
    pool = hop_pool_matrix(plan, dtype)
    hops = np.einsum("bmh,mk->bkh", a, pool)
    concat = hops.reshape(B, -1)
    mask1 = _dropout_mask(rng, concat.shape, dropout, dtype)
    cd = concat if mask1 is None else concat * mask1
    u = cd @ params.w1 + params.b1
    v = np.maximum(u, 0)
    mask2 = _dropout_mask(rng, v.shape, dropout, dtype)
    vd = v if mask2 is None else v * mask2
    logits = vd @ params.w2 + params.b2
    cache = dict(x=x, z=z, pool=pool, cd=cd, mask1=mask1, u=u, vd=vd, mask2=mask2, shape=(B, M, H))
    return logits, cache


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean loss and d(loss)/d(logits)."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    n = len(labels)
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1
    return float(loss), grad / n


def loss_and_grad(params: ModelParams, rows: np.ndarray, labels: np.ndarray, plan: SamplingPlan,
                  weight_decay: float = 0.0, dropout: float = 0.0, rng=None):
    """Mean cross-entropy plus ``weight_decay/2 * ||W||^2`` over weight matrices, and its gradient."""
    if len(labels) == 0:
        raise ValueError("empty batch")
    logits, c = forward(params, rows, plan, dropout, rng)
    loss, dlogits = softmax_cross_entropy(logits, labels)
    dlogits = dlogits.astype(params.w2.dtype, copy=False)
    B, M, H = c["shape"]

    g = {}
    g["w2"] = c["vd"].T @ dlogits
    g["b2"] = dlogits.sum(axis=0)
    dv = dlogits @ params.w2.T
    if c["mask2"] is not None:
        dv *= c["mask2"]
    du = dv * (c["u"] > 0)
    g["w1"] = c["cd"].T @ du
    g["b1"] = du.sum(axis=0)
    dconcat = du @ params.w1.T
    if c["mask1"] is not None:
        dconcat *= c["mask1"]
    da = np.einsum("bkh,mk->bmh", dconcat.reshape(B, -1, H), c["pool"]).reshape(B * M, H)
    dz = da * (c["z"] > 0)
    g["fc_w"] = c["x"].T @ dz
    g["fc_b"] = dz.sum(axis=0)

    if weight_decay:
        for name in WEIGHT_NAMES:
            w = getattr(params, name)
            loss += 0.5 * weight_decay * float(np.sum(w.astype(np.float64) ** 2))
            g[name] = g[name] + weight_decay * w
    return loss, ModelParams(**g)


class Adam:
    def __init__(self, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: ModelParams, grads: ModelParams) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in params.as_dict().items():
            g = getattr(grads, name)
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * (g * g)
            p -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)


@dataclass
class TrainConfig:
    hidden: int = 128
    mlp_hidden: int | None = None
    dropout: float = 0.5
    learning_rate: float = 0.01
    weight_decay: float = 5e-4
    batch_size: int = 256
    max_epochs: int = 500
    patience: int = 50
    seed: int = 0
    init_seed: int = 0
    track_test: bool = True

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 0 or self.patience < 1 or self.hidden < 1:
            raise ValueError("batch_size, patience and hidden must be positive, max_epochs >= 0")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


def _rows(tensor):
    return tensor.values if hasattr(tensor, "values") else tensor


def predict(params: ModelParams, tensor, nodes, plan: SamplingPlan, chunk: int = 512) -> np.ndarray:
    """Logits for ``nodes`` (row indices into the tensor)."""
    values = _rows(tensor)
    nodes = np.asarray(nodes, dtype=np.int64)
    out = [forward(params, values[nodes[i:i + chunk]], plan)[0] for i in range(0, len(nodes), chunk)]
    if not out:
        return np.zeros((0, params.w2.shape[1]), dtype=params.w2.dtype)
    return np.concatenate(out)


def evaluate(params: ModelParams, tensor, labels, mask, plan: SamplingPlan | None = None) -> float:
    """Fraction of ``mask`` nodes whose argmax logit equals the label."""
    plan = plan or tensor.plan
    mask = np.asarray(mask, dtype=np.int64)
    if mask.size == 0:
        raise ValueError("cannot evaluate on an empty mask")
    logits = predict(params, tensor, mask, plan)
    return float(np.mean(logits.argmax(axis=1) == np.asarray(labels)[mask]))


def _loss_acc(params, tensor, labels, nodes, plan):
    logits = predict(params, tensor, nodes, plan).astype(np.float64)
    loss, _ = softmax_cross_entropy(logits, labels[nodes])
    return loss, float(np.mean(logits.argmax(axis=1) == labels[nodes]))


def train(params: ModelParams, tensor, labels, splits, config: TrainConfig, plan: SamplingPlan | None = None,
          test_tensor=None, on_epoch=None):
    """Mini-batch Adam with early stopping on validation accuracy.

    Returns the parameters of the best-validation epoch and the per-epoch
    history. Per-epoch test accuracy is read from ``test_tensor`` when given
    (e.g. the clean graph under poisoning). ``params`` is not modified.
    """
    plan = plan or tensor.plan
    test_tensor = tensor if test_tensor is None else test_tensor
    values = _rows(tensor)
    labels = np.asarray(labels, dtype=np.int64)
    train_nodes = np.asarray(splits.train, dtype=np.int64)
    if train_nodes.size == 0:
        raise ValueError("empty training split")
    has_val = len(splits.val) > 0
    has_test = config.track_test and len(splits.test) > 0

    params = params.copy()
    best = params.copy()
    best_val = -1.0
    stale = 0
    opt = Adam(lr=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    history = []
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(train_nodes)
        total, correct = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            loss, grads = loss_and_grad(params, values[batch], labels[batch], plan,
                                        config.weight_decay, config.dropout, rng)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss {loss} at epoch {epoch}, batch starting {start}; "
                    f"try a lower learning rate (now {config.learning_rate})")
            opt.step(params, grads)
            total += loss * len(batch)
        train_loss = total / len(order)
        _, train_acc = _loss_acc(params, tensor, labels, train_nodes, plan)
        if has_val:
            val_loss, val_acc = _loss_acc(params, tensor, labels, splits.val, plan)
        else:
            val_loss, val_acc = train_loss, train_acc
        test_acc = evaluate(params, test_tensor, labels, splits.test, plan) if has_test else float("nan")
        seconds = time.perf_counter() - t0
        history.append(dict(epoch=epoch, train_loss=train_loss, train_acc=train_acc, val_loss=val_loss,
                            val_acc=val_acc, test_acc=test_acc, epoch_seconds=seconds))
        if on_epoch is not None:
            on_epoch(history[-1])
        if val_acc > best_val:
            best_val, best, stale = val_acc, params.copy(), 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    return best, history


CKPT_MAGIC = b"NRGM"
CKPT_VERSION = 1
_CKPT_HEAD = struct.Struct("<4sIIIIIIB")


def save_checkpoint(params: ModelParams, plan: SamplingPlan, path) -> None:
    """Header then float32 blocks in order fc_w, fc_b, w1, b1, w2, b2 (row-major)."""
    F, H, H2, C = params.dims
    head = _CKPT_HEAD.pack(CKPT_MAGIC, CKPT_VERSION, F, H, C, plan.K, H2, int(plan.exact_hop))
    layers = b"".join(struct.pack("<III", x.P, x.S, x.L) for x in plan.layers)
    with open(Path(path), "wb") as fh:
        fh.write(head + layers)
        for name in PARAM_NAMES:
            fh.write(np.ascontiguousarray(getattr(params, name), dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[ModelParams, SamplingPlan]:
    raw = Path(path).read_bytes()
    if len(raw) < _CKPT_HEAD.size:
        raise ValueError("truncated checkpoint")
    magic, version, F, H, C, K, H2, flags = _CKPT_HEAD.unpack_from(raw)
    if magic != CKPT_MAGIC or version != CKPT_VERSION:
        raise ValueError(f"not an NRGM v{CKPT_VERSION} checkpoint")
    off = _CKPT_HEAD.size
    layers = []
    for _ in range(K):
        layers.append(LayerSpec(*struct.unpack_from("<III", raw, off)))
        off += 12
    shapes = {"fc_w": (F, H), "fc_b": (H,), "w1": ((K + 1) * H, H2), "b1": (H2,), "w2": (H2, C), "b2": (C,)}
    arrays = {}
    for name in PARAM_NAMES:
        size = int(np.prod(shapes[name]))
        block = raw[off:off + 4 * size]
        if len(block) != 4 * size:
            raise ValueError(f"truncated checkpoint in block {name}")
        arrays[name] = np.frombuffer(block, dtype="<f4").reshape(shapes[name]).astype(np.float32)
        off += 4 * size
    return ModelParams(**arrays), SamplingPlan(tuple(layers), bool(flags & 1))
