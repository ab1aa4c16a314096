"""Personalized 10-class gesture classifier.

A plain numpy feedforward network (K -> 512 -> 512 -> 10, ReLU, inverted
dropout 0.2 after each hidden layer) trained with Adam on categorical
cross-entropy. The dataset is split 64-16-20 stratified per gesture and the
parameters from the epoch with the lowest validation loss are kept.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gestures import NUM_GESTURES

DEFAULT_HIDDEN = (512, 512)
DEFAULT_DROPOUT = 0.2


def softmax(logits: np.ndarray) -> np.ndarray:
    """Probabilities from logits; max-subtracted so large scores cannot
    overflow. Shift-invariant by construction."""
    s = np.asarray(logits, dtype=float)
    if not np.all(np.isfinite(s)):
        raise ValueError("non-finite logits")
    shifted = s - np.max(s, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    s = np.asarray(logits, dtype=float)
    shifted = s - np.max(s, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def cross_entropy(logits: np.ndarray, true_class) -> float | np.ndarray:
    """-log softmax(s)[true], computed in the log domain.

    Accepts one logit vector or a (B, C) batch with per-row labels.
    """
    ls = log_softmax(logits)
    if ls.ndim == 1:
        return float(-ls[int(true_class)])
    idx = np.asarray(true_class, dtype=int)
    return -ls[np.arange(ls.shape[0]), idx]


def cross_entropy_grad(logits: np.ndarray, true_class) -> np.ndarray:
    """d CE / d logits = softmax(s) - onehot(true)."""
    p = softmax(logits)
    if p.ndim == 1:
        p[int(true_class)] -= 1.0
        return p
    idx = np.asarray(true_class, dtype=int)
    p[np.arange(p.shape[0]), idx] -= 1.0
    return p


@dataclass
class MlpModel:
    """Weights/biases per layer plus the dropout setting used in training."""
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    dropout_rate: float = DEFAULT_DROPOUT
    rng_seed: int = 0

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases must pair up")
        for w, b in zip(self.weights, self.biases):
            if w.shape[1] != b.shape[0]:
                raise ValueError("bias width must match layer output width")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError("non-finite parameter")
        self._dropout_rng = np.random.default_rng(self.rng_seed)

    @classmethod
    def initialize(cls, input_dim: int, hidden: tuple[int, ...] = DEFAULT_HIDDEN,
                   n_classes: int = NUM_GESTURES, dropout_rate: float = DEFAULT_DROPOUT,
                   rng: np.random.Generator | int = 0) -> "MlpModel":
        """He-style uniform init, bound sqrt(6 / fan_in), seeded."""
        if isinstance(rng, (int, np.integer)):
            seed = int(rng)
            rng = np.random.default_rng(seed)
        else:
            seed = 0
        dims = (input_dim, *hidden, n_classes)
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = np.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights=weights, biases=biases, dropout_rate=dropout_rate, rng_seed=seed)

    @property
    def input_dim(self) -> int:
        return int(self.weights[0].shape[0])

    @property
    def n_classes(self) -> int:
        return int(self.biases[-1].shape[0])

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy_parameters(self) -> list[np.ndarray]:
        return [p.copy() for p in self.parameters()]

    def set_parameters(self, params: list[np.ndarray]) -> None:
        for i in range(len(self.weights)):
            self.weights[i] = params[2 * i].copy()
            self.biases[i] = params[2 * i + 1].copy()

    def forward(self, features: np.ndarray, training: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        """Logits for one feature vector or a (B, K) batch.

        Deterministic when training=False; with training=True an inverted
        dropout mask (keep prob 1-rate, scaled by 1/(1-rate)) follows each
        hidden layer.
        """
        x = np.asarray(features, dtype=float)
        single = x.ndim == 1
        if single:
            x = x[np.newaxis, :]
        if x.shape[1] != self.input_dim:
            raise ValueError(f"feature dimension {x.shape[1]} != model input {self.input_dim}")
        if training and rng is None:
            rng = self._dropout_rng
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
            if training and self.dropout_rate > 0.0:
                keep = 1.0 - self.dropout_rate
                h = h * (rng.random(h.shape) < keep) / keep
        logits = h @ self.weights[-1] + self.biases[-1]
        return logits[0] if single else logits

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        return softmax(self.forward(features, training=False))

    def predict(self, features: np.ndarray) -> np.ndarray:
        logits = self.forward(features, training=False)
        return np.argmax(logits, axis=-1)


def loss_and_gradients(model: MlpModel, x: np.ndarray, y: np.ndarray,
                       training: bool = False,
                       rng: np.random.Generator | None = None) -> tuple[float, list[np.ndarray]]:
    """Mean cross-entropy over the batch and its gradient for every parameter,
    ordered as model.parameters()."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=int))
    n_hidden = len(model.weights) - 1
    keep = 1.0 - model.dropout_rate
    if training and model.dropout_rate > 0.0 and rng is None:
        rng = model._dropout_rng

    acts = [x]           # inputs to each layer
    masks = []           # scaled dropout masks per hidden layer
    pre = []             # pre-activations of hidden layers
    h = x
    for i in range(n_hidden):
        z = h @ model.weights[i] + model.biases[i]
        pre.append(z)
        h = np.maximum(z, 0.0)
        if training and model.dropout_rate > 0.0:
            mask = (rng.random(h.shape) < keep) / keep
        else:
            mask = np.ones_like(h)
        masks.append(mask)
        h = h * mask
        acts.append(h)
    logits = h @ model.weights[-1] + model.biases[-1]

    batch = x.shape[0]
    loss = float(np.mean(cross_entropy(logits, y)))
    dlogits = cross_entropy_grad(logits, y) / batch

    grads: list[np.ndarray] = [None] * (2 * len(model.weights))
    grads[-2] = acts[-1].T @ dlogits
    grads[-1] = dlogits.sum(axis=0)
    dh = dlogits @ model.weights[-1].T
    for i in range(n_hidden - 1, -1, -1):
        dz = dh * masks[i] * (pre[i] > 0.0)
        grads[2 * i] = acts[i].T @ dz
        grads[2 * i + 1] = dz.sum(axis=0)
        if i > 0:
            dh = dz @ model.weights[i].T
    return loss, grads


class AdamOptimizer:
    """Standard Adam with bias correction. A zero gradient moves nothing."""

    def __init__(self, params: list[np.ndarray], learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p -= self.learning_rate * (m / b1t) / (np.sqrt(v / b2t) + self.epsilon)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    split: tuple[float, float, float] = (0.64, 0.16, 0.20)  # train, val, test
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    hidden: tuple[int, ...] = DEFAULT_HIDDEN
    dropout_rate: float = DEFAULT_DROPOUT
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")


@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def stratified_split(labels: np.ndarray, split: tuple[float, float, float] = (0.64, 0.16, 0.20),
                     seed: int = 0) -> SplitIndices:
    """Disjoint cover of the dataset, stratified per class.

    Per class of size n: floor(test_frac*n) test, floor(val_frac*n) val,
    remainder train — so train never loses a class that is present.
    """
    y = np.asarray(labels, dtype=int)
    rng = np.random.default_rng(seed)
    train, val, test = [], [], []
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        idx = rng.permutation(idx)
        n = len(idx)
        n_test = int(np.floor(split[2] * n))
        n_val = int(np.floor(split[1] * n))
        test.extend(idx[:n_test])
        val.extend(idx[n_test:n_test + n_val])
        train.extend(idx[n_test + n_val:])
    return SplitIndices(train=np.sort(np.array(train, dtype=int)),
                        val=np.sort(np.array(val, dtype=int)),
                        test=np.sort(np.array(test, dtype=int)))


@dataclass
class TrainingHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = float("inf")
    split: SplitIndices | None = None


def train(features: np.ndarray, labels: np.ndarray, config: TrainConfig = TrainConfig(),
          split: SplitIndices | None = None,
          n_classes: int = NUM_GESTURES) -> tuple[MlpModel, TrainingHistory]:
    """Train on the 64% split, select the epoch with minimum validation loss.

    Seed-deterministic: the same seed and data give bitwise-identical
    parameters.
    """
    x = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=int)
    if len(x) != len(y) or len(x) == 0:
        raise ValueError("features and labels must be nonempty and parallel")
    present = np.unique(y)
    missing = sorted(set(range(n_classes)) - set(present.tolist()))
    if missing:
        raise ValueError(f"class absent from training data: {missing}")
    if split is None:
        split = stratified_split(y, config.split, config.seed)

    rng = np.random.default_rng(config.seed)
    model = MlpModel.initialize(x.shape[1], hidden=config.hidden, n_classes=n_classes,
                                dropout_rate=config.dropout_rate, rng=rng)
    model.rng_seed = config.seed
    params = model.parameters()
    optimizer = AdamOptimizer(params, learning_rate=config.learning_rate,
                              beta1=config.beta1, beta2=config.beta2,
                              epsilon=config.epsilon)

    x_train, y_train = x[split.train], y[split.train]
    x_val, y_val = x[split.val], y[split.val]
    history = TrainingHistory(split=split)
    best_params = model.copy_parameters()

    for epoch in range(config.epochs):
        order = rng.permutation(len(x_train))
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            loss, grads = loss_and_gradients(model, x_train[batch], y_train[batch],
                                             training=True, rng=rng)
            optimizer.step(params, grads)
            epoch_losses.append(loss)
        model.set_parameters(params)
        params = model.parameters()

        history.train_loss.append(float(np.mean(epoch_losses)))
        if len(x_val):
            val_loss = float(np.mean(cross_entropy(model.forward(x_val), y_val)))
        else:
            val_loss = history.train_loss[-1]
        history.val_loss.append(val_loss)
        if val_loss < history.best_val_loss:
            history.best_val_loss = val_loss
            history.best_epoch = epoch
            best_params = model.copy_parameters()

    model.set_parameters(best_params)
    return model, history


@dataclass(frozen=True)
class ConfusionMatrix:
    """10x10 counts, rows = true class, columns = predicted class."""
    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=int)
        object.__setattr__(self, "counts", c)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError("counts must be square")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else 0.0

    def per_class_recall(self) -> np.ndarray:
        row_sums = self.counts.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            recall = np.diag(self.counts) / row_sums
        return np.where(row_sums > 0, recall, np.nan)

    def to_dict(self) -> dict:
        return {"counts": self.counts.tolist(), "accuracy": self.accuracy,
                "per_class_recall": [None if np.isnan(r) else float(r)
                                     for r in self.per_class_recall()]}


def evaluate(model: MlpModel, features: np.ndarray, labels: np.ndarray,
             n_classes: int = NUM_GESTURES) -> ConfusionMatrix:
    """Argmax-of-softmax predictions tallied against the true labels."""
    x = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=int)
    if len(x) == 0:
        raise ValueError("test set is empty")
    pred = model.predict(x)
    counts = np.zeros((n_classes, n_classes), dtype=int)
    np.add.at(counts, (y, pred), 1)
    return ConfusionMatrix(counts=counts)
