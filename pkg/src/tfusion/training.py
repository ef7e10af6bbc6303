"""Adam optimizer, stratified splitting, and the epoch training loop."""

import contextlib
import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, make_batches
from .errors import ConfigError, DataError, SizeError, StratifyError
from .layers import Mode, cce_loss
from .model import TFusionModel
from .seeding import SHUFFLE, SPLIT, derive_seed


def single_thread_blas():
    """Pin BLAS pools to one thread for the scope.

    The layer kernels issue many small matrix products; thread-pool
    synchronization costs more than the parallelism returns, and a fixed
    thread count keeps runs bitwise reproducible.
    """
    try:
        import threadpoolctl
        return threadpoolctl.threadpool_limits(limits=1)
    except Exception:
        return contextlib.nullcontext()


@dataclass
class TrainConfig:
    learning_rate: float = 0.0001
    batch_size: int = 16
    max_epochs: int = 50
    seed: int = 0
    test_fraction: float = 0.2

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError(f"test_fraction must be in (0,1), got {self.test_fraction}")


class Adam:
    """Adam with bias correction; updates parameter arrays in place."""

    def __init__(self, params: dict, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict, lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise SizeError(f"gradient shape {g.shape} != parameter shape {p.shape} for '{name}'")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def stratified_split(labels, test_fraction: float, seed: int):
    """Partition sample indices so each class contributes floor(f*n_c) to test.

    Selection is a seeded shuffle within each class; both returned index
    lists are sorted and together cover every sample exactly once.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test_fraction must be in (0,1), got {test_fraction}")
    labels = list(labels)
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for cls in sorted(set(labels)):
        members = [i for i, l in enumerate(labels) if l == cls]
        if len(members) < 2:
            raise StratifyError(f"class {cls} has {len(members)} sample(s); need at least 2")
        perm = rng.permutation(len(members))
        n_test = math.floor(test_fraction * len(members))
        test_idx.extend(members[j] for j in perm[:n_test])
        train_idx.extend(members[j] for j in perm[n_test:])
    return sorted(train_idx), sorted(test_idx)


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)

    def __len__(self):
        return len(self.train_loss)

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,train_acc,val_loss,val_acc"]
        rows = zip(self.train_loss, self.train_acc, self.val_loss, self.val_acc)
        for epoch, (tl, ta, vl, va) in enumerate(rows, start=1):
            lines.append(f"{epoch},{tl:.6f},{ta:.6f},{vl:.6f},{va:.6f}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write(self.to_csv())


def _batch_accuracy(probs, onehot) -> int:
    return int((probs.argmax(axis=1) == onehot.argmax(axis=1)).sum())


def evaluate(model: TFusionModel, ds: Dataset, indices, batch_size: int):
    """Inference-mode mean loss and accuracy over the given samples."""
    total, correct, loss_sum = 0, 0, 0.0
    with single_thread_blas():
        for batch in make_batches(ds, indices, batch_size):
            probs = model.forward(batch.images, Mode.INFER)
            n = len(batch.indices)
            loss_sum += cce_loss(probs, batch.onehot) * n
            correct += _batch_accuracy(probs, batch.onehot)
            total += n
    if total == 0:
        raise DataError("nothing to evaluate")
    return loss_sum / total, correct / total


def train(model: TFusionModel, dataset: Dataset, config: TrainConfig, log=None):
    """Run the full training protocol; returns (model, History).

    The dataset is stratified into train/held-out parts from the split
    sub-seed; each epoch reshuffles the training indices, steps Adam over
    mini-batches (the final partial batch included), then records
    inference-mode metrics on the held-out part as the validation row.
    """
    if len(dataset) == 0:
        raise DataError("dataset is empty")
    train_idx, val_idx = stratified_split(
        dataset.labels, config.test_fraction, derive_seed(config.seed, SPLIT))
    optimizer = Adam(model.params())
    history = History()
    with single_thread_blas():
        for epoch in range(config.max_epochs):
            epoch_seed = derive_seed(config.seed, SHUFFLE, epoch)
            seen, correct, loss_sum = 0, 0, 0.0
            for batch in make_batches(dataset, train_idx, config.batch_size,
                                      shuffle=True, seed=epoch_seed):
                probs = model.forward(batch.images, Mode.TRAIN)
                n = len(batch.indices)
                loss_sum += cce_loss(probs, batch.onehot) * n
                correct += _batch_accuracy(probs, batch.onehot)
                seen += n
                model.loss_backward(probs, batch.onehot)
                optimizer.step(model.params(), model.grads(), config.learning_rate)
            val_loss, val_acc = evaluate(model, dataset, val_idx, config.batch_size)
            history.train_loss.append(loss_sum / seen)
            history.train_acc.append(correct / seen)
            history.val_loss.append(val_loss)
            history.val_acc.append(val_acc)
            model.epochs_trained += 1
            if log:
                log(f"epoch {epoch + 1}/{config.max_epochs} "
                    f"train_loss={loss_sum / seen:.4f} train_acc={correct / seen:.4f} "
                    f"val_loss={val_loss:.4f} val_acc={val_acc:.4f}")
    return model, history
