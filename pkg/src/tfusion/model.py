"""T-Fusion network: configuration, assembly, and parameter accounting.

The architecture is a multi-kernel convolutional stem (3x3/5x5/7x7 branches
concatenated), batch norm, ReLU, the spatial-attention gate, and a max pool;
then four conv/BN/ReLU/pool blocks; then a dense head with dropout and a
softmax output. Five pooling stages divide the input size by 32, so 224x224
inputs flatten at 7x7 and 32x32 desk inputs flatten at 1x1.
"""

from dataclasses import dataclass

import numpy as np

from .attention import MlsamBlock
from .errors import ConfigError, SizeError
from .layers import (
    BatchNorm2D, Conv2D, Dense, Dropout, Flatten, MaxPool2D, Mode,
    MultiKernelConv, ReLU, Softmax, softmax_cce_grad,
)
from .seeding import DROPOUT, INIT, derive_seed

POOL_STAGES = 5


@dataclass
class ModelConfig:
    input_h: int = 224
    input_w: int = 224
    input_c: int = 3
    branch_filters: int = 32
    block_filters: tuple = (64, 128, 128, 256)
    dense_units: int = 256
    num_classes: int = 2
    dropout_rate: float = 0.6
    mlsam_kernels: tuple = (3, 5, 7)

    def __post_init__(self):
        self.block_filters = tuple(int(f) for f in self.block_filters)
        self.mlsam_kernels = tuple(int(k) for k in self.mlsam_kernels)
        self.validate()

    def validate(self):
        div = 2 ** POOL_STAGES
        if self.input_h % div or self.input_w % div:
            raise ConfigError(
                f"input size {self.input_h}x{self.input_w} must be divisible by {div} "
                f"({POOL_STAGES} pooling stages)"
            )
        if self.input_c < 1:
            raise ConfigError("input_c must be positive")
        if len(self.block_filters) != 4:
            raise ConfigError(f"block_filters needs exactly 4 entries, got {len(self.block_filters)}")
        if self.branch_filters < 1 or any(f < 1 for f in self.block_filters) or self.dense_units < 1:
            raise ConfigError("filter and unit counts must be positive")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0,1), got {self.dropout_rate}")
        if not self.mlsam_kernels or any(k < 1 or k % 2 == 0 for k in self.mlsam_kernels):
            raise ConfigError(f"mlsam_kernels must be odd positive ints, got {self.mlsam_kernels}")

    @property
    def stem_channels(self) -> int:
        return 3 * self.branch_filters

    @property
    def flatten_len(self) -> int:
        div = 2 ** POOL_STAGES
        return (self.input_h // div) * (self.input_w // div) * self.block_filters[-1]


STEM_KERNELS = (3, 5, 7)


class TFusionModel:
    """The assembled layer stack plus bookkeeping for checkpoints."""

    def __init__(self, config: ModelConfig, layers, seed: int):
        self.config = config
        self.layers = layers  # ordered (name, layer) pairs
        self.seed = seed
        self.epochs_trained = 0
        self.class_names = None

    def forward(self, x: np.ndarray, mode: Mode = Mode.INFER) -> np.ndarray:
        cfg = self.config
        expected = (cfg.input_h, cfg.input_w, cfg.input_c)
        if x.ndim != 4 or x.shape[1:] != expected:
            raise SizeError(f"batch shape {getattr(x, 'shape', None)} does not match configured input {expected}")
        for _, layer in self.layers:
            x = layer.forward(x, mode)
        return x

    def loss_backward(self, probs: np.ndarray, onehot: np.ndarray) -> np.ndarray:
        """Backpropagate mean cross-entropy from softmax probabilities.

        Feeds the composed softmax+CCE gradient (probs - onehot)/N straight
        to the layer below the softmax; the softmax layer itself is skipped.
        """
        grad = softmax_cce_grad(probs, onehot)
        for _, layer in reversed(self.layers[:-1]):
            grad = layer.backward(grad)
        return grad

    def attention_map(self, x: np.ndarray, mode: Mode = Mode.INFER) -> np.ndarray:
        """Run the stack up to the attention gate; return its map (NHW1)."""
        for name, layer in self.layers:
            if name == "mlsam":
                _, attention = layer.attend(x, mode)
                return attention
            x = layer.forward(x, mode)
        raise RuntimeError("model has no attention block")

    def params(self) -> dict:
        return {f"{name}.{p}": a for name, layer in self.layers
                for p, a in layer.params().items()}

    def grads(self) -> dict:
        return {f"{name}.{p}": a for name, layer in self.layers
                for p, a in layer.grads().items()}

    def state(self) -> dict:
        return {f"{name}.{p}": a for name, layer in self.layers
                for p, a in layer.state().items()}

    def parameter_breakdown(self):
        """Per-layer (name, trainable, total) rows; total adds BN stats."""
        rows = []
        for name, layer in self.layers:
            trainable = sum(a.size for a in layer.params().values())
            total = trainable + sum(a.size for a in layer.state().values())
            if total:
                rows.append((name, trainable, total))
        return rows


def build_tfusion(config: ModelConfig, seed: int) -> TFusionModel:
    """Assemble the network deterministically from (config, seed).

    Conv/dense weights are He-initialized from the init sub-seed; biases are
    zero; BN starts at gamma=1, beta=0. Dropout draws from its own sub-seed.
    """
    config.validate()
    init_rng = np.random.default_rng(derive_seed(seed, INIT))
    drop_rng = np.random.default_rng(derive_seed(seed, DROPOUT))

    layers = []
    stem_specs = [(k, config.branch_filters) for k in STEM_KERNELS]
    layers.append(("stem", MultiKernelConv(config.input_c, stem_specs, rng=init_rng)))
    layers.append(("bn1", BatchNorm2D(config.stem_channels)))
    layers.append(("relu1", ReLU()))
    layers.append(("mlsam", MlsamBlock(config.stem_channels, config.mlsam_kernels, rng=init_rng)))
    layers.append(("pool1", MaxPool2D()))

    cin = config.stem_channels
    for i, filters in enumerate(config.block_filters, start=2):
        layers.append((f"conv{i}", Conv2D(3, 3, cin, filters, rng=init_rng)))
        layers.append((f"bn{i}", BatchNorm2D(filters)))
        layers.append((f"relu{i}", ReLU()))
        layers.append((f"pool{i}", MaxPool2D()))
        cin = filters

    layers.append(("flatten", Flatten()))
    layers.append(("dense1", Dense(config.flatten_len, config.dense_units, rng=init_rng)))
    layers.append(("relu_head", ReLU()))
    layers.append(("dropout", Dropout(config.dropout_rate, rng=drop_rng)))
    layers.append(("dense2", Dense(config.dense_units, config.num_classes, rng=init_rng)))
    layers.append(("softmax", Softmax()))
    return TFusionModel(config, layers, seed)


def count_parameters(model: TFusionModel):
    """Return (trainable, total); total additionally counts BN running stats."""
    trainable = sum(t for _, t, _ in model.parameter_breakdown())
    total = sum(t for _, _, t in model.parameter_breakdown())
    return trainable, total
