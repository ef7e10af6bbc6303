"""Fuzzy max fusion over a homogeneous set of trained networks.

The fused score per class is an affine transform of the elementwise maximum
of the member probabilities: fused = alpha * max + epsilon + bias. With
alpha > 0 the transform never changes the argmax, so classification uses the
fused scores directly without renormalizing (the bias makes rows non-simplex
by construction).
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SizeError
from .layers import Mode


@dataclass
class FusionParams:
    alpha: float = 0.8
    epsilon: float = 0.0001
    bias: float = 20.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigError(f"fusion alpha must be > 0 to preserve the argmax, got {self.alpha}")


def fuzzy_max_fuse(member_probs, params: FusionParams) -> np.ndarray:
    """Fuse per-member [N,K] probability tensors into [N,K] scores."""
    members = list(member_probs)
    if not members:
        raise ConfigError("fusion needs at least one member")
    shape = members[0].shape
    for p in members[1:]:
        if p.shape != shape:
            raise SizeError(f"member shapes disagree: {p.shape} vs {shape}")
    peak = members[0]
    for p in members[1:]:
        peak = np.maximum(peak, p)
    return params.alpha * peak + params.epsilon + params.bias


class EnsembleModel:
    """Frozen member networks combined by fuzzy max fusion."""

    def __init__(self, members, params: FusionParams = None):
        members = list(members)
        if not members:
            raise ConfigError("ensemble needs at least one member")
        ref = members[0].config
        for m in members[1:]:
            c = m.config
            if (c.num_classes, c.input_h, c.input_w, c.input_c) != (
                    ref.num_classes, ref.input_h, ref.input_w, ref.input_c):
                raise ConfigError("ensemble members must share input shape and class count")
        self.members = members
        self.params = params or FusionParams()

    def predict(self, batch: np.ndarray):
        """Return (labels, fused_scores); ties go to the lower class index."""
        member_probs = [m.forward(batch, Mode.INFER) for m in self.members]
        fused = fuzzy_max_fuse(member_probs, self.params)
        labels = [int(i) for i in fused.argmax(axis=1)]
        return labels, fused


def ensemble_predict(ens: EnsembleModel, batch: np.ndarray):
    return ens.predict(batch)
