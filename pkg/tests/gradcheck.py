"""Central finite-difference oracle for gradient checks.

Kept independent of the engine's backward passes: gradients are estimated
purely by re-running forward with wiggled inputs/parameters.
"""

import numpy as np

from tfusion.layers import Mode


def central_diff(loss_fn, x, h=1e-5):
    """Estimate d(loss)/dx by symmetric differences, wiggling x in place."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = loss_fn()
        flat[i] = orig - h
        down = loss_fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def central_diff_sampled(loss_fn, x, coords, h=1e-5):
    """Like central_diff but only at the given flat coordinates."""
    flat = x.reshape(-1)
    out = {}
    for i in coords:
        orig = flat[i]
        flat[i] = orig + h
        up = loss_fn()
        flat[i] = orig - h
        down = loss_fn()
        flat[i] = orig
        out[i] = (up - down) / (2.0 * h)
    return out


def max_rel_err(analytic, numeric):
    """Worst elementwise |a-n| / max(|a|, |n|, 1)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check_layer(layer, x, mode=Mode.TRAIN, seed=0, h=1e-5, rng_state=None):
    """Gradient-check one layer against the finite-difference oracle.

    Returns the worst relative error over the input gradient and every
    parameter gradient. `rng_state` freezes a stochastic layer (dropout)
    so repeated forwards see the same draw.
    """
    rng = np.random.default_rng(seed)

    def forward():
        if rng_state is not None:
            layer.rng.bit_generator.state = rng_state
        return layer.forward(x, mode)

    out = forward()
    upstream = rng.standard_normal(out.shape)

    def loss():
        return float(np.sum(forward() * upstream))

    input_grad = layer.backward(upstream)
    param_grads = {name: g.copy() for name, g in layer.grads().items()}

    errs = [max_rel_err(input_grad, central_diff(loss, x, h))]
    for name, p in layer.params().items():
        errs.append(max_rel_err(param_grads[name], central_diff(loss, p, h)))
    return max(errs)
