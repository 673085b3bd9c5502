"""Forward and backward passes of the layers used by the detector.

Feature maps have shape (B, M, C, T): batch, maps, EEG channels, time.
Every ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
consumes the upstream gradient and that cache.
"""
from typing import Tuple

import numpy as np


def spatial_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, tuple]:
    """C linear combinations of the input channels at each time step.

    x: (B, C, T); w: (C, C); b: (C,). Returns (B, C, T).
    """
    out = np.einsum("ij,bjt->bit", w, x) + b[None, :, None]
    return out, (x, w)


def spatial_backward(dout: np.ndarray, cache: tuple) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    x, w = cache
    dw = np.einsum("bit,bjt->ij", dout, x)
    db = dout.sum(axis=(0, 2))
    dx = np.einsum("ij,bit->bjt", w, dout)
    return dx, dw, db


def conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, tuple]:
    """(1, 3) convolution along time, zero padding 1, stride 1.

    x: (B, I, C, T); w: (O, I, 1, 3); b: (O,). Returns (B, O, C, T).
    """
    n, n_in, n_channels, n_times = x.shape
    n_out, _, _, width = w.shape
    padded = np.pad(x, ((0, 0), (0, 0), (0, 0), (1, 1)))
    cols = np.stack([padded[..., k:k + n_times] for k in range(width)], axis=2)
    cols = cols.reshape(n, n_in * width, n_channels * n_times)
    w2 = w.reshape(n_out, n_in * width)
    out = np.matmul(w2, cols) + b[None, :, None]
    return out.reshape(n, n_out, n_channels, n_times), (x.shape, cols, w)


def conv_backward(dout: np.ndarray, cache: tuple) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    x_shape, cols, w = cache
    n, n_in, n_channels, n_times = x_shape
    n_out, _, _, width = w.shape
    dout2 = dout.reshape(n, n_out, n_channels * n_times)
    db = dout2.sum(axis=(0, 2))
    dw = np.tensordot(dout2, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
    dcols = np.matmul(w.reshape(n_out, n_in * width).T, dout2)
    dcols = dcols.reshape(n, n_in, width, n_channels, n_times)
    dpadded = np.zeros((n, n_in, n_channels, n_times + 2), dtype=dout.dtype)
    for k in range(width):
        dpadded[..., k:k + n_times] += dcols[:, :, k]
    return dpadded[..., 1:-1], dw, db


def batchnorm_forward(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    mode: str,
    eps: float,
    momentum: float,
) -> Tuple[np.ndarray, dict, np.ndarray, np.ndarray]:
    """Per-map batch normalization over (B, C, T).

    Train mode normalizes with batch statistics and returns updated running
    statistics (``running = (1 - momentum) * running + momentum * batch``,
    unbiased batch variance); eval mode uses the running statistics.
    Returns (out, cache, running_mean, running_var).
    """
    axes = (0, 2, 3)
    shape = (1, -1, 1, 1)
    if mode == "train":
        count = x.shape[0] * x.shape[2] * x.shape[3]
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        unbiased = var * count / (count - 1) if count > 1 else var
        running_mean = (1.0 - momentum) * running_mean + momentum * mean
        running_var = (1.0 - momentum) * running_var + momentum * unbiased
    elif mode == "eval":
        mean, var = running_mean, running_var
    else:
        raise ValueError(f'Invalid batchnorm mode "{mode}"')
    std = np.sqrt(var + eps)
    x_hat = (x - mean.reshape(shape)) / std.reshape(shape)
    out = gamma.reshape(shape) * x_hat + beta.reshape(shape)
    cache = {"mode": mode, "x_hat": x_hat, "std": std, "gamma": gamma}
    return out, cache, running_mean.astype(x.dtype), running_var.astype(x.dtype)


def batchnorm_backward(dout: np.ndarray, cache: dict) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    axes = (0, 2, 3)
    shape = (1, -1, 1, 1)
    x_hat, std, gamma = cache["x_hat"], cache["std"], cache["gamma"]
    dgamma = np.sum(dout * x_hat, axis=axes)
    dbeta = np.sum(dout, axis=axes)
    scale = (gamma / std).reshape(shape)
    if cache["mode"] == "eval":
        return dout * scale, dgamma, dbeta
    count = dout.shape[0] * dout.shape[2] * dout.shape[3]
    dx = scale / count * (
        count * dout - dbeta.reshape(shape) - x_hat * dgamma.reshape(shape)
    )
    return dx, dgamma, dbeta


def relu_forward(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    mask = x > 0
    return x * mask, mask


def relu_backward(dout: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return dout * mask


def maxpool_forward(x: np.ndarray) -> Tuple[np.ndarray, tuple]:
    """(1, 2) max-pooling with stride 2 along time; ties go to the earlier sample."""
    n, maps, n_channels, n_times = x.shape
    pairs = x.reshape(n, maps, n_channels, n_times // 2, 2)
    index = np.argmax(pairs, axis=-1)
    out = np.take_along_axis(pairs, index[..., None], axis=-1)[..., 0]
    return out, (x.shape, index)


def maxpool_backward(dout: np.ndarray, cache: tuple) -> np.ndarray:
    x_shape, index = cache
    n, maps, n_channels, n_times = x_shape
    dpairs = np.zeros((n, maps, n_channels, n_times // 2, 2), dtype=dout.dtype)
    np.put_along_axis(dpairs, index[..., None], dout[..., None], axis=-1)
    return dpairs.reshape(x_shape)


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Full-extent convolution written as an affine map: x (B, D), w (O, D)."""
    return x @ w.T + b


def dense_backward(dout: np.ndarray, x: np.ndarray, w: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    return dout @ w, dout.T @ x, dout.sum(axis=0)


def softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(dprobs: np.ndarray, probs: np.ndarray) -> np.ndarray:
    return probs * (dprobs - np.sum(dprobs * probs, axis=-1, keepdims=True))
