"""Desk-scale evaluation tasks and their fixed toy networks.

Nothing here is trained by gradient descent. Hidden layers use seeded
random weights; the output layer is a ridge least-squares fit of one-hot
targets on the float64 hidden features, scaled so softmax is confident.

The blob task draws every class from two antipodal Gaussian blobs
(centres ``+c`` and ``-c``), so no linear map of the input separates the
classes and the decision rests on GELU's curvature. Hidden pre-activations
are kept around unit scale, where that curvature lives.
"""

from __future__ import annotations

import numpy as np

from ..rng import make_rng
from .layers import LayerKind, LayerSpec, NetworkSpec, WeightTensor

BLOBS_DIM = 8
BLOBS_HIDDEN = 128
BLOBS_CLASSES = 10
BLOBS_TRAIN = 6000
BLOBS_EVAL = 10000


def make_blobs(
    samples: int,
    seed: int,
    dim: int = BLOBS_DIM,
    classes: int = BLOBS_CLASSES,
    spread: float = 1.5,
    noise: float = 0.7,
    split: str = "eval",
) -> tuple[np.ndarray, np.ndarray]:
    """Antipodal Gaussian blobs.

    Centres depend only on ``seed``; samples on ``seed`` and ``split``.
    """
    centres = make_rng(seed, "blob-centres").normal(0.0, spread, size=(classes, dim))
    rng = make_rng(seed, f"blob-samples-{split}")
    labels = rng.integers(0, classes, size=samples)
    sign = rng.choice([-1.0, 1.0], size=samples)
    x = centres[labels] * sign[:, None] + rng.normal(0.0, noise, size=(samples, dim))
    return x, labels


def _ridge_readout(features: np.ndarray, labels: np.ndarray, classes: int, lam: float, temperature: float):
    """Least-squares map from ``[features, 1]`` to scaled one-hot targets."""
    a = np.hstack([features, np.ones((len(features), 1))])
    y = np.eye(classes)[labels] * temperature
    sol = np.linalg.solve(a.T @ a + lam * np.eye(a.shape[1]), a.T @ y)
    return sol[:-1], sol[-1]


def _gelu(x):
    from ..cpwl import FunctionId, reference

    return reference(FunctionId.GELU, x)


def blobs_network(
    seed: int, train_samples: int = BLOBS_TRAIN, granularity: float = 0.25, temperature: float = 6.0
) -> NetworkSpec:
    """DENSE -> GELU -> DENSE -> SOFTMAX classifier for :func:`make_blobs`."""
    rng = make_rng(seed, "blob-net")
    w1 = rng.normal(0.0, 0.4 / np.sqrt(BLOBS_DIM), size=(BLOBS_DIM, BLOBS_HIDDEN))
    b1 = rng.normal(0.0, 0.5, size=BLOBS_HIDDEN)
    x, labels = make_blobs(train_samples, seed, split="train")
    h = _gelu(x @ w1 + b1)
    w2, b2 = _ridge_readout(h, labels, BLOBS_CLASSES, lam=1e-4, temperature=temperature)
    return _dense_net(w1, b1, w2, b2, (BLOBS_DIM,), granularity, "blobs")


def _dense_pair(w, b, name):
    # weight and bias share a format so the bias row can ride in the GEMM
    both = np.concatenate([w.ravel(), b])
    fmt = WeightTensor.from_real(both).fmt
    return {f"{name}.w": WeightTensor.from_real(w, fmt), f"{name}.b": WeightTensor.from_real(b, fmt)}


def _dense_net(w1, b1, w2, b2, input_shape, g, name):
    weights = {**_dense_pair(w1, b1, "fc1"), **_dense_pair(w2, b2, "fc2")}
    layers = (
        LayerSpec(LayerKind.DENSE, in_features=w1.shape[0], out_features=w1.shape[1], weight="fc1.w", bias="fc1.b"),
        LayerSpec(LayerKind.GELU),
        LayerSpec(LayerKind.DENSE, in_features=w2.shape[0], out_features=w2.shape[1], weight="fc2.w", bias="fc2.b"),
        LayerSpec(LayerKind.SOFTMAX),
    )
    net = NetworkSpec(layers, input_shape, granularity=g, weights=weights, name=name)
    net.validate()
    return net


# ------------------------------------------------------------ digits task

DIGITS_FILTERS = 4


def load_digits_split(seed: int) -> tuple[tuple[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]:
    """scikit-learn's bundled 8x8 digits, pixels scaled to [0, 4], seeded 2:1 split."""
    from sklearn.datasets import load_digits

    data = load_digits()
    x = data.images[:, None, :, :] / 4.0
    perm = make_rng(seed, "digits-split").permutation(len(x))
    cut = (2 * len(x)) // 3
    tr, ev = perm[:cut], perm[cut:]
    return (x[tr], data.target[tr]), (x[ev], data.target[ev])


def digits_network(seed: int, granularity: float = 0.25, temperature: float = 6.0) -> NetworkSpec:
    """CONV2D(3x3, pad 1) -> GELU -> FLATTEN -> DENSE -> SOFTMAX."""
    from .im2col import im2col

    (x, labels), _ = load_digits_split(seed)
    rng = make_rng(seed, "digits-net")
    wc = rng.normal(0.0, 1.0 / 3.0, size=(DIGITS_FILTERS, 1, 3, 3))
    bc = rng.normal(0.0, 0.25, size=DIGITS_FILTERS)
    n = len(x)
    cols = im2col(x, 3, 1, 1)
    h = (wc.reshape(DIGITS_FILTERS, -1) @ cols + bc[:, None]).reshape(DIGITS_FILTERS, n, 8, 8)
    h = _gelu(h.transpose(1, 0, 2, 3).reshape(n, -1))
    w2, b2 = _ridge_readout(h, labels, 10, lam=10.0, temperature=temperature)
    fmt_c = WeightTensor.from_real(np.concatenate([wc.ravel(), bc])).fmt
    fmt_2 = WeightTensor.from_real(np.concatenate([w2.ravel(), b2])).fmt
    weights = {
        "conv.w": WeightTensor.from_real(wc, fmt_c),
        "conv.b": WeightTensor.from_real(bc, fmt_c),
        "fc.w": WeightTensor.from_real(w2, fmt_2),
        "fc.b": WeightTensor.from_real(b2, fmt_2),
    }
    layers = (
        LayerSpec(LayerKind.CONV2D, in_channels=1, out_channels=DIGITS_FILTERS, kernel=3, padding=1,
                  weight="conv.w", bias="conv.b"),
        LayerSpec(LayerKind.GELU),
        LayerSpec(LayerKind.FLATTEN),
        LayerSpec(LayerKind.DENSE, out_features=10, weight="fc.w", bias="fc.b"),
        LayerSpec(LayerKind.SOFTMAX),
    )
    net = NetworkSpec(layers, (1, 8, 8), granularity=granularity, weights=weights, name="digits")
    net.validate()
    return net


TASKS = ("blobs", "digits")


def load_task(name: str, seed: int, samples: int = BLOBS_EVAL):
    """``(network, (eval_x, eval_labels))`` for a named task."""
    if name == "blobs":
        return blobs_network(seed), make_blobs(samples, seed)
    if name == "digits":
        _, ev = load_digits_split(seed)
        return digits_network(seed), ev
    raise ValueError(f"unknown task {name!r}; choose from {', '.join(TASKS)}")
