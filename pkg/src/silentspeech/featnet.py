"""Supervised bottleneck feature extractor.

A windowed-frame phone classifier trained by minibatch SGD: two valid
(unpadded) convolution + ReLU + 2x2 max-pool stages, one-dimensional batch
normalization over the flattened map, four fully-connected ReLU layers
whose third (narrow) layer is exported as the per-frame feature, and a
softmax output layer. Forward, backward, and the optimizer are plain
numpy in double precision so gradients can be finite-difference checked.
"""

from __future__ import annotations

import copy
import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .corpus import window_stack
from .errors import DataError, NumericalError

_CKPT_MAGIC = b"FNET"


@dataclass(frozen=True)
class FeatNetConfig:
    input_shape: tuple[int, int, int] = (7, 64, 128)  # channels, H, W
    conv_kernel: int = 10
    conv_filters: tuple[int, int] = (64, 128)
    pool: int = 2
    fc_dims: tuple[int, int, int, int] = (1024, 512, 128, 512)
    n_classes: int = 49
    lr: float = 0.001
    epochs: int = 30
    batch_size: int = 256
    l2_weight: float = 0.1
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        c, h, w = self.input_shape
        if min(c, h, w) < 1:
            raise DataError(f"bad input shape {self.input_shape}")
        if len(self.fc_dims) != 4:
            raise DataError("fc_dims must list the four hidden layer widths")
        if self.n_classes < 2:
            raise DataError("need at least 2 classes")
        for name, (oh, ow) in self.stage_shapes().items():
            if oh < 1 or ow < 1:
                raise DataError(
                    f"{name} output collapses to {oh}x{ow}; "
                    f"input {h}x{w} too small for kernel {self.conv_kernel}")

    @property
    def bottleneck_dim(self) -> int:
        return self.fc_dims[2]

    def stage_shapes(self) -> dict[str, tuple[int, int]]:
        _, h, w = self.input_shape
        k, p = self.conv_kernel, self.pool
        c1 = (h - k + 1, w - k + 1)
        p1 = (c1[0] // p, c1[1] // p)
        c2 = (p1[0] - k + 1, p1[1] - k + 1)
        p2 = (c2[0] // p, c2[1] // p)
        return {"conv1": c1, "pool1": p1, "conv2": c2, "pool2": p2}

    @property
    def flat_dim(self) -> int:
        p2 = self.stage_shapes()["pool2"]
        return self.conv_filters[1] * p2[0] * p2[1]


@dataclass
class FeatNetParams:
    """All learnable tensors plus batch-norm running moments."""

    config: FeatNetConfig
    tensors: dict[str, np.ndarray] = field(repr=False, default_factory=dict)

    #: serialization and gradient-check ordering
    TENSOR_NAMES = (
        "conv1_w", "conv1_b", "conv2_w", "conv2_b",
        "bn_gamma", "bn_beta", "bn_mean", "bn_var",
        "fc1_w", "fc1_b", "fc2_w", "fc2_b", "fc3_w", "fc3_b",
        "fc4_w", "fc4_b", "out_w", "out_b",
    )
    #: tensors entering the L2 penalty and SGD weight updates
    WEIGHT_NAMES = ("conv1_w", "conv2_w", "fc1_w", "fc2_w", "fc3_w", "fc4_w", "out_w")
    #: everything updated by gradient descent (running moments excluded)
    LEARNABLE_NAMES = tuple(n for n in TENSOR_NAMES if n not in ("bn_mean", "bn_var"))

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def copy(self) -> "FeatNetParams":
        return FeatNetParams(self.config, {k: v.copy() for k, v in self.tensors.items()})


def init_params(config: FeatNetConfig, seed: int | None = None) -> FeatNetParams:
    """Fan-in-scaled zero-mean init, zero biases, unit batch-norm."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    c, _, _ = config.input_shape
    k = config.conv_kernel
    f1, f2 = config.conv_filters
    d = config.flat_dim
    dims = [d, *config.fc_dims, config.n_classes]

    def he(shape, fan_in):
        return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)

    t = {
        "conv1_w": he((f1, c, k, k), c * k * k),
        "conv1_b": np.zeros(f1),
        "conv2_w": he((f2, f1, k, k), f1 * k * k),
        "conv2_b": np.zeros(f2),
        "bn_gamma": np.ones(d),
        "bn_beta": np.zeros(d),
        "bn_mean": np.zeros(d),
        "bn_var": np.ones(d),
    }
    fc_names = ("fc1", "fc2", "fc3", "fc4", "out")
    for name, din, dout in zip(fc_names, dims[:-1], dims[1:]):
        t[f"{name}_w"] = he((din, dout), din)
        t[f"{name}_b"] = np.zeros(dout)
    return FeatNetParams(config, t)


# ---------------------------------------------------------------------------
# Layers


def _patches(x: np.ndarray, k: int) -> np.ndarray:
    """All k x k patches of x as a strided view (n, c, oh, ow, k, k)."""
    n, c, h, w = x.shape
    sn, sc, sh, sw = x.strides
    return as_strided(x, (n, c, h - k + 1, w - k + 1, k, k),
                      (sn, sc, sh, sw, sh, sw), writeable=False)


def _conv_forward(x, w, b):
    pat = _patches(x, w.shape[-1])
    out = np.einsum("nchwij,fcij->nfhw", pat, w, optimize=True)
    return out + b[None, :, None, None]


def _conv_backward(x, w, dout):
    pat = _patches(x, w.shape[-1])
    dw = np.einsum("nchwij,nfhw->fcij", pat, dout, optimize=True)
    db = dout.sum(axis=(0, 2, 3))
    k = w.shape[-1]
    padded = np.pad(dout, ((0, 0), (0, 0), (k - 1, k - 1), (k - 1, k - 1)))
    dpat = _patches(padded, k)
    w_flip = w[:, :, ::-1, ::-1]
    dx = np.einsum("nfhwij,fcij->nchw", dpat, w_flip, optimize=True)
    return dx, dw, db


def _pool_forward(x, p):
    n, f, h, w = x.shape
    oh, ow = h // p, w // p
    x = x[:, :, :oh * p, :ow * p]
    windows = x.reshape(n, f, oh, p, ow, p).transpose(0, 1, 2, 4, 3, 5).reshape(
        n, f, oh, ow, p * p)
    idx = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _pool_backward(dout, idx, in_shape, p):
    n, f, h, w = in_shape
    oh, ow = h // p, w // p
    dwin = np.zeros((n, f, oh, ow, p * p))
    np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=-1)
    dx = np.zeros(in_shape)
    dx[:, :, :oh * p, :ow * p] = dwin.reshape(n, f, oh, ow, p, p).transpose(
        0, 1, 2, 4, 3, 5).reshape(n, f, oh * p, ow * p)
    return dx


def _bn_forward(x, gamma, beta, mean, var, eps):
    xhat = (x - mean) / np.sqrt(var + eps)
    return gamma * xhat + beta, xhat


def _softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# Forward / backward


def forward(params: FeatNetParams, x: np.ndarray, train_mode: bool = False,
            update_running: bool | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Run the classifier; returns (logits, bottleneck).

    ``x`` is one sample (c, h, w) or a batch (n, c, h, w). In train mode
    batch statistics normalize the flattened map and, unless
    ``update_running`` is False, the running moments are updated in place;
    in inference mode the running moments are used.
    """
    single = x.ndim == 3
    logits, bneck, _ = _forward_full(
        params, x[None] if single else x, train_mode,
        train_mode if update_running is None else update_running)
    if single:
        return logits[0], bneck[0]
    return logits, bneck


def _forward_full(params, x, train_mode, update_running):
    cfg = params.config
    t = params.tensors
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1:] != cfg.input_shape:
        raise DataError(f"sample shape {x.shape[1:]} != config {cfg.input_shape}")
    cache: dict[str, np.ndarray] = {"x": x}

    a1 = _conv_forward(x, t["conv1_w"], t["conv1_b"])
    r1 = np.maximum(a1, 0.0)
    p1, idx1 = _pool_forward(r1, cfg.pool)
    a2 = _conv_forward(p1, t["conv2_w"], t["conv2_b"])
    r2 = np.maximum(a2, 0.0)
    p2, idx2 = _pool_forward(r2, cfg.pool)
    flat = p2.reshape(x.shape[0], -1)

    if train_mode:
        mu = flat.mean(axis=0)
        var = flat.var(axis=0)
        if update_running:
            m = cfg.bn_momentum
            t["bn_mean"] *= 1.0 - m
            t["bn_mean"] += m * mu
            t["bn_var"] *= 1.0 - m
            t["bn_var"] += m * var
    else:
        mu, var = t["bn_mean"], t["bn_var"]
    bn, xhat = _bn_forward(flat, t["bn_gamma"], t["bn_beta"], mu, var, cfg.bn_eps)

    cache.update(a1=a1, r1=r1, idx1=idx1, p1=p1, a2=a2, r2=r2, idx2=idx2,
                 p2=p2, flat=flat, xhat=xhat, bn_var=var, bn=bn)
    h = bn
    acts = []
    for i, name in enumerate(("fc1", "fc2", "fc3", "fc4")):
        h = np.maximum(h @ t[f"{name}_w"] + t[f"{name}_b"], 0.0)
        acts.append(h)
    cache["acts"] = acts
    logits = acts[-1] @ t["out_w"] + t["out_b"]
    return logits, acts[2], cache


def loss_and_grads(params: FeatNetParams, x: np.ndarray, y: np.ndarray,
                   update_running: bool = False) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy plus the L2 weight penalty, with gradients for
    every learnable tensor (train-mode batch normalization)."""
    cfg = params.config
    t = params.tensors
    y = np.asarray(y, dtype=np.int64)
    logits, _, cache = _forward_full(params, x, train_mode=True,
                                     update_running=update_running)
    n = logits.shape[0]
    probs = _softmax(logits)
    ce = float(-np.mean(np.log(probs[np.arange(n), y] + 1e-300)))
    l2 = 0.5 * cfg.l2_weight * sum(float((t[w] ** 2).sum())
                                   for w in FeatNetParams.WEIGHT_NAMES)
    loss = ce + l2
    if not np.isfinite(loss):
        raise NumericalError("training loss diverged to a non-finite value")

    grads: dict[str, np.ndarray] = {}
    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n

    acts = cache["acts"]
    grads["out_w"] = acts[-1].T @ dlogits
    grads["out_b"] = dlogits.sum(axis=0)
    dh = dlogits @ t["out_w"].T
    fc_inputs = [cache["bn"], acts[0], acts[1], acts[2]]
    for i in (3, 2, 1, 0):
        name = f"fc{i + 1}"
        dh = dh * (acts[i] > 0)
        grads[f"{name}_w"] = fc_inputs[i].T @ dh
        grads[f"{name}_b"] = dh.sum(axis=0)
        dh = dh @ t[f"{name}_w"].T

    xhat = cache["xhat"]
    grads["bn_gamma"] = (dh * xhat).sum(axis=0)
    grads["bn_beta"] = dh.sum(axis=0)
    inv_std = 1.0 / np.sqrt(cache["bn_var"] + cfg.bn_eps)
    dxhat = dh * t["bn_gamma"]
    dflat = inv_std * (dxhat - dxhat.mean(axis=0)
                       - xhat * (dxhat * xhat).mean(axis=0))

    dp2 = dflat.reshape(cache["p2"].shape)
    dr2 = _pool_backward(dp2, cache["idx2"], cache["r2"].shape, cfg.pool)
    da2 = dr2 * (cache["a2"] > 0)
    dp1, dw2, db2 = _conv_backward(cache["p1"], t["conv2_w"], da2)
    grads["conv2_w"], grads["conv2_b"] = dw2, db2
    dr1 = _pool_backward(dp1, cache["idx1"], cache["r1"].shape, cfg.pool)
    da1 = dr1 * (cache["a1"] > 0)
    _, dw1, db1 = _conv_backward(cache["x"], t["conv1_w"], da1)
    grads["conv1_w"], grads["conv1_b"] = dw1, db1

    for w in FeatNetParams.WEIGHT_NAMES:
        grads[w] = grads[w] + cfg.l2_weight * t[w]
    return loss, grads


# ---------------------------------------------------------------------------
# Training


def accuracy(params: FeatNetParams, x: np.ndarray, y: np.ndarray,
             chunk: int = 512) -> float:
    hits = 0
    for i in range(0, x.shape[0], chunk):
        logits, _ = forward(params, x[i:i + chunk], train_mode=False)
        hits += int((logits.argmax(axis=1) == y[i:i + chunk]).sum())
    return hits / x.shape[0]


def train_sgd(params: FeatNetParams, train_x: np.ndarray, train_y: np.ndarray,
              val_x: np.ndarray, val_y: np.ndarray,
              epochs: int | None = None) -> tuple[FeatNetParams, list[dict]]:
    """Minibatch SGD; returns the params of the epoch with the highest
    validation accuracy (earliest epoch on ties) and per-epoch metrics."""
    if train_x.shape[0] == 0 or val_x.shape[0] == 0:
        raise DataError("train and validation sets must be nonempty")
    cfg = params.config
    epochs = cfg.epochs if epochs is None else epochs
    rng = np.random.default_rng(cfg.seed)
    params = params.copy()
    best = params.copy()
    best_acc = -1.0
    best_epoch = 0
    metrics: list[dict] = []

    # lr == 0 is a strict no-op: even running moments stay frozen
    frozen = cfg.lr == 0.0
    for epoch in range(epochs):
        order = rng.permutation(train_x.shape[0])
        losses = []
        for lo in range(0, order.size, cfg.batch_size):
            sel = order[lo:lo + cfg.batch_size]
            loss, grads = loss_and_grads(params, train_x[sel], train_y[sel],
                                         update_running=not frozen)
            losses.append(loss)
            if not frozen:
                for name in FeatNetParams.LEARNABLE_NAMES:
                    params.tensors[name] -= cfg.lr * grads[name]
        val_acc = accuracy(params, val_x, val_y)
        metrics.append({"epoch": epoch, "train_loss": float(np.mean(losses)),
                        "val_acc": val_acc, "selected": False})
        if val_acc > best_acc:
            best_acc = val_acc
            best = params.copy()
            best_epoch = epoch
    metrics[best_epoch]["selected"] = True
    return best, metrics


def extract_bottleneck(params: FeatNetParams, frames: np.ndarray,
                       chunk: int = 256) -> np.ndarray:
    """One feature vector per frame: windowed samples through the trained
    network in inference mode."""
    x = window_stack(np.asarray(frames, dtype=np.float64))
    out = np.empty((x.shape[0], params.config.bottleneck_dim))
    for i in range(0, x.shape[0], chunk):
        _, bneck = forward(params, x[i:i + chunk], train_mode=False)
        out[i:i + chunk] = bneck
    return out


def gradient_check(params: FeatNetParams, x: np.ndarray, y: np.ndarray,
                   epsilon: float = 1e-3, n_coords: int = 200,
                   seed: int = 0) -> float:
    """Max relative error between analytic gradients and central finite
    differences over a random coordinate subset."""
    params = params.copy()
    _, grads = loss_and_grads(params, x, y, update_running=False)
    rng = np.random.default_rng(seed)
    sizes = [(n, params.tensors[n].size) for n in FeatNetParams.LEARNABLE_NAMES]
    total = sum(s for _, s in sizes)
    worst = 0.0
    for flat_idx in rng.choice(total, size=min(n_coords, total), replace=False):
        offset = int(flat_idx)
        for name, size in sizes:
            if offset < size:
                break
            offset -= size
        tensor = params.tensors[name]
        orig = tensor.flat[offset]
        tensor.flat[offset] = orig + epsilon
        lp, _ = loss_and_grads(params, x, y, update_running=False)
        tensor.flat[offset] = orig - epsilon
        lm, _ = loss_and_grads(params, x, y, update_running=False)
        tensor.flat[offset] = orig
        fd = (lp - lm) / (2 * epsilon)
        analytic = grads[name].flat[offset]
        err = abs(analytic - fd) / max(1e-6, abs(analytic) + abs(fd))
        worst = max(worst, float(err))
    return worst


# ---------------------------------------------------------------------------
# Checkpoint I/O


def save_params(params: FeatNetParams, path: str | Path) -> None:
    """Binary checkpoint: magic, length-prefixed config JSON, then raw f32
    tensors in declaration order."""
    cfg_json = json.dumps(asdict(params.config)).encode()
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", len(cfg_json)))
        fh.write(cfg_json)
        for name in FeatNetParams.TENSOR_NAMES:
            fh.write(params.tensors[name].astype("<f4").tobytes())


def load_params(path: str | Path) -> FeatNetParams:
    raw = Path(path).read_bytes()
    if raw[:4] != _CKPT_MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack("<I", raw[4:8])
    cfg_dict = json.loads(raw[8:8 + n].decode())
    for key in ("input_shape", "conv_filters", "fc_dims"):
        cfg_dict[key] = tuple(cfg_dict[key])
    config = FeatNetConfig(**cfg_dict)
    ref = init_params(config, seed=0)
    tensors = {}
    offset = 8 + n
    for name in FeatNetParams.TENSOR_NAMES:
        shape = ref.tensors[name].shape
        count = ref.tensors[name].size
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        tensors[name] = arr.astype(np.float64).reshape(shape)
        offset += 4 * count
    if offset != len(raw):
        raise DataError(f"{path}: trailing or missing tensor data")
    return FeatNetParams(config, tensors)
