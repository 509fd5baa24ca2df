"""From-scratch convolutional noise filter (step 1).

Stack: [conv 3x3 valid -> ReLU -> maxpool 2x2] per conv layer, dense hidden
with ReLU and dropout, then a sigmoid unit (noise vs non-noise) or a softmax
head (the 3-class comparison baseline).  Trained with Adam on cross-entropy;
gradients are exact backpropagation and are checked against central finite
differences in the test suite.
"""

from __future__ import annotations

import dataclasses
import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ModelFormatError, TrainingError

MODEL_MAGIC = b"ICNN"
MODEL_VERSION = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class NetworkConfig:
    input_dims: tuple[int, int, int] = (32, 48, 1)  # (height, width, channels)
    conv_filters: tuple[int, ...] = (8, 8, 32)
    kernel: int = 3
    dense_units: int = 64
    n_classes: int = 2  # 2 -> single sigmoid unit, >2 -> softmax head
    dropout_rate: float = 0.33
    learning_rate: float = 1e-4
    validation_split: float = 0.1
    early_stop_patience: int = 2
    max_epochs: int = 8
    batch_size: int = 64
    seed: int = 0
    dtype: str = "float32"
    class_weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        self.shape_chain()  # raises if spatial dims collapse

    def shape_chain(self) -> list[tuple[int, int, int]]:
        h, w, c = self.input_dims
        chain = [(h, w, c)]
        for f in self.conv_filters:
            h, w = h - self.kernel + 1, w - self.kernel + 1
            if h < 1 or w < 1:
                raise ValueError(f"conv collapses spatial dims: {self.input_dims}")
            chain.append((h, w, f))
            h, w = h // 2, w // 2
            if h < 1 or w < 1:
                raise ValueError(f"pool collapses spatial dims: {self.input_dims}")
            chain.append((h, w, f))
            c = f
        return chain

    @property
    def flat_dim(self) -> int:
        h, w, c = self.shape_chain()[-1]
        return h * w * c

    @property
    def out_dim(self) -> int:
        return 1 if self.n_classes == 2 else self.n_classes


DESK_PROFILE = NetworkConfig()
PAPER_PROFILE = NetworkConfig(
    input_dims=(270, 400, 3),
    conv_filters=(64, 64, 256),
    dense_units=704,
    early_stop_patience=5,
    max_epochs=100,
    batch_size=32,
)


@dataclass
class ModelWeights:
    config: NetworkConfig
    arrays: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    adam_t: int = 0
    history: list[dict] = field(default_factory=list)

    def copy_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.arrays.items()}


def _he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype) -> np.ndarray:
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def init_weights(config: NetworkConfig, rng: np.random.Generator | None = None) -> ModelWeights:
    rng = rng if rng is not None else np.random.Generator(np.random.PCG64(config.seed))
    dtype = np.dtype(config.dtype)
    k = config.kernel
    arrays: dict[str, np.ndarray] = {}
    c_in = config.input_dims[2]
    for i, f in enumerate(config.conv_filters):
        fan_in = k * k * c_in
        arrays[f"conv{i}_w"] = _he_uniform(rng, (k, k, c_in, f), fan_in, dtype)
        arrays[f"conv{i}_b"] = np.zeros(f, dtype=dtype)
        c_in = f
    arrays["dense_w"] = _he_uniform(rng, (config.flat_dim, config.dense_units), config.flat_dim, dtype)
    arrays["dense_b"] = np.zeros(config.dense_units, dtype=dtype)
    arrays["out_w"] = _he_uniform(rng, (config.dense_units, config.out_dim), config.dense_units, dtype)
    arrays["out_b"] = np.zeros(config.out_dim, dtype=dtype)
    return ModelWeights(config=config, arrays=arrays)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    # (N, H, W, C) -> (N, OH, OW, k*k*C); window layout matches conv weight
    # reshape (k, k, C, F) -> (k*k*C, F).
    v = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(1, 2))
    v = v.transpose(0, 1, 2, 4, 5, 3)
    return np.ascontiguousarray(v).reshape(x.shape[0], v.shape[1], v.shape[2], -1)


def _conv_forward(x, w, b):
    k = w.shape[0]
    xcol = _im2col(x, k)
    wf = w.reshape(-1, w.shape[3])
    y = xcol @ wf + b
    return y, xcol


def _conv_backward(dy, xcol, w, x_shape):
    k = w.shape[0]
    wf = w.reshape(-1, w.shape[3])
    n, oh, ow, f = dy.shape
    dy2 = dy.reshape(-1, f)
    dw = (xcol.reshape(-1, wf.shape[0]).T @ dy2).reshape(w.shape)
    db = dy2.sum(axis=0)
    dxcol = (dy2 @ wf.T).reshape(n, oh, ow, k, k, x_shape[3])
    dx = np.zeros(x_shape, dtype=dy.dtype)
    for ki in range(k):
        for kj in range(k):
            dx[:, ki : ki + oh, kj : kj + ow, :] += dxcol[:, :, :, ki, kj, :]
    return dx, dw, db


def _maxpool_forward(x):
    n, h, w, c = x.shape
    oh, ow = h // 2, w // 2
    xc = x[:, : oh * 2, : ow * 2, :].reshape(n, oh, 2, ow, 2, c)
    windows = xc.transpose(0, 1, 3, 2, 4, 5).reshape(n, oh, ow, 4, c)
    arg = windows.argmax(axis=3)
    out = np.take_along_axis(windows, arg[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    return out, arg


def _maxpool_backward(dy, arg, x_shape):
    n, h, w, c = x_shape
    oh, ow = h // 2, w // 2
    dwin = np.zeros((n, oh, ow, 4, c), dtype=dy.dtype)
    np.put_along_axis(dwin, arg[:, :, :, None, :], dy[:, :, :, None, :], axis=3)
    dxc = dwin.reshape(n, oh, ow, 2, 2, c).transpose(0, 1, 3, 2, 4, 5)
    dx = np.zeros(x_shape, dtype=dy.dtype)
    dx[:, : oh * 2, : ow * 2, :] = dxc.reshape(n, oh * 2, ow * 2, c)
    return dx


def _forward(arrays, config: NetworkConfig, x, train_mode: bool, rng) -> tuple[np.ndarray, list]:
    """Returns pre-activation output (N, out_dim) and the cache for backward."""
    cache = []
    a = x
    for i in range(len(config.conv_filters)):
        z, xcol = _conv_forward(a, arrays[f"conv{i}_w"], arrays[f"conv{i}_b"])
        relu = np.maximum(z, 0)
        pooled, arg = _maxpool_forward(relu)
        cache.append(("conv", a.shape, xcol, z, relu.shape, arg))
        a = pooled
    flat = a.reshape(a.shape[0], -1)
    zd = flat @ arrays["dense_w"] + arrays["dense_b"]
    hd = np.maximum(zd, 0)
    drop_mask = None
    if train_mode and config.dropout_rate > 0:
        if rng is None:
            raise ValueError("train_mode forward needs an rng for dropout")
        keep = 1.0 - config.dropout_rate
        drop_mask = (rng.random(hd.shape) < keep).astype(hd.dtype) / keep
        hd = hd * drop_mask
    cache.append(("dense", a.shape, flat, zd, drop_mask, hd))
    z_out = hd @ arrays["out_w"] + arrays["out_b"]
    return z_out, cache


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(
    weights: ModelWeights,
    images: np.ndarray,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Class probabilities: shape (N,) for the binary head (probability of
    non-noise), (N, n_classes) for the softmax head."""
    config = weights.config
    x = _check_images(images, config)
    z, _ = _forward(weights.arrays, config, x, train_mode, rng)
    if not np.isfinite(z).all():
        raise FloatingPointError("non-finite activations in forward pass")
    if config.out_dim == 1:
        return _sigmoid(z[:, 0])
    return _softmax(z)


def _check_images(images: np.ndarray, config: NetworkConfig) -> np.ndarray:
    x = np.asarray(images, dtype=config.dtype)
    if x.ndim == 3:  # single-channel convenience
        x = x[..., None]
    if x.shape[1:] != config.input_dims:
        raise ValueError(f"image dims {x.shape[1:]} != config {config.input_dims}")
    return x


def loss_and_gradients(
    weights: ModelWeights,
    images: np.ndarray,
    labels: np.ndarray,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy over the batch and its gradient for every array.

    Probabilities are clamped to [1e-7, 1 - 1e-7] before the log so the loss
    is always finite.
    """
    config = weights.config
    arrays = weights.arrays
    x = _check_images(images, config)
    y = np.asarray(labels)
    if len(y) == 0:
        raise ValueError("empty batch")
    n = len(y)

    z, cache = _forward(arrays, config, x, train_mode, rng)
    if config.out_dim == 1:
        p = _sigmoid(z[:, 0])
        pc = np.clip(p, PROB_CLAMP, 1 - PROB_CLAMP)
        yf = y.astype(z.dtype)
        loss = float(-np.mean(yf * np.log(pc) + (1 - yf) * np.log(1 - pc)))
        dz = ((pc - yf) / n).astype(z.dtype)[:, None]
    else:
        p = _softmax(z)
        pc = np.clip(p[np.arange(n), y], PROB_CLAMP, 1 - PROB_CLAMP)
        cw = np.ones(config.n_classes, dtype=z.dtype)
        if config.class_weights is not None:
            cw = np.asarray(config.class_weights, dtype=z.dtype)
        wy = cw[y]
        loss = float(np.mean(wy * -np.log(pc)))
        onehot = np.zeros_like(p)
        onehot[np.arange(n), y] = 1.0
        dz = (wy[:, None] * (p - onehot) / n).astype(z.dtype)

    grads: dict[str, np.ndarray] = {}
    kind, a_shape, flat, zd, drop_mask, hd = cache[-1]
    grads["out_w"] = hd.T @ dz
    grads["out_b"] = dz.sum(axis=0)
    dh = dz @ arrays["out_w"].T
    if drop_mask is not None:
        dh = dh * drop_mask
    dzd = dh * (zd > 0)
    grads["dense_w"] = flat.T @ dzd
    grads["dense_b"] = dzd.sum(axis=0)
    da = (dzd @ arrays["dense_w"].T).reshape(a_shape)

    for i in reversed(range(len(config.conv_filters))):
        _, x_shape, xcol, zconv, relu_shape, arg = cache[i]
        drelu = _maxpool_backward(da, arg, relu_shape)
        dzconv = drelu * (zconv > 0)
        da, dw, db = _conv_backward(dzconv, xcol, arrays[f"conv{i}_w"], x_shape)
        grads[f"conv{i}_w"] = dw
        grads[f"conv{i}_b"] = db
    return loss, grads


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _adam_step(weights: ModelWeights, grads: dict[str, np.ndarray]) -> None:
    cfg = weights.config
    if not weights.adam_m:
        weights.adam_m = {k: np.zeros_like(v) for k, v in weights.arrays.items()}
        weights.adam_v = {k: np.zeros_like(v) for k, v in weights.arrays.items()}
    weights.adam_t += 1
    t = weights.adam_t
    lr_t = cfg.learning_rate * math.sqrt(1 - ADAM_BETA2**t) / (1 - ADAM_BETA1**t)
    for name, g in grads.items():
        m = weights.adam_m[name]
        v = weights.adam_v[name]
        m *= ADAM_BETA1
        m += (1 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1 - ADAM_BETA2) * g * g
        weights.arrays[name] -= (lr_t * m / (np.sqrt(v) + ADAM_EPS)).astype(
            weights.arrays[name].dtype
        )


def _stratified_split(labels: np.ndarray, split: float, rng: np.random.Generator):
    train_idx, val_idx = [], []
    for cls in np.unique(labels):
        idx = np.nonzero(labels == cls)[0]
        idx = idx[rng.permutation(len(idx))]
        n_val = int(round(len(idx) * split))
        n_val = min(n_val, len(idx) - 1)  # keep every class represented in training
        val_idx.extend(idx[:n_val].tolist())
        train_idx.extend(idx[n_val:].tolist())
    return np.array(sorted(train_idx)), np.array(sorted(val_idx))


def mean_loss(weights: ModelWeights, images: np.ndarray, labels: np.ndarray) -> float:
    """Evaluation-mode loss, batched to bound memory."""
    total, count = 0.0, 0
    bs = max(1, weights.config.batch_size)
    for s in range(0, len(labels), bs):
        loss, _ = loss_and_gradients(weights, images[s : s + bs], labels[s : s + bs])
        total += loss * len(labels[s : s + bs])
        count += len(labels[s : s + bs])
    return total / count


def train(config: NetworkConfig, images: np.ndarray, labels: np.ndarray) -> ModelWeights:
    """Adam + early stopping on a held-out validation split; the best-epoch
    weights are restored before returning."""
    x = np.asarray(images, dtype=config.dtype)
    if x.ndim == 3:
        x = x[..., None]
    if x.shape[1:3] != config.input_dims[:2]:
        x = np.stack(
            [
                np.stack(
                    [resize_bilinear(img[..., c], *config.input_dims[:2]) for c in range(x.shape[3])],
                    axis=-1,
                )
                for img in x
            ]
        ).astype(config.dtype)
    y = np.asarray(labels, dtype=int)

    classes, counts = np.unique(y, return_counts=True)
    if len(classes) < 2:
        raise TrainingError("training set contains a single class")
    if (counts < 2).any():
        raise TrainingError("need at least 2 examples per class")

    rng = np.random.Generator(np.random.PCG64(config.seed))
    weights = init_weights(config, rng)
    train_idx, val_idx = _stratified_split(y, config.validation_split, rng)
    if len(val_idx) == 0:
        val_idx = train_idx  # degenerate tiny sets: validate on training data

    best_val = math.inf
    best_arrays = weights.copy_arrays()
    best_epoch = 0
    wait = 0
    for epoch in range(1, config.max_epochs + 1):
        order = train_idx[rng.permutation(len(train_idx))]
        epoch_loss, seen = 0.0, 0
        for s in range(0, len(order), config.batch_size):
            batch = order[s : s + config.batch_size]
            loss, grads = loss_and_gradients(
                weights, x[batch], y[batch], train_mode=True, rng=rng
            )
            if not math.isfinite(loss):
                raise TrainingError(f"training diverged (non-finite loss) at epoch {epoch}")
            _adam_step(weights, grads)
            epoch_loss += loss * len(batch)
            seen += len(batch)
        val_loss = mean_loss(weights, x[val_idx], y[val_idx])
        if not math.isfinite(val_loss):
            raise TrainingError(f"training diverged (non-finite val loss) at epoch {epoch}")
        weights.history.append(
            {"epoch": epoch, "train_loss": epoch_loss / max(seen, 1), "val_loss": val_loss}
        )
        if val_loss < best_val - 1e-12:
            best_val = val_loss
            best_arrays = weights.copy_arrays()
            best_epoch = epoch
            wait = 0
        else:
            wait += 1
            if wait > config.early_stop_patience:
                break
    weights.arrays = best_arrays
    weights.history.append({"best_epoch": best_epoch, "best_val_loss": best_val})
    return weights


def predict(weights: ModelWeights, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    parts = [
        forward(weights, images[s : s + batch_size])
        for s in range(0, len(images), batch_size)
    ]
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# Input rendering
# ---------------------------------------------------------------------------


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample with half-pixel center alignment."""
    img = np.asarray(img, dtype=np.float64)
    in_h, in_w = img.shape
    ys = np.clip((np.arange(out_h) + 0.5) * in_h / out_h - 0.5, 0, in_h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * in_w / out_w - 0.5, 0, in_w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = img[np.ix_(y0, x0)] * (1 - wx) + img[np.ix_(y0, x1)] * wx
    bot = img[np.ix_(y1, x0)] * (1 - wx) + img[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def render_montage(slices: np.ndarray) -> np.ndarray:
    """Fixed-grid grayscale montage of an IC's slices, rescaled to [0, 1]."""
    n, h, w = slices.shape
    cols = math.ceil(math.sqrt(n))
    rows = math.ceil(n / cols)
    m = np.zeros((rows * h, cols * w), dtype=np.float64)
    for i in range(n):
        r, c = divmod(i, cols)
        m[r * h : (r + 1) * h, c * w : (c + 1) * w] = slices[i]
    peak = m.max()
    if peak > 0:
        m /= peak
    return m


def montage_input(ic, config: NetworkConfig) -> np.ndarray:
    """Montage rendered and resized to the network's input plane; grayscale
    replicated across channels when the profile wants more than one."""
    plane = resize_bilinear(render_montage(ic.slices), *config.input_dims[:2])
    channels = config.input_dims[2]
    if channels == 1:
        return plane
    return np.repeat(plane[:, :, None], channels, axis=2)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_model(weights: ModelWeights, path: str | Path) -> Path:
    cfg = dataclasses.asdict(weights.config)
    cfg["input_dims"] = list(cfg["input_dims"])
    cfg["conv_filters"] = list(cfg["conv_filters"])
    if cfg["class_weights"] is not None:
        cfg["class_weights"] = list(cfg["class_weights"])
    names = sorted(weights.arrays)
    header = {
        "config": cfg,
        "history": weights.history,
        "adam_t": weights.adam_t,
        "arrays": [
            {"name": k, "dtype": str(weights.arrays[k].dtype), "shape": list(weights.arrays[k].shape)}
            for k in names
        ],
        "has_adam": bool(weights.adam_m),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(MODEL_MAGIC)
    buf.write(struct.pack("<HI", MODEL_VERSION, len(blob)))
    buf.write(blob)
    for k in names:
        buf.write(weights.arrays[k].astype(weights.arrays[k].dtype.newbyteorder("<")).tobytes())
    if weights.adam_m:
        for k in names:
            buf.write(weights.adam_m[k].astype(weights.adam_m[k].dtype.newbyteorder("<")).tobytes())
            buf.write(weights.adam_v[k].astype(weights.adam_v[k].dtype.newbyteorder("<")).tobytes())
    path = Path(path)
    path.write_bytes(buf.getvalue())
    return path


def load_model(path: str | Path) -> ModelWeights:
    data = Path(path).read_bytes()
    if len(data) < 10 or data[:4] != MODEL_MAGIC:
        raise ModelFormatError(f"{path}: not a model file")
    version, header_len = struct.unpack_from("<HI", data, 4)
    if version != MODEL_VERSION:
        raise ModelFormatError(f"{path}: unsupported model version {version}")
    off = 10
    header = json.loads(data[off : off + header_len].decode())
    off += header_len
    cfg = header["config"]
    config = NetworkConfig(
        input_dims=tuple(cfg["input_dims"]),
        conv_filters=tuple(cfg["conv_filters"]),
        kernel=cfg["kernel"],
        dense_units=cfg["dense_units"],
        n_classes=cfg["n_classes"],
        dropout_rate=cfg["dropout_rate"],
        learning_rate=cfg["learning_rate"],
        validation_split=cfg["validation_split"],
        early_stop_patience=cfg["early_stop_patience"],
        max_epochs=cfg["max_epochs"],
        batch_size=cfg["batch_size"],
        seed=cfg["seed"],
        dtype=cfg["dtype"],
        class_weights=tuple(cfg["class_weights"]) if cfg["class_weights"] else None,
    )
    arrays = {}
    for spec in header["arrays"]:
        dt = np.dtype(spec["dtype"]).newbyteorder("<")
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        arr = np.frombuffer(data, dtype=dt, count=count, offset=off)
        off += arr.nbytes
        arrays[spec["name"]] = arr.reshape(spec["shape"]).astype(spec["dtype"])
    weights = ModelWeights(
        config=config, arrays=arrays, adam_t=header["adam_t"], history=header["history"]
    )
    if header.get("has_adam"):
        for spec in header["arrays"]:
            dt = np.dtype(spec["dtype"]).newbyteorder("<")
            count = int(np.prod(spec["shape"])) if spec["shape"] else 1
            m = np.frombuffer(data, dtype=dt, count=count, offset=off)
            off += m.nbytes
            v = np.frombuffer(data, dtype=dt, count=count, offset=off)
            off += v.nbytes
            weights.adam_m[spec["name"]] = m.reshape(spec["shape"]).astype(spec["dtype"])
            weights.adam_v[spec["name"]] = v.reshape(spec["shape"]).astype(spec["dtype"])
    if off != len(data):
        raise ModelFormatError(f"{path}: trailing or missing bytes")
    return weights
