"""Scalar utterance scorers with hand-derived backpropagation.

Two architectures share the forward/backward contract:

* ``pooled_fc``: pooled feature vector -> FC(input, 256) -> ReLU -> dropout
  -> FC(256, 1). Matches the two-layer head used on frozen SSL features.
* ``conv_pool``: (T, 257) magnitude spectrogram -> three 1-D-over-time conv
  blocks (channels 16/32/64, kernel 3, stride 2, ReLU) -> mean over time
  -> FC(64, 32) -> ReLU -> dropout -> FC(32, 1).

Everything is float64, and the internals are batched so that evaluation over
thousands of utterances stays vectorized; the single-item API wraps batch
size 1.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

DROPOUT_RATE = 0.3

CHECKPOINT_MAGIC = b"SVDM"
CHECKPOINT_VERSION = 1
_ARCH_TAGS = {"pooled_fc": 0, "conv_pool": 1}
_TAG_ARCHS = {v: k for k, v in _ARCH_TAGS.items()}

CONV_KERNEL = 3
CONV_STRIDE = 2


class CheckpointError(ValueError):
    """Raised for corrupt or mismatched checkpoint files."""


@dataclass
class ScorerParameters:
    """Named weight/bias tensors plus the architecture tag they belong to."""

    arch: str
    tensors: dict[str, np.ndarray]

    def copy(self) -> "ScorerParameters":
        return ScorerParameters(self.arch, {k: v.copy() for k, v in self.tensors.items()})


@dataclass
class ForwardCache:
    """Intermediates kept from a forward pass for the matching backward pass."""

    params: ScorerParameters
    mode: str
    arrays: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class ScorerOutput:
    score: float
    cache: ForwardCache


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int, shape: tuple) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=shape)


def init_pooled_fc(input_dim: int = 768, hidden_dim: int = 256,
                   rng_seed: int = 0) -> ScorerParameters:
    """Xavier-normal weights, zero biases, deterministic per seed."""
    if input_dim < 1 or hidden_dim < 1:
        raise ValueError("layer dimensions must be >= 1")
    rng = np.random.default_rng(rng_seed)
    tensors = {
        "fc1_w": _xavier(rng, input_dim, hidden_dim, (input_dim, hidden_dim)),
        "fc1_b": np.zeros(hidden_dim),
        "fc2_w": _xavier(rng, hidden_dim, 1, (hidden_dim,)),
        "fc2_b": np.zeros(1),
    }
    return ScorerParameters("pooled_fc", tensors)


def init_conv_pool(rng_seed: int = 0, n_bins: int = 257,
                   channels: tuple[int, int, int] = (16, 32, 64),
                   fc_hidden: int = 32) -> ScorerParameters:
    """Three stride-2 temporal conv blocks over spectrogram frames, then an
    FC head on the time-pooled activations. Conv fans include the kernel
    extent, as usual for Xavier init of convolutions."""
    rng = np.random.default_rng(rng_seed)
    tensors: dict[str, np.ndarray] = {}
    c_in = n_bins
    for i, c_out in enumerate(channels, start=1):
        fan_in, fan_out = c_in * CONV_KERNEL, c_out * CONV_KERNEL
        tensors[f"conv{i}_w"] = _xavier(rng, fan_in, fan_out, (CONV_KERNEL, c_in, c_out))
        tensors[f"conv{i}_b"] = np.zeros(c_out)
        c_in = c_out
    tensors["fc1_w"] = _xavier(rng, c_in, fc_hidden, (c_in, fc_hidden))
    tensors["fc1_b"] = np.zeros(fc_hidden)
    tensors["fc2_w"] = _xavier(rng, fc_hidden, 1, (fc_hidden,))
    tensors["fc2_b"] = np.zeros(1)
    return ScorerParameters("conv_pool", tensors)


def _dropout_mask(rng: np.random.Generator | None, shape: tuple, rate: float) -> np.ndarray:
    if rng is None:
        raise ValueError("train-mode forward requires a dropout RNG")
    # Inverted dropout: kept units pre-scaled by 1/keep, eval path untouched.
    keep = 1.0 - rate
    return (rng.random(shape) >= rate) / keep


def _conv_cols(x: np.ndarray) -> np.ndarray:
    """im2col for kernel 3 / stride 2 / zero padding 1 over the time axis.

    x is (B, T, C); the result is (B, T_out, 3, C) with T_out = ceil(T / 2).
    """
    b, t, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (0, 0)))
    t_out = (t + 1) // 2
    starts = np.arange(t_out) * CONV_STRIDE
    return xp[:, starts[:, None] + np.arange(CONV_KERNEL), :]


def _conv_col_grad(d_cols: np.ndarray, t: int) -> np.ndarray:
    """Scatter column gradients back to the unpadded (B, T, C) input."""
    b, t_out, _, c = d_cols.shape
    d_xp = np.zeros((b, t + 2, c))
    for k in range(CONV_KERNEL):
        d_xp[:, k:k + CONV_STRIDE * t_out:CONV_STRIDE, :] += d_cols[:, :, k, :]
    return d_xp[:, 1:t + 1, :]


def forward_batch(params: ScorerParameters, xs: np.ndarray, mode: str = "eval",
                  dropout_rng: np.random.Generator | None = None,
                  dropout: float = DROPOUT_RATE) -> tuple[np.ndarray, ForwardCache]:
    """Score a batch of same-shape inputs; returns (scores, cache).

    Inputs are (B, D) for pooled_fc or (B, T, 257) for conv_pool.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    t = params.tensors
    xs = np.asarray(xs, dtype=np.float64)
    cache = ForwardCache(params=params, mode=mode)
    a = cache.arrays

    if params.arch == "pooled_fc":
        if xs.ndim != 2 or xs.shape[1] != t["fc1_w"].shape[0]:
            raise ValueError(f"pooled_fc expects (B, {t['fc1_w'].shape[0]}) input, got {xs.shape}")
        pooled = xs
    elif params.arch == "conv_pool":
        if xs.ndim != 3 or xs.shape[2] != t["conv1_w"].shape[1] or xs.shape[1] < 1:
            raise ValueError(
                f"conv_pool expects (B, T>=1, {t['conv1_w'].shape[1]}) input, got {xs.shape}")
        a["x"] = xs
        h = xs
        for i in (1, 2, 3):
            w, b = t[f"conv{i}_w"], t[f"conv{i}_b"]
            cols = _conv_cols(h)
            z = cols.reshape(cols.shape[0], cols.shape[1], -1) @ w.reshape(-1, w.shape[2]) + b
            h = np.maximum(z, 0.0)
            a[f"cols{i}"], a[f"z{i}"] = cols, z
        a["pre_pool_t"] = np.array(h.shape[1])
        pooled = h.mean(axis=1)
    else:
        raise ValueError(f"unknown architecture {params.arch!r}")

    a["pooled"] = pooled
    h_pre = pooled @ t["fc1_w"] + t["fc1_b"]
    h = np.maximum(h_pre, 0.0)
    if mode == "train":
        mask = _dropout_mask(dropout_rng, h.shape, dropout)
    else:
        mask = np.ones_like(h)
    hd = h * mask
    scores = hd @ t["fc2_w"] + t["fc2_b"][0]
    a["h_pre"], a["mask"], a["hd"] = h_pre, mask, hd
    return scores, cache


def gradients_batch(params: ScorerParameters, adjoints: np.ndarray,
                    cache: ForwardCache) -> dict[str, np.ndarray]:
    """Backpropagate per-item score adjoints into parameter gradients.

    The gradients are summed over the batch; divide the adjoints beforehand
    for a mean-loss convention.
    """
    if cache.params is not params:
        raise ValueError("stale forward cache: parameters changed since the forward pass")
    t, a = params.tensors, cache.arrays
    d = np.asarray(adjoints, dtype=np.float64)
    grads: dict[str, np.ndarray] = {}

    grads["fc2_w"] = a["hd"].T @ d
    grads["fc2_b"] = np.array([d.sum()])
    d_hd = np.outer(d, t["fc2_w"])
    d_h_pre = d_hd * a["mask"] * (a["h_pre"] > 0.0)
    grads["fc1_w"] = a["pooled"].T @ d_h_pre
    grads["fc1_b"] = d_h_pre.sum(axis=0)
    d_pooled = d_h_pre @ t["fc1_w"].T

    if params.arch == "conv_pool":
        t_pool = int(a["pre_pool_t"])
        d_h = np.repeat(d_pooled[:, None, :], t_pool, axis=1) / t_pool
        for i in (3, 2, 1):
            w = t[f"conv{i}_w"]
            cols, z = a[f"cols{i}"], a[f"z{i}"]
            d_z = d_h * (z > 0.0)
            flat_cols = cols.reshape(-1, w.shape[0] * w.shape[1])
            grads[f"conv{i}_w"] = (flat_cols.T @ d_z.reshape(-1, w.shape[2])).reshape(w.shape)
            grads[f"conv{i}_b"] = d_z.sum(axis=(0, 1))
            if i > 1:
                d_cols = (d_z @ w.reshape(-1, w.shape[2]).T).reshape(cols.shape)
                d_h = _conv_col_grad(d_cols, a[f"z{i - 1}"].shape[1])
    return grads


def forward(params: ScorerParameters, x: np.ndarray, mode: str = "eval",
            dropout_rng: np.random.Generator | None = None,
            dropout: float = DROPOUT_RATE) -> ScorerOutput:
    """Score a single utterance input (a (D,) vector or (T, 257) spectrogram)."""
    scores, cache = forward_batch(params, np.asarray(x, dtype=np.float64)[None, ...],
                                  mode=mode, dropout_rng=dropout_rng, dropout=dropout)
    return ScorerOutput(score=float(scores[0]), cache=cache)


def gradients(params: ScorerParameters, loss_adjoint: float,
              cache: ForwardCache) -> dict[str, np.ndarray]:
    """Exact gradients of (loss_adjoint * score) for a single-item forward."""
    return gradients_batch(params, np.array([loss_adjoint]), cache)


def score_inputs(params: ScorerParameters, inputs: list[np.ndarray],
                 chunk: int = 512) -> np.ndarray:
    """Eval-mode scores for a list of inputs, batching items of equal shape.

    Batches are chunked so large evaluation sets stay within cache-friendly
    temporaries.
    """
    scores = np.empty(len(inputs))
    groups: dict[tuple, list[int]] = {}
    for idx, x in enumerate(inputs):
        groups.setdefault(np.shape(x), []).append(idx)
    for idxs in groups.values():
        for start in range(0, len(idxs), chunk):
            part = idxs[start:start + chunk]
            batch = np.stack([np.asarray(inputs[i], dtype=np.float64) for i in part])
            got, _ = forward_batch(params, batch, mode="eval")
            scores[part] = got
    return scores


def save_checkpoint(path, params: ScorerParameters) -> None:
    """Serialize parameters: magic, u32 version, arch tag byte, then per
    tensor u32 name length, name, u32 rank, u32 dims, f64 LE payload."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("B", _ARCH_TAGS[params.arch]))
        for name in sorted(params.tensors):
            arr = np.asarray(params.tensors[name], dtype=np.float64)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path) -> ScorerParameters:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a scorer checkpoint")
    (version,) = struct.unpack("<I", data[4:8])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    tag = data[8]
    if tag not in _TAG_ARCHS:
        raise CheckpointError(f"{path}: unknown architecture tag {tag}")
    tensors: dict[str, np.ndarray] = {}
    off = 9
    while off < len(data):
        try:
            (name_len,) = struct.unpack_from("<I", data, off)
            off += 4
            name = data[off:off + name_len].decode("utf-8")
            off += name_len
            (rank,) = struct.unpack_from("<I", data, off)
            off += 4
            shape = struct.unpack_from(f"<{rank}I", data, off)
            off += 4 * rank
            count = int(np.prod(shape)) if rank else 1
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape)
            off += 8 * count
        except (struct.error, ValueError) as exc:
            raise CheckpointError(f"{path}: truncated tensor table: {exc}") from None
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"{path}: tensor {name!r} has non-finite entries")
        tensors[name] = arr.astype(np.float64)
    return ScorerParameters(_TAG_ARCHS[tag], tensors)
