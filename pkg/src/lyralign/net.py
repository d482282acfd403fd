"""Multi-scale 1D convolutional acoustic model with manual backpropagation.

Architecture: a stack of downsampling blocks (valid 1D convolution +
leaky rectifier + decimation), then upsampling blocks (linear
interpolation + skip concatenation + valid convolution), a 1x1 output
convolution and a per-frame softmax over the character classes.  All
convolutions are valid, so output frames never see padding artifacts; the
output covers only the centre of the input window.

Everything is plain numpy.  Gradients are computed by hand and verified
against finite differences in the test suite.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import ctc

LEAKY_SLOPE = 0.01

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetConfig:
    num_down_blocks: int = 12
    num_up_blocks: int = 2
    down_kernel: int = 15
    up_kernel: int = 5
    feature_growth: int = 24
    decimation: int = 2
    input_samples: int = 352243
    output_samples: int = 225501
    sample_rate: int = 22050
    num_classes: int = 29

    def __post_init__(self):
        if self.down_kernel % 2 == 0 or self.up_kernel % 2 == 0:
            raise ValueError("kernel sizes must be odd")
        if not 0 <= self.num_up_blocks < self.num_down_blocks:
            raise ValueError("need 0 <= up blocks < down blocks")
        if self.decimation < 2:
            raise ValueError("decimation must be >= 2")
        if self.output_samples > self.input_samples:
            raise ValueError("output window cannot exceed the input window")

    @property
    def hop(self) -> int:
        return self.decimation ** (self.num_down_blocks - self.num_up_blocks)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NetConfig":
        return cls(**json.loads(text))


@dataclass(frozen=True)
class Geometry:
    output_frames: int
    hop: int
    context_left: int
    context_right: int
    natural_frames: int
    crop_offset: int
    skip_offsets: tuple[int, ...]
    skip_lengths: tuple[int, ...]
    up_lengths: tuple[int, ...]


def _down_channels(cfg: NetConfig, i: int) -> tuple[int, int]:
    g = cfg.feature_growth
    return (1 if i == 0 else g * i), g * (i + 1)


def _up_channels(cfg: NetConfig, j: int) -> tuple[int, int]:
    g, d = cfg.feature_growth, cfg.num_down_blocks
    prev = g * d if j == 0 else g * (d - j + 1)
    skip = g * (d - j)
    return prev + skip, skip


def compute_geometry(cfg: NetConfig) -> Geometry:
    """Exact frame count, hop and context from the layer size arithmetic.

    Positions are tracked in input-sample coordinates (receptive-field
    centres) so skip connections and the final crop are aligned exactly,
    not just by symmetric guessing.
    """
    dec = cfg.decimation
    length = cfg.input_samples
    stride = 1
    pos = 0  # centre position of index 0, in input samples
    skips: list[tuple[int, int, int]] = []  # (length, stride, pos)

    for _ in range(cfg.num_down_blocks):
        length -= cfg.down_kernel - 1
        pos += (cfg.down_kernel - 1) // 2 * stride
        if length < 1:
            raise ValueError("input too small for this depth/kernel")
        skips.append((length, stride, pos))
        length = -(-length // dec)
        stride *= dec

    skip_offsets: list[int] = []
    skip_lengths: list[int] = []
    up_lengths: list[int] = []
    for j in range(cfg.num_up_blocks):
        length = dec * (length - 1) + 1
        stride //= dec
        s_len, s_stride, s_pos = skips[cfg.num_down_blocks - 1 - j]
        assert s_stride == stride
        offset, rem = divmod(pos - s_pos, stride)
        if rem != 0:
            raise ValueError("skip misalignment; use odd kernels")
        if offset < 0 or offset + length > s_len:
            raise ValueError("upsampled path outgrew its skip connection")
        skip_offsets.append(offset)
        skip_lengths.append(s_len)
        up_lengths.append(length)
        length -= cfg.up_kernel - 1
        pos += (cfg.up_kernel - 1) // 2 * stride
        if length < 1:
            raise ValueError("input too small for the upsampling path")

    hop = stride
    assert hop == cfg.hop
    output_frames = cfg.output_samples // hop
    context_left = (cfg.input_samples - cfg.output_samples) // 2
    context_right = cfg.input_samples - cfg.output_samples - context_left
    desired_centre = context_left + (hop - 1) / 2
    crop_offset = round((desired_centre - pos) / hop)
    if crop_offset < 0 or crop_offset + output_frames > length:
        raise ValueError(
            f"config yields only {length} frames, cannot crop "
            f"{output_frames} centred output frames")
    return Geometry(output_frames=output_frames, hop=hop,
                    context_left=context_left, context_right=context_right,
                    natural_frames=length, crop_offset=crop_offset,
                    skip_offsets=tuple(skip_offsets),
                    skip_lengths=tuple(skip_lengths),
                    up_lengths=tuple(up_lengths))


# -- parameters -----------------------------------------------------------

def init_params(cfg: NetConfig, seed: int = 0,
                dtype=np.float32) -> dict[str, np.ndarray]:
    """Fan-in-scaled uniform initialization, deterministic per seed."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}

    def conv(name, c_in, c_out, k):
        limit = math.sqrt(1.0 / (c_in * k))
        params[f"{name}_W"] = rng.uniform(
            -limit, limit, size=(c_out, c_in, k)).astype(dtype)
        params[f"{name}_b"] = np.zeros(c_out, dtype=dtype)

    for i in range(cfg.num_down_blocks):
        c_in, c_out = _down_channels(cfg, i)
        conv(f"down{i}", c_in, c_out, cfg.down_kernel)
    for j in range(cfg.num_up_blocks):
        c_in, c_out = _up_channels(cfg, j)
        conv(f"up{j}", c_in, c_out, cfg.up_kernel)
    g = cfg.feature_growth
    conv("out", g * (cfg.num_down_blocks - cfg.num_up_blocks + 1)
         if cfg.num_up_blocks else g * cfg.num_down_blocks,
         cfg.num_classes, 1)
    return params


def param_count(params: dict[str, np.ndarray]) -> int:
    return sum(v.size for v in params.values())


# -- primitive ops --------------------------------------------------------

def _conv1d(x, W, b):
    win = sliding_window_view(x, W.shape[2], axis=1)
    return np.einsum("oik,ilk->ol", W, win, optimize=True) + b[:, None]


def _conv1d_backward(x, W, dy):
    K = W.shape[2]
    win = sliding_window_view(x, K, axis=1)
    dW = np.einsum("ol,ilk->oik", dy, win, optimize=True)
    db = dy.sum(axis=1)
    dx = np.zeros_like(x)
    Lo = dy.shape[1]
    for k in range(K):
        dx[:, k:k + Lo] += np.einsum("oi,ol->il", W[:, :, k], dy,
                                     optimize=True)
    return dx, dW, db


def _leaky(x):
    return np.where(x > 0, x, LEAKY_SLOPE * x)


def _leaky_backward(x, dy):
    return np.where(x > 0, dy, LEAKY_SLOPE * dy)


def _decimate(x, dec):
    return x[:, ::dec]


def _decimate_backward(dy, dec, length):
    dx = np.zeros((dy.shape[0], length), dtype=dy.dtype)
    dx[:, ::dec] = dy
    return dx


def _upsample(x, dec):
    C, L = x.shape
    out = np.zeros((C, dec * (L - 1) + 1), dtype=x.dtype)
    out[:, ::dec] = x
    for r in range(1, dec):
        w = r / dec
        out[:, r::dec] = (1 - w) * x[:, :-1] + w * x[:, 1:]
    return out


def _scatter_upsample(dy, dec, length):
    """Adjoint of ``_upsample``: route interpolated gradients back."""
    dx = np.zeros((dy.shape[0], length), dtype=dy.dtype)
    dx[:, :] = dy[:, ::dec]
    for r in range(1, dec):
        w = r / dec
        dx[:, :-1] += (1 - w) * dy[:, r::dec]
        dx[:, 1:] += w * dy[:, r::dec]
    return dx


def softmax_rows(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


# -- forward / backward ---------------------------------------------------

def forward(params, cfg: NetConfig, chunk,
            return_cache: bool = False):
    """Per-frame class logits for one input chunk.

    ``chunk`` must have exactly ``cfg.input_samples`` mono samples.
    Returns ``(logits, cache)`` with logits of shape
    ``(output_frames, num_classes)``.
    """
    chunk = np.asarray(chunk)
    if chunk.ndim != 1 or len(chunk) != cfg.input_samples:
        raise ValueError(
            f"chunk must have exactly {cfg.input_samples} samples, "
            f"got {chunk.shape}")
    geo = compute_geometry(cfg)
    dec = cfg.decimation
    dtype = params["out_W"].dtype
    x = chunk.astype(dtype)[None, :]

    cache = {"geo": geo, "chunk": chunk}
    skips = []
    for i in range(cfg.num_down_blocks):
        pre = x
        z = _conv1d(pre, params[f"down{i}_W"], params[f"down{i}_b"])
        a = _leaky(z)
        skips.append(a)
        cache[f"down{i}_in"] = pre
        cache[f"down{i}_z"] = z
        cache[f"down{i}_len"] = a.shape[1]
        x = _decimate(a, dec)

    for j in range(cfg.num_up_blocks):
        cache[f"up{j}_prelen"] = x.shape[1]
        up = _upsample(x, dec)
        skip = skips[cfg.num_down_blocks - 1 - j]
        o = geo.skip_offsets[j]
        cropped = skip[:, o:o + up.shape[1]]
        merged = np.concatenate([up, cropped], axis=0)
        z = _conv1d(merged, params[f"up{j}_W"], params[f"up{j}_b"])
        a = _leaky(z)
        cache[f"up{j}_in"] = merged
        cache[f"up{j}_z"] = z
        cache[f"up{j}_upch"] = up.shape[0]
        x = a

    logits_full = _conv1d(x, params["out_W"], params["out_b"])
    cache["out_in"] = x
    m = geo.crop_offset
    logits = logits_full[:, m:m + geo.output_frames].T
    cache["full_frames"] = logits_full.shape[1]
    if return_cache:
        return logits, cache
    return logits


def probabilities(params, cfg: NetConfig, chunk) -> np.ndarray:
    """Row-stochastic frame/class probability matrix for one chunk."""
    return softmax_rows(forward(params, cfg, chunk).astype(np.float64))


def backward(params, cfg: NetConfig, chunk, target,
             frame_slice: tuple[int, int]):
    """CTC loss on a frame slice and its gradient for every parameter.

    ``target`` may be empty (the all-blank objective for instrumental
    windows).  Frames outside the slice receive zero loss gradient.
    Returns ``(loss, grads)`` with ``grads`` keyed like ``params``.
    """
    lo, hi = frame_slice
    logits, cache = forward(params, cfg, chunk, return_cache=True)
    geo = cache["geo"]
    if not (0 <= lo < hi <= geo.output_frames):
        raise ValueError(
            f"slice [{lo}, {hi}) invalid for {geo.output_frames} frames")
    target = np.asarray(target, dtype=np.int64)

    P_slice = softmax_rows(logits[lo:hi].astype(np.float64))
    loss, dlogits_slice = ctc.ctc_loss_and_logit_grad(P_slice, target)

    dtype = params["out_W"].dtype
    dlogits = np.zeros_like(logits, dtype=np.float64)
    dlogits[lo:hi] = dlogits_slice
    m = geo.crop_offset
    dfull = np.zeros((logits.shape[1], cache["full_frames"]), dtype=dtype)
    dfull[:, m:m + geo.output_frames] = dlogits.T.astype(dtype)

    grads: dict[str, np.ndarray] = {}
    dx, grads["out_W"], grads["out_b"] = _conv1d_backward(
        cache["out_in"], params["out_W"], dfull)

    dec = cfg.decimation
    dskips: dict[int, np.ndarray] = {}
    for j in range(cfg.num_up_blocks - 1, -1, -1):
        dz = _leaky_backward(cache[f"up{j}_z"], dx)
        dmerged, grads[f"up{j}_W"], grads[f"up{j}_b"] = _conv1d_backward(
            cache[f"up{j}_in"], params[f"up{j}_W"], dz)
        upch = cache[f"up{j}_upch"]
        dup = dmerged[:upch]
        dcrop = dmerged[upch:]
        i_skip = cfg.num_down_blocks - 1 - j
        o = geo.skip_offsets[j]
        dskip = np.zeros((dcrop.shape[0], cache[f"down{i_skip}_len"]),
                         dtype=dtype)
        dskip[:, o:o + dcrop.shape[1]] = dcrop
        dskips[i_skip] = dskip
        dx = _scatter_upsample(dup, dec, cache[f"up{j}_prelen"])

    for i in range(cfg.num_down_blocks - 1, -1, -1):
        da = _decimate_backward(dx, dec, cache[f"down{i}_len"])
        if i in dskips:
            da = da + dskips[i]
        dz = _leaky_backward(cache[f"down{i}_z"], da)
        dx, grads[f"down{i}_W"], grads[f"down{i}_b"] = _conv1d_backward(
            cache[f"down{i}_in"], params[f"down{i}_W"], dz)

    return loss, grads


def slice_loss(params, cfg: NetConfig, chunk, target,
               frame_slice: tuple[int, int]) -> float:
    """Forward-only CTC loss on a frame slice (for validation passes)."""
    lo, hi = frame_slice
    logits = forward(params, cfg, chunk)
    if not (0 <= lo < hi <= logits.shape[0]):
        raise ValueError("invalid frame slice")
    P = softmax_rows(logits[lo:hi].astype(np.float64))
    log_lik = ctc.ctc_log_likelihood(P, target)
    if log_lik == ctc.NEG_INF:
        raise ValueError("infeasible target in validation sample")
    return -log_lik


# -- optimizer ------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    batch_size: int = 32
    loss_window_iters: int = 10000
    patience: int = 6
    reduced_lr: float = 1e-5
    max_iterations: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.reduced_lr >= self.learning_rate:
            raise ValueError("reduced_lr must be below learning_rate")
        if min(self.learning_rate, self.adam_beta1, self.adam_beta2,
               self.adam_epsilon, self.batch_size, self.loss_window_iters,
               self.patience, self.reduced_lr) <= 0:
            raise ValueError("training hyperparameters must be positive")


def adam_init(params) -> dict:
    return {"step": 0,
            "m": {k: np.zeros_like(v) for k, v in params.items()},
            "v": {k: np.zeros_like(v) for k, v in params.items()}}


def adam_step(params, grads, state, tcfg: TrainConfig,
              learning_rate: float | None = None):
    """One ADAM update; raises on non-finite gradients."""
    lr = tcfg.learning_rate if learning_rate is None else learning_rate
    b1, b2, eps = tcfg.adam_beta1, tcfg.adam_beta2, tcfg.adam_epsilon
    step = state["step"] + 1
    new_params = {}
    new_m = {}
    new_v = {}
    for k, p in params.items():
        g = grads[k]
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {k}")
        m = b1 * state["m"][k] + (1 - b1) * g
        v = b2 * state["v"][k] + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** step)
        v_hat = v / (1 - b2 ** step)
        new_params[k] = (p - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype)
        new_m[k] = m.astype(p.dtype)
        new_v[k] = v.astype(p.dtype)
    return new_params, {"step": step, "m": new_m, "v": new_v}


# -- training schedule ----------------------------------------------------

class PatienceSchedule:
    """Two-phase windowed-loss patience: LR drop once, then stop.

    Feed it one averaged window loss at a time; it answers with
    ``"continue"``, ``"reduce_lr"`` (exactly once) or ``"stop"``.
    """

    def __init__(self, patience: int):
        self.patience = patience
        self.best: float | None = None
        self.bad = 0
        self.phase = 0

    def record(self, window_loss: float) -> str:
        if self.best is None or window_loss < self.best:
            self.best = window_loss
            self.bad = 0
            return "continue"
        self.bad += 1
        if self.bad < self.patience:
            return "continue"
        if self.phase == 0:
            self.phase = 1
            self.bad = 0
            return "reduce_lr"
        return "stop"


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    log: list[dict] = field(default_factory=list)
    iterations: int = 0


def train(params, cfg: NetConfig, train_set, tcfg: TrainConfig,
          val_set=None, checkpoint_dir=None) -> TrainResult:
    """Windowed-patience training loop over (chunk, target, slice) samples.

    Every ``loss_window_iters`` iterations the averaged training loss is
    compared to the best window so far; after ``patience`` non-improving
    windows the learning rate drops to ``reduced_lr``, and after a second
    run of ``patience`` the loop stops.  If a validation set is given, the
    returned parameters are the window checkpoint with the lowest
    validation loss, not necessarily the last.
    """
    if not train_set:
        raise ValueError("empty training set")
    rng = np.random.default_rng(tcfg.seed)
    state = adam_init(params)
    schedule = PatienceSchedule(tcfg.patience)
    lr = tcfg.learning_rate
    log: list[dict] = []
    window_losses: list[float] = []
    best_val = None
    best_params = {k: v.copy() for k, v in params.items()}

    def validate(p):
        losses = [slice_loss(p, cfg, c, t, s) for c, t, s in val_set]
        return float(np.mean(losses))

    order = rng.permutation(len(train_set))
    cursor = 0
    iteration = 0
    while True:
        batch_idx = []
        while len(batch_idx) < tcfg.batch_size:
            if cursor == len(order):
                order = rng.permutation(len(train_set))
                cursor = 0
            batch_idx.append(int(order[cursor]))
            cursor += 1

        total_loss = 0.0
        acc: dict[str, np.ndarray] | None = None
        for idx in batch_idx:
            chunk, target, sl = train_set[idx]
            loss, grads = backward(params, cfg, chunk, target, sl)
            total_loss += loss
            if acc is None:
                acc = grads
            else:
                for k in acc:
                    acc[k] += grads[k]
        n = len(batch_idx)
        for k in acc:
            acc[k] /= n
        params, state = adam_step(params, acc, state, tcfg, learning_rate=lr)
        iteration += 1
        window_losses.append(total_loss / n)

        hit_cap = (tcfg.max_iterations is not None
                   and iteration >= tcfg.max_iterations)
        if len(window_losses) >= tcfg.loss_window_iters or hit_cap:
            window_avg = float(np.mean(window_losses))
            window_losses = []
            val_loss = validate(params) if val_set else None
            log.append({"iteration": iteration, "train_loss": window_avg,
                        "val_loss": val_loss, "lr": lr})
            if val_set:
                if best_val is None or val_loss < best_val:
                    best_val = val_loss
                    best_params = {k: v.copy() for k, v in params.items()}
            else:
                best_params = {k: v.copy() for k, v in params.items()}
            if checkpoint_dir is not None:
                save_checkpoint(
                    f"{checkpoint_dir}/ckpt_{iteration:08d}.npz",
                    cfg, params, state, iteration)
            action = schedule.record(window_avg)
            if action == "reduce_lr":
                lr = tcfg.reduced_lr
            elif action == "stop" or hit_cap:
                break
    return TrainResult(params=best_params, log=log, iterations=iteration)


# -- checkpoints ----------------------------------------------------------

def save_checkpoint(path, cfg: NetConfig, params, state, iteration: int):
    arrays = {f"param_{k}": v for k, v in params.items()}
    arrays.update({f"adam_m_{k}": v for k, v in state["m"].items()})
    arrays.update({f"adam_v_{k}": v for k, v in state["v"].items()})
    np.savez(path,
             version=np.int64(CHECKPOINT_VERSION),
             config=np.bytes_(cfg.to_json().encode()),
             iteration=np.int64(iteration),
             adam_step=np.int64(state["step"]),
             **arrays)


def load_checkpoint(path):
    with np.load(path) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(
                f"checkpoint version {version} not supported "
                f"(expected {CHECKPOINT_VERSION})")
        cfg = NetConfig.from_json(bytes(data["config"]).decode())
        params = {}
        m = {}
        v = {}
        for key in data.files:
            if key.startswith("param_"):
                params[key[len("param_"):]] = data[key]
            elif key.startswith("adam_m_"):
                m[key[len("adam_m_"):]] = data[key]
            elif key.startswith("adam_v_"):
                v[key[len("adam_v_"):]] = data[key]
        state = {"step": int(data["adam_step"]), "m": m, "v": v}
        iteration = int(data["iteration"])
    return cfg, params, state, iteration
