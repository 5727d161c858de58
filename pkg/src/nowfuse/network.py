"""Encoder-decoder inpainting network built from partial convolutions.

The encoder threads (activation, mask) pairs through stride-2 partial
convolutions; the decoder nearest-upsamples both, concatenates the skip
activation, combines the two masks by elementwise min, and applies a
stride-1 partial convolution. A final 1x1 projection (a partial conv fed
an all-ones mask, i.e. an ordinary convolution) maps back to the input
channel count.

Backward passes are written out by hand; masks are constants throughout.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .grid import NFW_MAGIC, Grid, MaskGrid, NfgFormatError, Tensor4
from .pconv import MASK_MODES, PConvLayer, pconv_backward_raw, pconv_forward_raw
from .rng import make_rng


class NonFiniteError(RuntimeError):
    """A forward/backward intermediate left the finite range."""


@dataclass(frozen=True)
class NetConfig:
    encoder_channels: tuple[int, ...] = (32, 64, 128, 256)
    encoder_kernels: tuple[int, ...] = (7, 5, 3, 3)
    decoder_kernel: int = 3
    leaky_slope: float = 0.2
    mask_mode: str = "soft"
    in_channels: int = 1

    def __post_init__(self):
        if len(self.encoder_channels) < 2:
            raise ValueError("need at least 2 encoder levels")
        if len(self.encoder_kernels) != len(self.encoder_channels):
            raise ValueError("one kernel size per encoder level")
        if any(b <= a for a, b in zip(self.encoder_channels, self.encoder_channels[1:])):
            raise ValueError("encoder channels must be strictly increasing")
        if any(k % 2 == 0 for k in self.encoder_kernels) or self.decoder_kernel % 2 == 0:
            raise ValueError("kernel sizes must be odd")
        if self.mask_mode not in MASK_MODES:
            raise ValueError(f"mask_mode must be one of {MASK_MODES}")

    @property
    def levels(self) -> int:
        return len(self.encoder_channels)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 2e-4
    batch_size: int = 8
    steps: int = 1000
    lambda_hole: float = 6.0
    lambda_valid: float = 1.0
    seed: int = 0
    checkpoint_every: int = 50

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning rate must be >= 0")
        if self.batch_size < 1 or self.steps < 1:
            raise ValueError("batch size and steps must be positive")


@dataclass(eq=False)
class NetworkParams:
    """Ordered parameter blocks: encoder, decoder, final 1x1 projection."""

    config: NetConfig
    encoder: tuple[PConvLayer, ...]
    decoder: tuple[PConvLayer, ...]
    projection: PConvLayer

    @property
    def layers(self) -> tuple[PConvLayer, ...]:
        return (*self.encoder, *self.decoder, self.projection)

    @property
    def layer_names(self) -> tuple[str, ...]:
        n = len(self.encoder)
        return (*(f"enc{i}" for i in range(n)),
                *(f"dec{i}" for i in range(n)), "proj")

    def num_params(self) -> int:
        return sum(l.weights.size + l.bias.size for l in self.layers)

    def astype(self, dtype) -> "NetworkParams":
        return NetworkParams(self.config,
                             tuple(l.astype(dtype) for l in self.encoder),
                             tuple(l.astype(dtype) for l in self.decoder),
                             self.projection.astype(dtype))

    def copy(self) -> "NetworkParams":
        return self.astype(self.encoder[0].weights.dtype)

    def replace_layers(self, layers) -> "NetworkParams":
        n = len(self.encoder)
        return NetworkParams(self.config, tuple(layers[:n]),
                             tuple(layers[n:2 * n]), layers[2 * n])


def _layer_plan(cfg: NetConfig) -> list[tuple[int, int, int, int, int]]:
    """(in_ch, out_ch, kernel, stride, padding) per layer, encoder first."""
    n = cfg.levels
    ch = cfg.encoder_channels
    plan = []
    for i in range(n):
        cin = cfg.in_channels if i == 0 else ch[i - 1]
        plan.append((cin, ch[i], cfg.encoder_kernels[i], 2, (cfg.encoder_kernels[i] - 1) // 2))
    for i in range(n):
        skip_ch = ch[n - 2 - i] if i <= n - 2 else cfg.in_channels
        out_ch = ch[n - 2 - i] if i <= n - 2 else ch[0]
        k = cfg.decoder_kernel
        plan.append((ch[n - 1 - i] + skip_ch, out_ch, k, 1, (k - 1) // 2))
    plan.append((ch[0], cfg.in_channels, 1, 1, 0))
    return plan


def init_params(cfg: NetConfig, seed: int) -> NetworkParams:
    """Seeded uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases."""
    rng = make_rng(seed, 31)
    layers = []
    for cin, cout, k, stride, pad in _layer_plan(cfg):
        fan_in = cin * k * k
        fan_out = cout * k * k
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(cout, cin, k, k)).astype(np.float32)
        b = np.zeros(cout, dtype=np.float32)
        layers.append(PConvLayer(w, b, stride, pad, cfg.mask_mode))
    n = cfg.levels
    return NetworkParams(cfg, tuple(layers[:n]), tuple(layers[n:2 * n]), layers[2 * n])


def _upsample2(a: np.ndarray) -> np.ndarray:
    c, b, h, w = a.shape
    out = np.broadcast_to(a[:, :, :, None, :, None], (c, b, h, 2, w, 2))
    return np.ascontiguousarray(out).reshape(c, b, 2 * h, 2 * w)


def _upsample2_backward(d: np.ndarray) -> np.ndarray:
    c, b, h2, w2 = d.shape
    return d.reshape(c, b, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5))


def _check_finite(arr: np.ndarray, name: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite activation after layer {name}")


def _forward_tape(params: NetworkParams, x: np.ndarray, m: np.ndarray,
                  want_cache: bool):
    """Run the network on channel-first (C, B, H, W) activations.

    The mask is (1, B, H, W). Optionally records everything backward needs.
    """
    cfg = params.config
    n = cfg.levels
    c, b, h, w = x.shape
    if c != cfg.in_channels:
        raise ValueError(f"expected {cfg.in_channels} input channels, got {c}")
    div = 2 ** n
    if h % div or w % div:
        raise ValueError(f"spatial dims must be divisible by {div}, got {h}x{w}")

    tape = {"enc": [], "dec": [], "split": []}
    skips = [(x, m)]
    cur, cur_m = x, m
    for i, layer in enumerate(params.encoder):
        out = pconv_forward_raw(cur, cur_m, layer, want_cache)
        z, cur_m = out[0], out[1]
        _check_finite(z, f"enc{i}")
        pos = z > 0
        cur = np.where(pos, z, z.dtype.type(0.0))
        if want_cache:
            tape["enc"].append((out[2], pos))
        skips.append((cur, cur_m))

    slope = cfg.leaky_slope
    for i, layer in enumerate(params.decoder):
        skip_h, skip_m = skips[n - 1 - i]
        hu = _upsample2(cur)
        mu = _upsample2(cur_m)
        cur = np.concatenate([hu, skip_h], axis=0)
        cur_m = np.minimum(mu, skip_m)
        out = pconv_forward_raw(cur, cur_m, layer, want_cache)
        z, cur_m = out[0], out[1]
        _check_finite(z, f"dec{i}")
        pos = z > 0
        cur = np.where(pos, z, slope * z)
        if want_cache:
            tape["dec"].append((out[2], pos))
            tape["split"].append(hu.shape[0])

    ones = np.ones((1, 1) + cur.shape[2:], dtype=cur.dtype)
    out = pconv_forward_raw(cur, ones, params.projection, want_cache)
    y = out[0]
    _check_finite(y, "proj")
    if want_cache:
        tape["proj"] = out[2]
    return y, tape


def _backward_tape(params: NetworkParams, dy: np.ndarray, tape):
    cfg = params.config
    n = cfg.levels
    slope = cfg.leaky_slope

    grads_w = [None] * (2 * n + 1)
    grads_b = [None] * (2 * n + 1)

    dh, dwp, dbp = pconv_backward_raw(dy, params.projection, tape["proj"])
    grads_w[2 * n], grads_b[2 * n] = dwp, dbp

    # Gradient buffers for encoder activations (skip consumers add in).
    g_enc = [None] * n
    for i in range(n - 1, -1, -1):
        cache, pos = tape["dec"][i]
        layer = params.decoder[i]
        dz = np.where(pos, dh, slope * dh)
        dcat, dw, db = pconv_backward_raw(dz, layer, cache)
        grads_w[n + i], grads_b[n + i] = dw, db
        up_ch = tape["split"][i]
        dhu = dcat[:up_ch]
        dskip = dcat[up_ch:]
        sk = n - 2 - i
        if sk >= 0:  # input-level skip gradient is discarded
            g_enc[sk] = dskip if g_enc[sk] is None else g_enc[sk] + dskip
        dh = _upsample2_backward(dhu)
    g_enc[n - 1] = dh if g_enc[n - 1] is None else g_enc[n - 1] + dh

    for i in range(n - 1, -1, -1):
        cache, pos = tape["enc"][i]
        dz = np.where(pos, g_enc[i], g_enc[i].dtype.type(0.0))
        dx, dw, db = pconv_backward_raw(dz, params.encoder[i], cache)
        grads_w[i], grads_b[i] = dw, db
        if i > 0:
            g_enc[i - 1] = dx if g_enc[i - 1] is None else g_enc[i - 1] + dx
    return list(zip(grads_w, grads_b))


def loss_raw(pred: np.ndarray, target: np.ndarray, m: np.ndarray,
             lambda_valid: float, lambda_hole: float):
    """Weighted L1 over valid (m == 1) and hole (m < 1) pixels.

    Channel-first arrays; the (1, B, H, W) mask broadcasts across channels.
    Returns (loss, d loss / d pred). Empty regions contribute nothing.
    """
    diff = pred.astype(np.float64) - target.astype(np.float64)
    valid = np.broadcast_to(m == 1.0, pred.shape)
    nv = int(valid.sum())
    nh = diff.size - nv
    adiff = np.abs(diff)
    loss = 0.0
    dpred = np.sign(diff)
    scale = np.where(valid, lambda_valid / nv if nv else 0.0,
                     lambda_hole / nh if nh else 0.0)
    if nv:
        loss += lambda_valid * float(adiff[valid].mean())
    if nh:
        loss += lambda_hole * float(adiff[~valid].mean())
    return loss, (dpred * scale).astype(pred.dtype)


@dataclass
class TrainBatch:
    """Stacked training arrays: images/targets (B,1,H,W), masks (B,1,H,W)."""

    images: np.ndarray
    masks: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if self.images.shape != self.targets.shape:
            raise ValueError("image and target shapes must match")
        if self.masks.shape != (self.images.shape[0], 1) + self.images.shape[2:]:
            raise ValueError("mask shape must be (B, 1, H, W)")


def _grad_cbhw(params: NetworkParams, x: np.ndarray, m: np.ndarray,
               target: np.ndarray, cfg: TrainConfig):
    pred, tape = _forward_tape(params, x, m, want_cache=True)
    value, dpred = loss_raw(pred, target, m, cfg.lambda_valid, cfg.lambda_hole)
    grads = _backward_tape(params, dpred, tape)
    for name, (dw, db) in zip(params.layer_names, grads):
        if not (np.isfinite(dw).all() and np.isfinite(db).all()):
            raise NonFiniteError(f"non-finite gradient in layer {name}")
    return value, grads


def grad(params: NetworkParams, batch: TrainBatch, cfg: TrainConfig):
    """Loss and analytic gradients of every (W, b) block for one batch."""
    _validate_mask_mode(params, batch.masks)
    x = np.ascontiguousarray(batch.images.transpose(1, 0, 2, 3))
    m = np.ascontiguousarray(batch.masks.transpose(1, 0, 2, 3))
    t = np.ascontiguousarray(batch.targets.transpose(1, 0, 2, 3))
    return _grad_cbhw(params, x, m, t, cfg)


def _validate_mask_mode(params: NetworkParams, m: np.ndarray) -> None:
    if params.config.mask_mode == "binary":
        if ((m != 0.0) & (m != 1.0)).any():
            raise ValueError("binary mask mode requires mask values in {0, 1}")


def net_forward(image: Tensor4, m: MaskGrid, params: NetworkParams) -> Tensor4:
    """Full forward pass; the mask is shared by every batch item."""
    x = image.values
    if m.shape != x.shape[2:]:
        raise ValueError("mask dimensions must match the image")
    mv = m.values.astype(x.dtype)[None, None]
    _validate_mask_mode(params, mv)
    xc = np.ascontiguousarray(x.transpose(1, 0, 2, 3))
    y, _ = _forward_tape(params, xc, mv, want_cache=False)
    return Tensor4(np.ascontiguousarray(y.transpose(1, 0, 2, 3)))


def composite(input_: Tensor4, pred: Tensor4, m: MaskGrid) -> Tensor4:
    """Keep input where the mask trusts it: m * input + (1 - m) * pred."""
    if input_.shape != pred.shape or m.shape != input_.shape[2:]:
        raise ValueError("composite operands must share dimensions")
    mv = m.values.astype(np.float64)[None, None]
    out = mv * input_.values.astype(np.float64) + (1.0 - mv) * pred.values.astype(np.float64)
    return Tensor4(out.astype(input_.values.dtype))


def loss(pred: Tensor4, target: Tensor4, m: MaskGrid, cfg: TrainConfig) -> float:
    """Scalar training loss for a (pred, target, mask) triple."""
    if pred.shape != target.shape or m.shape != pred.shape[2:]:
        raise ValueError("loss operands must share dimensions")
    mv = m.values.astype(pred.values.dtype)[None, None]
    value, _ = loss_raw(pred.values, target.values, mv,
                        cfg.lambda_valid, cfg.lambda_hole)
    return value


def inpaint(image: Grid, m: MaskGrid, params: NetworkParams) -> Grid:
    """Replace low-confidence pixels with network predictions, clamped to [0, 1]."""
    if image.shape != m.shape:
        raise ValueError("mask dimensions must match the image")
    x = Tensor4(image.values[None, None])
    pred = net_forward(x, m, params)
    out = composite(x, pred, m)
    return Grid(np.clip(out.values[0, 0], 0.0, 1.0).astype(np.float32))


# ---------------------------------------------------------------------------
# Training loop (Adam).

_B1, _B2, _EPS = 0.9, 0.999, 1e-8


@dataclass
class _AdamState:
    t: int = 0
    mw: list = field(default_factory=list)
    vw: list = field(default_factory=list)
    mb: list = field(default_factory=list)
    vb: list = field(default_factory=list)


def _adam_step(params: NetworkParams, grads, state: _AdamState,
               lr: float) -> NetworkParams:
    layers = params.layers
    if not state.mw:
        for l in layers:
            state.mw.append(np.zeros_like(l.weights))
            state.vw.append(np.zeros_like(l.weights))
            state.mb.append(np.zeros_like(l.bias))
            state.vb.append(np.zeros_like(l.bias))
    state.t += 1
    c1 = 1.0 - _B1 ** state.t
    c2 = 1.0 - _B2 ** state.t
    new_layers = []
    for i, (l, (dw, db)) in enumerate(zip(layers, grads)):
        dw = dw.astype(np.float32)
        db = db.astype(np.float32)
        state.mw[i] = _B1 * state.mw[i] + (1 - _B1) * dw
        state.vw[i] = _B2 * state.vw[i] + (1 - _B2) * dw * dw
        state.mb[i] = _B1 * state.mb[i] + (1 - _B1) * db
        state.vb[i] = _B2 * state.vb[i] + (1 - _B2) * db * db
        w = l.weights - np.float32(lr) * (state.mw[i] / c1) / (np.sqrt(state.vw[i] / c2) + _EPS)
        b = l.bias - np.float32(lr) * (state.mb[i] / c1) / (np.sqrt(state.vb[i] / c2) + _EPS)
        new_layers.append(PConvLayer(w, b, l.stride, l.padding, l.mask_mode))
    return params.replace_layers(new_layers)


def train(dataset, net_cfg: NetConfig, train_cfg: TrainConfig,
          progress=None):
    """Adam training over (image, mask, target) triples.

    `dataset` is a sequence of (corrupted, mask, target) float32 (H, W)
    arrays. Returns (params, history) where history is a list of
    (step, loss) pairs. Fully deterministic for a given seed. If the loss
    leaves the finite range the loop aborts and returns the last finite
    checkpoint.
    """
    if len(dataset) == 0:
        raise ValueError("dataset must not be empty")
    items = [(np.asarray(i, np.float32), np.asarray(m, np.float32),
              np.asarray(t, np.float32)) for i, m, t in dataset]
    params = init_params(net_cfg, train_cfg.seed)
    rng = make_rng(train_cfg.seed, 37)
    state = _AdamState()
    history = []
    checkpoint = params.copy()
    binary = net_cfg.mask_mode == "binary"
    for step in range(1, train_cfg.steps + 1):
        idx = rng.integers(0, len(items), size=train_cfg.batch_size)
        x = np.stack([items[j][0] for j in idx])[None]   # (1, B, H, W)
        m = np.stack([items[j][1] for j in idx])[None]
        t = np.stack([items[j][2] for j in idx])[None]
        if binary and ((m != 0.0) & (m != 1.0)).any():
            raise ValueError("binary mask mode requires mask values in {0, 1}")
        try:
            value, grads = _grad_cbhw(params, x, m, t, train_cfg)
        except NonFiniteError:
            return checkpoint, history
        if not np.isfinite(value):
            return checkpoint, history
        params = _adam_step(params, grads, state, train_cfg.learning_rate)
        history.append((step, value))
        if step % train_cfg.checkpoint_every == 0:
            checkpoint = params.copy()
        if progress is not None:
            progress(step, value)
    return params, history


# ---------------------------------------------------------------------------
# NFW1 weights container.

_LHEAD = struct.Struct("<IIIIII")  # out_ch, in_ch, kh, kw, stride, padding
_MODE_BYTE = {"binary": 0, "soft": 1}
_BYTE_MODE = {v: k for k, v in _MODE_BYTE.items()}


def save_params(params: NetworkParams, path) -> None:
    import os

    chunks = [NFW_MAGIC, struct.pack("<I", len(params.layers))]
    for l in params.layers:
        cout, cin, kh, kw = l.weights.shape
        chunks.append(_LHEAD.pack(cout, cin, kh, kw, l.stride, l.padding))
        chunks.append(bytes([_MODE_BYTE[l.mask_mode]]))
        chunks.append(l.weights.astype("<f4").tobytes())
        chunks.append(l.bias.astype("<f4").tobytes())
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(chunks))
    os.replace(tmp, path)


def load_params(path) -> NetworkParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8 or blob[:4] != NFW_MAGIC:
        raise NfgFormatError(f"{path}: not an NFW1 file (bad magic)")
    (count,) = struct.unpack_from("<I", blob, 4)
    if count < 3 or count % 2 == 0:
        raise NfgFormatError(f"{path}: implausible layer count {count}")
    off = 8
    layers = []
    for _ in range(count):
        if off + _LHEAD.size + 1 > len(blob):
            raise NfgFormatError(f"{path}: truncated layer header")
        cout, cin, kh, kw, stride, padding = _LHEAD.unpack_from(blob, off)
        off += _LHEAD.size
        mode_byte = blob[off]
        off += 1
        if mode_byte not in _BYTE_MODE:
            raise NfgFormatError(f"{path}: unknown mask mode byte {mode_byte}")
        nw = cout * cin * kh * kw
        need = (nw + cout) * 4
        if off + need > len(blob):
            raise NfgFormatError(f"{path}: truncated layer payload")
        w = np.frombuffer(blob, dtype="<f4", count=nw, offset=off).reshape(cout, cin, kh, kw)
        off += nw * 4
        b = np.frombuffer(blob, dtype="<f4", count=cout, offset=off)
        off += cout * 4
        layers.append(PConvLayer(w.astype(np.float32), b.astype(np.float32),
                                 stride, padding, _BYTE_MODE[mode_byte]))
    if off != len(blob):
        raise NfgFormatError(f"{path}: trailing bytes after last layer")

    n = (count - 1) // 2
    enc, dec, proj = layers[:n], layers[n:2 * n], layers[2 * n]
    cfg = NetConfig(
        encoder_channels=tuple(l.out_channels for l in enc),
        encoder_kernels=tuple(l.kernel[0] for l in enc),
        decoder_kernel=dec[0].kernel[0],
        mask_mode=enc[0].mask_mode,
        in_channels=enc[0].in_channels,
    )
    return NetworkParams(cfg, tuple(enc), tuple(dec), proj)
