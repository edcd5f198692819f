"""Encoder / transition / decoder networks over the gradcore tape.

Every model is a dict of named parameter Tensors plus a :class:`ModelConfig`.
Activations carry a batch axis and an object axis: the distributed state ``s``
is ``(B, n_objects, H', W', C)`` and the concentrated state ``p`` is
``(B, n_objects, q)`` with ``q = 2`` (pixel position) for deterministic
variants and ``q = 5`` (mean, two eigenvalue pre-activations, angle) for
``probnet``.

Rollout convention: ``h_0`` is the encoding of the observed frames and
prediction ``k`` (1-based) decodes ``h_k``, the state ``k`` frames after the
last observed one.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import gradcore as gc
from .errors import ConfigError, ShapeError

VARIANTS = ("dispnet", "probnet", "posnet", "interpnet")
ENCODER_WIDTHS = (16, 32, 32)
STATE_EXTENT = 8
OMEGA_UNIT = 10.0
HEATMAP_GAIN = 10.0


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "dispnet"
    n_objects: int = 1
    channels: int = 32
    T0: int = 4
    regress_angular_velocity: bool = True
    image_size: int = 64
    transition_width: int = 64
    readout_width: int = 64

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if not 1 <= self.n_objects <= 3:
            raise ConfigError(f"n_objects must be 1..3, got {self.n_objects}")
        pools = math.log2(self.image_size / STATE_EXTENT) if self.image_size > 0 else -1
        if pools != int(pools) or not 0 <= pools <= 4:
            raise ConfigError(
                f"image_size must be {STATE_EXTENT} * 2^k with k <= 4, got {self.image_size}"
            )

    @property
    def pools(self):
        return int(math.log2(self.image_size // STATE_EXTENT))

    @property
    def input_frames(self):
        return self.T0 + (1 if self.variant == "interpnet" else 0)

    @property
    def p_size(self):
        return 5 if self.variant == "probnet" else 2

    @property
    def flat_size(self):
        return STATE_EXTENT * STATE_EXTENT * self.channels

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, d):
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class NetState:
    s: gc.Tensor  # (B, n, H', W', C)
    p: gc.Tensor  # (B, n, q)


# ----------------------------------------------------------- parameters


def parameter_shapes(config):
    """Ordered name -> shape map; the single source of the architecture."""
    C, n = config.channels, config.n_objects
    shapes = {}
    cin = 3 * config.input_frames
    for k, cout in enumerate(ENCODER_WIDTHS + (C * n,)):
        shapes[f"enc{k}.w"] = (3, 3, cin, cout)
        shapes[f"enc{k}.b"] = (cout,)
        cin = cout
    hid = config.transition_width
    trans_in = 2 * C if n > 1 else C
    shapes["trans0.w"] = (3, 3, trans_in, hid)
    shapes["trans0.b"] = (hid,)
    shapes["trans1.w"] = (3, 3, hid, C)
    shapes["trans1.b"] = (C,)
    F, q = config.flat_size, config.p_size
    if config.variant == "posnet":
        aug = STATE_EXTENT * STATE_EXTENT * (C + 2)
        shapes["read0.w"] = (aug, config.readout_width)
        shapes["read0.b"] = (config.readout_width,)
        shapes["read1.w"] = (config.readout_width, 2)
        shapes["read1.b"] = (2,)
    else:
        shapes["p0.w"] = (3, 3, ENCODER_WIDTHS[0], n)
        shapes["p0.b"] = (n,)
        if q > 2:
            shapes["p0aux.w"] = (F, q - 2)
            shapes["p0aux.b"] = (q - 2,)
        shapes["dp.w"] = (F, q)
        shapes["dp.b"] = (q,)
    if config.regress_angular_velocity:
        shapes["omega.w"] = (F, 3)
        shapes["omega.b"] = (3,)
    if config.variant == "interpnet":
        shapes["final.w"] = (config.flat_size, 2)
        shapes["final.b"] = (2,)
    return shapes


def parameter_count(config):
    """Closed-form parameter count (see docs/architecture.md)."""
    C, n, T = config.channels, config.n_objects, config.input_frames
    H, R, F = config.transition_width, config.readout_width, config.flat_size
    enc = (27 * T * 16 + 16) + (9 * 16 * 32 + 32) + (9 * 32 * 32 + 32) + (9 * 32 * C * n + C * n)
    trans = 9 * (2 * C if n > 1 else C) * H + H + 9 * H * C + C
    if config.variant == "posnet":
        head = 64 * (C + 2) * R + R + 2 * R + 2
    else:
        q = config.p_size
        head = (144 * n + n) + (F * q + q) + ((F + 1) * (q - 2) if q > 2 else 0)
    omega = 3 * F + 3 if config.regress_angular_velocity else 0
    final = 2 * F + 2 if config.variant == "interpnet" else 0
    return enc + trans + head + omega + final


def init_params(config, seed=0):
    """He-style Gaussian initialisation; position heads start at the image centre."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".b"):
            data = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[:-1]))
            data = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)
        params[name] = gc.Tensor(data, requires_grad=True, name=name)
    # Increments start small; heatmaps start flat so p_0 starts at the centre.
    for name in ("p0.w", "dp.w", "final.w", "read1.w"):
        if name in params:
            params[name].data *= 0.01
    return params


# ---------------------------------------------------------------- layers


def head_affine(params, prefix, x, config):
    """Affine head whose first two outputs are positions in pixels.

    Positions are regressed in image-normalised units, ``centre + half * u``,
    so a unit weight change moves a prediction by a fixed fraction of the frame.
    """
    u = gc.affine(x, params[prefix + ".w"], params[prefix + ".b"])
    half = config.image_size / 2.0
    scale = np.ones(u.shape[-1])
    scale[:2] = half
    offset = np.zeros(u.shape[-1])
    offset[:2] = half
    return u * scale + offset


def soft_argmax(params, prefix, feat):
    """Per-object pixel position as the softmax-weighted mean of pixel centres.

    ``feat`` is the full-resolution first encoder block ``(B, H, W, 16)``; a
    3x3 convolution scores every pixel for each object. Returns ``(B, n, 2)``.
    """
    logits = gc.conv2d(feat, params[prefix + ".w"], params[prefix + ".b"]) * HEATMAP_GAIN
    b, h, w, n = logits.shape
    z = gc.transpose(gc.reshape(logits, (b, h * w, n)), (0, 2, 1))
    # Subtracting the (constant) row maximum leaves the softmax unchanged.
    e = gc.exp(z - z.data.max(axis=-1, keepdims=True))
    weights = e / e.sum(axis=-1, keepdims=True)
    xs, ys = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5, indexing="xy")
    coords = np.stack([xs.reshape(-1), ys.reshape(-1)], axis=-1)
    return gc.matmul(weights, gc.Tensor(coords))


def _flat(s):
    return gc.reshape(s, s.shape[:-3] + (-1,))


def prepare_frames(frames, config):
    """``(B, frames, H, W, 3)`` uint8 or float -> centred ``(B, H, W, 3 * frames)``."""
    x = np.asarray(frames)
    if x.ndim == 4:
        x = x[None]
    b, f, h, w, c = x.shape
    if f != config.input_frames or h != config.image_size or w != config.image_size or c != 3:
        raise ShapeError(
            f"expected (B, {config.input_frames}, {config.image_size}, "
            f"{config.image_size}, 3) frames, got {x.shape}"
        )
    x = x.astype(np.float64) / 255.0 - 0.5
    return x.transpose(0, 2, 3, 1, 4).reshape(b, h, w, f * c)


def encode_features(params, x, config, return_first=False):
    """Encoder CNN: ``(B, H, W, 3F)`` -> ``(B, 8, 8, C * n_objects)``.

    With ``return_first`` also returns the full-resolution first block output.
    """
    h = gc.as_tensor(x)
    first = None
    for k in range(4):
        h = gc.relu(gc.conv2d(h, params[f"enc{k}.w"], params[f"enc{k}.b"]))
        if k == 0:
            first = h
        if k < config.pools:
            h = gc.avg_pool2(h)
    return (h, first) if return_first else h


def split_objects(features, config):
    """``(B, H', W', n*C)`` -> ``(B, n, H', W', C)`` by contiguous channel blocks."""
    b, hh, ww, _ = features.shape
    s = gc.reshape(features, (b, hh, ww, config.n_objects, config.channels))
    return gc.transpose(s, (0, 3, 1, 2, 4))


def aug_xy(s):
    """Append normalised x and y pixel-coordinate channels spanning [-1, 1]."""
    hh, ww = s.shape[-3:-1]
    ys = np.linspace(-1.0, 1.0, hh)
    xs = np.linspace(-1.0, 1.0, ww)
    grid = np.stack(np.meshgrid(xs, ys, indexing="xy"), axis=-1)
    grid = np.broadcast_to(grid, s.shape[:-3] + (hh, ww, 2)).copy()
    return gc.concat([s, gc.Tensor(grid)], axis=-1)


def readout_direct(params, s, config):
    h = gc.relu(gc.affine(_flat(aug_xy(s)), params["read0.w"], params["read0.b"]))
    return head_affine(params, "read1", h, config)


def encode(params, frames, config, return_first=False):
    """Observed frames -> initial :class:`NetState` ``h_0``."""
    x = prepare_frames(frames, config)
    features, first = encode_features(params, x, config, return_first=True)
    s = split_objects(features, config)
    if config.variant == "posnet":
        p = readout_direct(params, s, config)
    else:
        p = soft_argmax(params, "p0", first)
        if config.p_size > 2:
            aux = gc.affine(_flat(s), params["p0aux.w"], params["p0aux.b"])
            p = gc.concat([p, aux], axis=-1)
    state = NetState(s, p)
    return (state, first) if return_first else state


def _others(s, n):
    """Sum of the other objects' tensors, accumulated in index order."""
    if n == 1:
        return None
    parts = [s[:, i] for i in range(n)]
    out = []
    for f in range(n):
        acc = None
        for i in range(n):
            if i != f:
                acc = parts[i] if acc is None else acc + parts[i]
        out.append(acc)
    return gc.stack(out, axis=1)


def phi_s(params, s, others=None):
    x = s if others is None else gc.concat([s, others], axis=-1)
    h = gc.relu(gc.conv2d(x, params["trans0.w"], params["trans0.b"]))
    return gc.conv2d(h, params["trans1.w"], params["trans1.b"])


def transition_incremental(params, state, config):
    s_next = phi_s(params, state.s)
    p_next = state.p + gc.affine(_flat(state.s), params["dp.w"], params["dp.b"])
    return NetState(s_next, p_next)


def transition_direct(params, state, config):
    s_next = phi_s(params, state.s)
    return NetState(s_next, readout_direct(params, s_next, config))


def transition_multi(params, state, config):
    """Shared ``phi_s`` on (own tensor, sum of the others) for every object."""
    n = state.s.shape[1]
    s_next = phi_s(params, state.s, _others(state.s, n))
    if config.variant == "posnet":
        return NetState(s_next, readout_direct(params, s_next, config))
    p_next = state.p + gc.affine(_flat(state.s), params["dp.w"], params["dp.b"])
    return NetState(s_next, p_next)


def transition(params, state, config):
    if config.n_objects > 1:
        return transition_multi(params, state, config)
    if config.variant == "posnet":
        return transition_direct(params, state, config)
    return transition_incremental(params, state, config)


def decode(state, config):
    """Position (deterministic) or ``(mu, sigma)`` (probabilistic) per object."""
    if config.variant != "probnet":
        return {"position": state.p}
    p = state.p
    mu = p[..., 0:2]
    lam1 = gc.scaled_sigmoid(p[..., 2])
    lam2 = gc.scaled_sigmoid(p[..., 3])
    sigma = gc.rotation_covariance(lam1, lam2, p[..., 4])
    return {"position": mu, "mu": mu, "sigma": sigma}


def regress_angular_velocity(params, s):
    """Affine readout of flattened ``s``, in units of ``OMEGA_UNIT`` rad/s."""
    return gc.affine(_flat(s), params["omega.w"], params["omega.b"]) * OMEGA_UNIT


def rollout(params, frames, config, T, final_frame=None):
    """Encode once, transition ``T`` times and decode after every transition.

    Returns ``(steps, extra)``: ``steps[k]`` holds the decode of ``h_{k+1}``
    (plus ``omega`` when enabled); ``extra`` holds the ``h_0`` decodes.
    """
    if T < 1:
        raise ConfigError("rollout horizon must be at least 1")
    frames = np.asarray(frames)
    if frames.ndim == 4:
        frames = frames[None]
    if config.variant == "interpnet":
        if final_frame is None:
            raise ShapeError("interpnet needs the final frame")
        final = np.asarray(final_frame)
        if final.ndim == 3:
            final = final[None]
        frames = np.concatenate([frames, final[:, None]], axis=1)
    state, first = encode(params, frames, config, return_first=True)
    extra = {"initial": decode(state, config)["position"]}
    if config.variant == "interpnet":
        # Read from h_0 so the state itself must carry the final-frame position.
        extra["final"] = state.p[..., 0:2] + gc.affine(
            _flat(state.s), params["final.w"], params["final.b"])
    steps = []
    for _ in range(T):
        state = transition(params, state, config)
        out = decode(state, config)
        if config.regress_angular_velocity:
            out["omega"] = regress_angular_velocity(params, state.s)
        steps.append(out)
    return steps, extra
