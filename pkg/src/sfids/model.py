"""RI-1DCNN backbone: dense feature expansion, reshape to a multichannel 1-D
signal, a five-layer residual conv stack, and projection/classification heads.

Parameters are a plain ``dict[str, np.ndarray]``. Gradients are computed by
hand-written reverse passes over the cached activations of ``forward``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from sfids import nn

ModelParams = dict[str, np.ndarray]


@dataclass
class ModelConfig:
    input_dim: int
    num_classes: int
    expand_dim: int = 256
    channels: int = 16
    length: int = 16
    conv_channels: tuple[int, ...] = (32, 32, 32, 32, 64)
    kernel_size: int = 3
    dropout_rate: float = 0.3
    repr_dim: int = 64
    proj_dim: int = 32
    seed: int = 0
    dtype: str = "float32"
    head_input: str = "r"  # classification head reads the normalized embedding ("z") or r ("r")

    def __post_init__(self):
        self.conv_channels = tuple(int(c) for c in self.conv_channels)
        self.validate()

    def validate(self) -> None:
        dims = dict(
            input_dim=self.input_dim, num_classes=self.num_classes, expand_dim=self.expand_dim,
            channels=self.channels, length=self.length, kernel_size=self.kernel_size,
            repr_dim=self.repr_dim, proj_dim=self.proj_dim,
        )
        for k, v in dims.items():
            if v < 1:
                raise ValueError(f"{k} must be >= 1, got {v}")
        if self.channels * self.length != self.expand_dim:
            raise ValueError(
                f"channels*length = {self.channels * self.length} != expand_dim = {self.expand_dim}"
            )
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if len(self.conv_channels) != 5 or min(self.conv_channels) < 1:
            raise ValueError("conv_channels must list 5 positive widths")
        if self.conv_channels[0] != self.conv_channels[2]:
            raise ValueError("residual skip needs conv_channels[0] == conv_channels[2]")
        if self.repr_dim != self.conv_channels[4]:
            raise ValueError("repr_dim must equal the last conv width (global average pooling)")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        if self.head_input not in ("z", "r"):
            raise ValueError("head_input must be 'z' or 'r'")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    c = cfg.conv_channels
    ins = (cfg.channels, c[0], c[1], c[2], c[3])
    shapes: dict[str, tuple[int, ...]] = {
        "expand.w": (cfg.input_dim, cfg.expand_dim),
        "expand.b": (cfg.expand_dim,),
    }
    for i in range(5):
        shapes[f"conv{i + 1}.w"] = (cfg.kernel_size, ins[i], c[i])
        shapes[f"conv{i + 1}.b"] = (c[i],)
    shapes.update({
        "proj1.w": (cfg.repr_dim, cfg.repr_dim),
        "proj1.b": (cfg.repr_dim,),
        "proj2.w": (cfg.repr_dim, cfg.proj_dim),
        "proj2.b": (cfg.proj_dim,),
        "cls.w": (cfg.proj_dim if cfg.head_input == "z" else cfg.repr_dim, cfg.num_classes),
        "cls.b": (cfg.num_classes,),
    })
    return shapes


# layers followed by a ReLU get the He bound, linear outputs the LeCun one
_RELU_FED = {"conv1.w", "conv2.w", "conv3.w", "conv4.w", "conv5.w", "proj1.w"}


def init(cfg: ModelConfig) -> ModelParams:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    params: ModelParams = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape, dtype=cfg.dtype)
            continue
        fan_in = int(np.prod(shape[:-1]))
        bound = np.sqrt((6.0 if name in _RELU_FED else 3.0) / fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape).astype(cfg.dtype)
    return params


@dataclass
class ForwardOutput:
    """Batched forward results; row i belongs to input row i."""

    r: np.ndarray
    z: np.ndarray
    logits: np.ndarray
    probs: np.ndarray
    cache: dict = field(default_factory=dict, repr=False)


def forward(
    params: ModelParams,
    cfg: ModelConfig,
    x: np.ndarray,
    mode: str = "eval",
    dropout_seed: int | np.random.Generator | None = None,
    force_dropout: bool = False,
    keep_cache: bool = False,
) -> ForwardOutput:
    """Run the backbone on a batch.

    Dropout is active when ``mode == "train"`` or ``force_dropout`` is set
    (MC inference); its masks are drawn from ``dropout_seed``.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    x = np.asarray(x, dtype=cfg.dtype)
    if x.ndim != 2 or x.shape[1] != cfg.input_dim:
        raise ValueError(f"expected batch of shape (N, {cfg.input_dim}), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    drop = mode == "train" or force_dropout
    rng = None
    if drop:
        rng = dropout_seed if isinstance(dropout_seed, np.random.Generator) else np.random.default_rng(dropout_seed)
    p = params
    n = x.shape[0]

    h0 = nn.dense_forward(x, p["expand.w"], p["expand.b"])
    a0 = h0.reshape(n, cfg.channels, cfg.length).transpose(0, 2, 1)
    p1 = nn.conv1d_forward(a0, p["conv1.w"], p["conv1.b"])
    a1 = nn.relu_forward(p1)
    p2 = nn.conv1d_forward(a1, p["conv2.w"], p["conv2.b"])
    m2 = nn.dropout_mask(rng, p2.shape, cfg.dropout_rate, cfg.dtype) if drop else None
    a2 = nn.relu_forward(p2) if m2 is None else nn.relu_forward(p2) * m2
    p3 = nn.conv1d_forward(a2, p["conv3.w"], p["conv3.b"])
    a3 = nn.relu_forward(p3)
    s4 = a3 + a1  # residual: block-1 output joins the block-4 input
    p4 = nn.conv1d_forward(s4, p["conv4.w"], p["conv4.b"])
    m4 = nn.dropout_mask(rng, p4.shape, cfg.dropout_rate, cfg.dtype) if drop else None
    a4 = nn.relu_forward(p4) if m4 is None else nn.relu_forward(p4) * m4
    p5 = nn.conv1d_forward(a4, p["conv5.w"], p["conv5.b"])
    a5 = nn.relu_forward(p5)
    r = nn.avgpool_forward(a5)

    q_pre = nn.dense_forward(r, p["proj1.w"], p["proj1.b"])
    q = nn.relu_forward(q_pre)
    v = nn.dense_forward(q, p["proj2.w"], p["proj2.b"])
    z, vnorm = nn.l2normalize_forward(v)
    head_in = z if cfg.head_input == "z" else r
    logits = nn.dense_forward(head_in, p["cls.w"], p["cls.b"])
    probs = nn.softmax(logits)

    cache = {}
    if keep_cache:
        cache = dict(x=x, a0=a0, p1=p1, a1=a1, p2=p2, m2=m2, a2=a2, p3=p3, s4=s4,
                     p4=p4, m4=m4, a4=a4, p5=p5, r=r, q_pre=q_pre, q=q, v=v, vnorm=vnorm,
                     head_in=head_in)
    return ForwardOutput(r=r, z=z, logits=logits, probs=probs, cache=cache)


def backward(
    params: ModelParams,
    cfg: ModelConfig,
    out: ForwardOutput,
    grad_z: np.ndarray,
    grad_logits: np.ndarray,
) -> ModelParams:
    """Gradients of the loss w.r.t. every parameter.

    ``out`` must come from ``forward(..., keep_cache=True)`` on the same
    batch, so the same dropout masks are replayed.
    """
    c = out.cache
    if not c:
        raise ValueError("forward output carries no cache; call forward(..., keep_cache=True)")
    n = c["x"].shape[0]
    if grad_z.shape != out.z.shape or grad_logits.shape != out.logits.shape:
        raise ValueError(
            f"gradient shapes {grad_z.shape}/{grad_logits.shape} do not match "
            f"forward outputs {out.z.shape}/{out.logits.shape}"
        )
    p = params
    g: ModelParams = {}
    grad_z = np.asarray(grad_z, dtype=cfg.dtype)
    grad_logits = np.asarray(grad_logits, dtype=cfg.dtype)

    dhead, g["cls.w"], g["cls.b"] = nn.dense_backward(grad_logits, c["head_in"], p["cls.w"])
    if cfg.head_input == "z":
        grad_z = grad_z + dhead
        dr = np.zeros_like(c["r"])
    else:
        dr = dhead
    dv = nn.l2normalize_backward(grad_z, c["v"], c["vnorm"])
    dq, g["proj2.w"], g["proj2.b"] = nn.dense_backward(dv, c["q"], p["proj2.w"])
    dq_pre = nn.relu_backward(dq, c["q_pre"])
    dr2, g["proj1.w"], g["proj1.b"] = nn.dense_backward(dq_pre, c["r"], p["proj1.w"])
    dr = dr + dr2

    da5 = nn.avgpool_backward(dr, cfg.length)
    dp5 = nn.relu_backward(da5, c["p5"])
    da4, g["conv5.w"], g["conv5.b"] = nn.conv1d_backward(dp5, c["a4"], p["conv5.w"])
    if c["m4"] is not None:
        da4 = da4 * c["m4"]
    dp4 = nn.relu_backward(da4, c["p4"])
    ds4, g["conv4.w"], g["conv4.b"] = nn.conv1d_backward(dp4, c["s4"], p["conv4.w"])
    dp3 = nn.relu_backward(ds4, c["p3"])
    da2, g["conv3.w"], g["conv3.b"] = nn.conv1d_backward(dp3, c["a2"], p["conv3.w"])
    if c["m2"] is not None:
        da2 = da2 * c["m2"]
    dp2 = nn.relu_backward(da2, c["p2"])
    da1, g["conv2.w"], g["conv2.b"] = nn.conv1d_backward(dp2, c["a1"], p["conv2.w"])
    da1 = da1 + ds4  # skip path
    dp1 = nn.relu_backward(da1, c["p1"])
    da0, g["conv1.w"], g["conv1.b"] = nn.conv1d_backward(dp1, c["a0"], p["conv1.w"])
    dh0 = da0.transpose(0, 2, 1).reshape(n, cfg.expand_dim)
    _, g["expand.w"], g["expand.b"] = nn.dense_backward(dh0, c["x"], p["expand.w"])
    return g


# ------------------------------------------------------------ MC inference
@dataclass
class MCPrediction:
    """Per-sample mean class probabilities and per-class std over T passes."""

    mean_probs: np.ndarray  # (N, M)
    std: np.ndarray  # (N, M)
    T: int


def mc_moments(passes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and population std over the leading (pass) axis."""
    passes = np.asarray(passes, dtype=np.float64)
    # shift by the first pass: identical passes give exactly zero spread
    dev = passes - passes[0]
    mdev = dev.mean(axis=0)
    return passes[0] + mdev, np.sqrt(((dev - mdev) ** 2).mean(axis=0))


def mc_predict(
    params: ModelParams,
    cfg: ModelConfig,
    x: np.ndarray,
    T: int,
    seed: int,
    chunk_size: int = 2048,
) -> MCPrediction:
    """T stochastic passes with dropout forced on.

    Pass ``t`` of chunk ``j`` draws masks from ``SeedSequence([seed, t, j])``
    so results are reproducible and passes are order-independent.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    x = np.asarray(x)
    means, stds = [], []
    for j, start in enumerate(range(0, max(len(x), 1), chunk_size)):
        xb = x[start : start + chunk_size]
        if len(xb) == 0:
            break
        passes = np.stack([
            forward(params, cfg, xb, mode="eval", force_dropout=True,
                    dropout_seed=np.random.default_rng([seed, t, j])).probs.astype(np.float64)
            for t in range(T)
        ])
        mu, sd = mc_moments(passes)
        means.append(mu)
        stds.append(sd)
    m = cfg.num_classes
    if not means:
        return MCPrediction(np.zeros((0, m)), np.zeros((0, m)), T)
    return MCPrediction(np.concatenate(means), np.concatenate(stds), T)


def predict(params: ModelParams, cfg: ModelConfig, x: np.ndarray, chunk_size: int = 4096) -> np.ndarray:
    """Deterministic eval-mode class probabilities."""
    out = [forward(params, cfg, x[i : i + chunk_size]).probs for i in range(0, len(x), chunk_size)]
    return np.concatenate(out) if out else np.zeros((0, cfg.num_classes))


# ------------------------------------------------------------------ Adam
@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


def adam_init(params: ModelParams) -> AdamState:
    return AdamState({k: np.zeros_like(a) for k, a in params.items()},
                     {k: np.zeros_like(a) for k, a in params.items()})


def sgd_step(
    params: ModelParams,
    grads: ModelParams,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[ModelParams, AdamState]:
    """One Adam update, applied in place."""
    for name, gr in grads.items():
        if gr.shape != params[name].shape:
            raise ValueError(f"gradient for {name} has shape {gr.shape}, expected {params[name].shape}")
        if not np.all(np.isfinite(gr)):
            raise FloatingPointError(f"non-finite gradient in {name}")
    state.t += 1
    c1 = 1 - beta1**state.t
    c2 = 1 - beta2**state.t
    for name, gr in grads.items():
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1 - beta1) * gr
        v *= beta2
        v += (1 - beta2) * gr * gr
        params[name] -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(params[name].dtype)
    return params, state


# ------------------------------------------------------------- checkpoints
# Layout (all integers little-endian):
#   8 bytes  magic  b"SFIDSCK1"
#   u32      header length H, then H bytes of UTF-8 JSON:
#            {"model_config": {...}, "tensors": [names...], "adam_t": int|null, "extra": {...}}
#   per tensor, in header order: u32 ndim, ndim x u32 dims, prod(dims) x float32 LE
# Optimizer moments are stored as tensors named "adam.m.<param>" / "adam.v.<param>".

MAGIC = b"SFIDSCK1"


def save_checkpoint(path, cfg: ModelConfig, params: ModelParams, state: AdamState | None = None,
                    extra: dict | None = None) -> None:
    tensors = dict(params)
    if state is not None:
        tensors.update({f"adam.m.{k}": a for k, a in state.m.items()})
        tensors.update({f"adam.v.{k}": a for k, a in state.v.items()})
    header = json.dumps({
        "model_config": cfg.to_dict(),
        "tensors": list(tensors),
        "adam_t": None if state is None else state.t,
        "extra": extra or {},
    }).encode()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for name in tensors:
            a = np.asarray(tensors[name])
            fh.write(struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape))
            fh.write(a.astype("<f4").tobytes())


def load_checkpoint(path) -> tuple[ModelConfig, ModelParams, AdamState | None, dict]:
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen))
        cfg = ModelConfig.from_dict(header["model_config"])
        tensors = {}
        for name in header["tensors"]:
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            count = int(np.prod(shape)) if ndim else 1
            tensors[name] = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(shape).astype(cfg.dtype)
    params = {k: a for k, a in tensors.items() if not k.startswith("adam.")}
    state = None
    if header["adam_t"] is not None:
        state = AdamState({k: tensors[f"adam.m.{k}"] for k in params},
                          {k: tensors[f"adam.v.{k}"] for k in params}, header["adam_t"])
    return cfg, params, state, header["extra"]
