"""The fusion network: a shared two-stage convolutional extractor, one dense
branch head per training domain, a domain classifier whose softmax output
gates the branches, and a linear activity head on the fused feature.

Forward runs the identical path in train and infer mode (fusion always uses
the predicted gate weights); train mode additionally retains the caches the
hand-written backward pass needs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .data import FormatError
from .primitives import (
    conv_backward,
    conv_forward,
    dense_backward,
    dense_forward,
    maxpool_backward,
    maxpool_forward,
    relu_backward,
    relu_forward,
    softmax,
    softmax_backward,
)

WEIGHT_FLOOR = 1e-7  # gate weights are clamped here, then renormalized


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int
    timesteps: int
    num_domains: int
    num_classes: int
    conv1_filters: int = 16
    conv1_kernel: int = 6
    conv2_filters: int = 32
    conv2_kernel: int = 9
    pool_width: int = 2
    branch_dim: int = 128
    domain_hidden: int = 64

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 1:
                raise ValueError(f"{f.name} must be >= 1")
        if self.num_domains < 2:
            raise ValueError("need at least 2 domains")
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        for name, value in zip(("t1", "t1 pooled", "t2", "t2 pooled"), self.stage_lengths()):
            if value < 1:
                raise ValueError(
                    f"config leaves no timesteps after stage '{name}' "
                    f"(T={self.timesteps}, kernels {self.conv1_kernel}/{self.conv2_kernel}, "
                    f"pool {self.pool_width})"
                )

    def stage_lengths(self):
        t1 = self.timesteps - self.conv1_kernel + 1
        t1p = t1 // self.pool_width
        t2 = t1p - self.conv2_kernel + 1
        t2p = t2 // self.pool_width
        return t1, t1p, t2, t2p

    @property
    def feature_dim(self) -> int:
        """Length of the flattened shared feature."""
        return self.conv2_filters * self.in_channels * self.stage_lengths()[3]


@dataclass(eq=False)
class ModelParams:
    """All learnable arrays. Field order is the serialization order."""

    conv1_w: np.ndarray  # (f1, 1, k1)
    conv1_b: np.ndarray  # (f1,)
    conv2_w: np.ndarray  # (f2, f1, k2)
    conv2_b: np.ndarray  # (f2,)
    branch_w: np.ndarray  # (num_domains, feature_dim, branch_dim)
    branch_b: np.ndarray  # (num_domains, branch_dim)
    dom_w1: np.ndarray  # (feature_dim, domain_hidden)
    dom_b1: np.ndarray  # (domain_hidden,)
    dom_w2: np.ndarray  # (domain_hidden, num_domains)
    dom_b2: np.ndarray  # (num_domains,)
    cls_w: np.ndarray  # (branch_dim, num_classes)
    cls_b: np.ndarray  # (num_classes,)

    def arrays(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    def copy(self) -> "ModelParams":
        return ModelParams(*(v.copy() for _, v in self.arrays()))

    def zeros_like(self) -> "ModelParams":
        return ModelParams(*(np.zeros_like(v) for _, v in self.arrays()))

    def num_params(self) -> int:
        return sum(v.size for _, v in self.arrays())


def expected_shapes(cfg: ModelConfig) -> dict:
    d_e = cfg.feature_dim
    return {
        "conv1_w": (cfg.conv1_filters, 1, cfg.conv1_kernel),
        "conv1_b": (cfg.conv1_filters,),
        "conv2_w": (cfg.conv2_filters, cfg.conv1_filters, cfg.conv2_kernel),
        "conv2_b": (cfg.conv2_filters,),
        "branch_w": (cfg.num_domains, d_e, cfg.branch_dim),
        "branch_b": (cfg.num_domains, cfg.branch_dim),
        "dom_w1": (d_e, cfg.domain_hidden),
        "dom_b1": (cfg.domain_hidden,),
        "dom_w2": (cfg.domain_hidden, cfg.num_domains),
        "dom_b2": (cfg.num_domains,),
        "cls_w": (cfg.branch_dim, cfg.num_classes),
        "cls_b": (cfg.num_classes,),
    }


def init_params(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    """Seeded Glorot-uniform weights (limit sqrt(6/(fan_in+fan_out))), zero
    biases."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6D6F64]))

    def glorot(shape, fan_in, fan_out):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, size=shape)

    d_e = cfg.feature_dim
    return ModelParams(
        conv1_w=glorot((cfg.conv1_filters, 1, cfg.conv1_kernel), cfg.conv1_kernel, cfg.conv1_filters * cfg.conv1_kernel),
        conv1_b=np.zeros(cfg.conv1_filters),
        conv2_w=glorot(
            (cfg.conv2_filters, cfg.conv1_filters, cfg.conv2_kernel),
            cfg.conv1_filters * cfg.conv2_kernel,
            cfg.conv2_filters * cfg.conv2_kernel,
        ),
        conv2_b=np.zeros(cfg.conv2_filters),
        branch_w=glorot((cfg.num_domains, d_e, cfg.branch_dim), d_e, cfg.branch_dim),
        branch_b=np.zeros((cfg.num_domains, cfg.branch_dim)),
        dom_w1=glorot((d_e, cfg.domain_hidden), d_e, cfg.domain_hidden),
        dom_b1=np.zeros(cfg.domain_hidden),
        dom_w2=glorot((cfg.domain_hidden, cfg.num_domains), cfg.domain_hidden, cfg.num_domains),
        dom_b2=np.zeros(cfg.num_domains),
        cls_w=glorot((cfg.branch_dim, cfg.num_classes), cfg.branch_dim, cfg.num_classes),
        cls_b=np.zeros(cfg.num_classes),
    )


def check_params(cfg: ModelConfig, params: ModelParams):
    for name, shape in expected_shapes(cfg).items():
        have = getattr(params, name).shape
        if have != shape:
            raise ValueError(f"parameter {name} has shape {have}, config expects {shape}")


@dataclass(eq=False)
class ForwardTrace:
    """Outputs of one forward pass plus (in train mode) the caches the
    backward pass consumes. Gate weights lie on the simplex after clamping."""

    probs: np.ndarray  # (n, num_classes)
    class_logits: np.ndarray
    fused: np.ndarray  # (n, branch_dim)
    weights: np.ndarray  # (n, num_domains), clamped + renormalized
    domain_logits: np.ndarray  # (n, num_domains)
    branch_feats: np.ndarray  # (num_domains, n, branch_dim)
    shared: np.ndarray  # (n, feature_dim)
    mode: str = "infer"
    # backward caches (train mode only)
    x4: np.ndarray | None = None
    conv1_pre: np.ndarray | None = None
    pool1_idx: np.ndarray | None = None
    pool1_out: np.ndarray | None = None
    conv2_pre: np.ndarray | None = None
    pool2_idx: np.ndarray | None = None
    branch_pre: np.ndarray | None = None
    dom_hidden_pre: np.ndarray | None = None
    weights_raw: np.ndarray | None = None
    weight_override: bool = False


def extract(x, params: ModelParams, cfg: ModelConfig):
    """Shared feature path: conv->relu->pool, twice, then flatten.
    Returns (feature, caches)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (cfg.in_channels, cfg.timesteps):
        raise ValueError(
            f"input shape {x.shape} does not match (n, {cfg.in_channels}, {cfg.timesteps})"
        )
    x4 = x[:, None, :, :]
    a1 = conv_forward(x4, params.conv1_w, params.conv1_b)
    r1 = relu_forward(a1)
    p1, i1 = maxpool_forward(r1, cfg.pool_width)
    a2 = conv_forward(p1, params.conv2_w, params.conv2_b)
    r2 = relu_forward(a2)
    p2, i2 = maxpool_forward(r2, cfg.pool_width)
    e = p2.reshape(len(x), -1)
    return e, (x4, a1, i1, p1, a2, i2)


def branch(e, k: int, params: ModelParams):
    """Feature head of training domain k: dense + relu. Heads share nothing."""
    if not 0 <= k < params.branch_w.shape[0]:
        raise ValueError(f"branch index {k} out of range")
    return relu_forward(dense_forward(e, params.branch_w[k], params.branch_b[k]))

def domain_weights(e, params: ModelParams):
    """Gate head: two dense layers -> softmax -> clamp at WEIGHT_FLOOR ->
    renormalize. Returns (logits, weights)."""
    h = relu_forward(dense_forward(e, params.dom_w1, params.dom_b1))
    logits = dense_forward(h, params.dom_w2, params.dom_b2)
    w_raw = softmax(logits)
    w = np.maximum(w_raw, WEIGHT_FLOOR)
    w = w / w.sum(axis=1, keepdims=True)
    return logits, w


def fuse(branch_feats, weights):
    """Convex combination of branch features: z_n = sum_k w_nk * h_kn.
    Accepts a single sample ((K, d) features, (K,) weights) or a batch
    ((K, n, d) features, (n, K) weights)."""
    branch_feats = np.asarray(branch_feats, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    single = weights.ndim == 1
    if single:
        weights = weights[None]
        branch_feats = branch_feats[:, None, :]
    if weights.shape[1] != branch_feats.shape[0]:
        raise ValueError(
            f"{weights.shape[1]} weights for {branch_feats.shape[0]} branches"
        )
    z = np.einsum("nk,knf->nf", weights, branch_feats)
    return z[0] if single else z


def forward(x, params: ModelParams, cfg: ModelConfig, mode: str = "infer",
            weight_override=None) -> ForwardTrace:
    """Run the whole network. ``weight_override`` replaces the predicted gate
    weights with fixed ones (e.g. one-hot true-domain weights); the override
    is treated as a constant in the backward pass."""
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown mode {mode!r}")
    e, (x4, a1, i1, p1, a2, i2) = extract(x, params, cfg)
    n = len(e)

    branch_pre = np.einsum("nd,kdf->knf", e, params.branch_w, optimize=True) + params.branch_b[:, None, :]
    h = relu_forward(branch_pre)

    dom_pre = dense_forward(e, params.dom_w1, params.dom_b1)
    dom_h = relu_forward(dom_pre)
    dom_logits = dense_forward(dom_h, params.dom_w2, params.dom_b2)
    w_raw = softmax(dom_logits)
    w = np.maximum(w_raw, WEIGHT_FLOOR)
    w = w / w.sum(axis=1, keepdims=True)

    if weight_override is not None:
        w_used = np.asarray(weight_override, dtype=np.float64)
        if w_used.shape != (n, cfg.num_domains):
            raise ValueError(f"weight override shape {w_used.shape} != {(n, cfg.num_domains)}")
    else:
        w_used = w

    z = np.einsum("nk,knf->nf", w_used, h)
    logits = dense_forward(z, params.cls_w, params.cls_b)
    probs = softmax(logits)

    trace = ForwardTrace(
        probs=probs, class_logits=logits, fused=z, weights=w_used,
        domain_logits=dom_logits, branch_feats=h, shared=e, mode=mode,
    )
    if mode == "train":
        trace.x4 = x4
        trace.conv1_pre = a1
        trace.pool1_idx = i1
        trace.pool1_out = p1
        trace.conv2_pre = a2
        trace.pool2_idx = i2
        trace.branch_pre = branch_pre
        trace.dom_hidden_pre = dom_pre
        trace.weights_raw = w_raw
        trace.weight_override = weight_override is not None
    return trace


def backward(trace: ForwardTrace, params: ModelParams, cfg: ModelConfig,
             d_probs=None, d_domain_logits=None, d_branch_feats=None) -> ModelParams:
    """Exact reverse pass from upstream loss gradients to parameter gradients.

    ``d_probs`` is the loss gradient w.r.t. class probabilities,
    ``d_domain_logits`` w.r.t. the gate logits (the domain-classifier loss
    path), ``d_branch_feats`` w.r.t. the per-branch features (the alignment
    loss path). Any of them may be None (zero).
    """
    if trace.mode != "train":
        raise ValueError("backward needs a trace produced in train mode")
    grads = params.zeros_like()
    n = len(trace.shared)

    # activity head
    if d_probs is not None:
        d_logits = softmax_backward(np.asarray(d_probs, dtype=np.float64), trace.probs)
    else:
        d_logits = np.zeros_like(trace.class_logits)
    dz, grads.cls_w[...], grads.cls_b[...] = dense_backward(d_logits, trace.fused, params.cls_w)

    # fusion: z = sum_k w_k h_k
    dh = np.einsum("nk,nf->knf", trace.weights, dz)
    if d_branch_feats is not None:
        dh = dh + d_branch_feats

    # gate weights (skipped when the forward used a constant override)
    d_dom_logits = np.zeros_like(trace.domain_logits)
    if not trace.weight_override:
        dw = np.einsum("nf,knf->nk", dz, trace.branch_feats)
        w_cl = np.maximum(trace.weights_raw, WEIGHT_FLOOR)
        s = w_cl.sum(axis=1, keepdims=True)
        dw_cl = (dw - np.sum(dw * trace.weights, axis=1, keepdims=True)) / s
        dw_raw = np.where(trace.weights_raw > WEIGHT_FLOOR, dw_cl, 0.0)
        d_dom_logits += softmax_backward(dw_raw, trace.weights_raw)
    if d_domain_logits is not None:
        d_dom_logits += d_domain_logits

    # domain classifier
    dom_h = relu_forward(trace.dom_hidden_pre)
    d_dom_h, grads.dom_w2[...], grads.dom_b2[...] = dense_backward(d_dom_logits, dom_h, params.dom_w2)
    d_dom_pre = relu_backward(d_dom_h, trace.dom_hidden_pre)
    de, grads.dom_w1[...], grads.dom_b1[...] = dense_backward(d_dom_pre, trace.shared, params.dom_w1)

    # branches
    d_branch_pre = relu_backward(dh, trace.branch_pre)
    grads.branch_w[...] = np.einsum("nd,knf->kdf", trace.shared, d_branch_pre, optimize=True)
    grads.branch_b[...] = d_branch_pre.sum(axis=1)
    de += np.einsum("knf,kdf->nd", d_branch_pre, params.branch_w, optimize=True)

    # shared extractor
    t1, t1p, t2, t2p = cfg.stage_lengths()
    dp2 = de.reshape(n, cfg.conv2_filters, cfg.in_channels, t2p)
    dr2 = maxpool_backward(dp2, trace.pool2_idx, cfg.pool_width, t2)
    da2 = relu_backward(dr2, trace.conv2_pre)
    dp1, grads.conv2_w[...], grads.conv2_b[...] = conv_backward(da2, trace.pool1_out, params.conv2_w)
    dr1 = maxpool_backward(dp1, trace.pool1_idx, cfg.pool_width, t1)
    da1 = relu_backward(dr1, trace.conv1_pre)
    _, grads.conv1_w[...], grads.conv1_b[...] = conv_backward(da1, trace.x4, params.conv1_w)
    return grads


def predict(params: ModelParams, cfg: ModelConfig, values, batch_size: int = 256):
    """Class predictions for a stack of windows (n, channels, timesteps).

    Returns (predictions, class probabilities, gate weights); argmax ties go
    to the lowest class index.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 2:
        values = values[None]
    preds, probs, weights = [], [], []
    for start in range(0, len(values), batch_size):
        tr = forward(values[start:start + batch_size], params, cfg, mode="infer")
        preds.append(tr.probs.argmax(axis=1))
        probs.append(tr.probs)
        weights.append(tr.weights)
    return np.concatenate(preds), np.concatenate(probs), np.concatenate(weights)


# ---------------------------------------------------------------------------
# parameter file ("DGM1"): magic | version u32 | 11 config u32 fields |
# float64 little-endian blocks in ModelParams field order
# ---------------------------------------------------------------------------

PARAMS_MAGIC = b"DGM1"
PARAMS_VERSION = 1
_CFG_FIELDS = (
    "in_channels", "timesteps", "num_domains", "num_classes",
    "conv1_filters", "conv1_kernel", "conv2_filters", "conv2_kernel",
    "pool_width", "branch_dim", "domain_hidden",
)
_PHEAD = struct.Struct("<4sI" + "I" * len(_CFG_FIELDS))


def save_params(path, cfg: ModelConfig, params: ModelParams) -> Path:
    check_params(cfg, params)
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_PHEAD.pack(PARAMS_MAGIC, PARAMS_VERSION, *(getattr(cfg, f) for f in _CFG_FIELDS)))
        for _, arr in params.arrays():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return path


def load_params(path, expected: ModelConfig | None = None):
    """Read (config, params) back; bit-exact round trip. Raises FormatError on
    corrupt files and on config mismatch against ``expected``."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _PHEAD.size:
        raise FormatError(f"{path}: too short for a parameter file header")
    head = _PHEAD.unpack_from(raw)
    if head[0] != PARAMS_MAGIC:
        raise FormatError(f"{path}: bad magic {head[0]!r}")
    if head[1] != PARAMS_VERSION:
        raise FormatError(f"{path}: unsupported version {head[1]}")
    cfg = ModelConfig(**dict(zip(_CFG_FIELDS, head[2:])))
    if expected is not None and cfg != expected:
        raise FormatError(f"{path}: stored config {cfg} does not match expected {expected}")
    shapes = expected_shapes(cfg)
    need = _PHEAD.size + 8 * sum(int(np.prod(s)) for s in shapes.values())
    if len(raw) != need:
        raise FormatError(f"{path}: expected {need} bytes, found {len(raw)} (truncated or corrupt)")
    offset = _PHEAD.size
    arrays = []
    for name, shape in shapes.items():
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        arrays.append(arr)
        offset += 8 * count
    params = ModelParams(*arrays)
    if not all(np.all(np.isfinite(a)) for _, a in params.arrays()):
        raise FormatError(f"{path}: non-finite parameters")
    return cfg, params
