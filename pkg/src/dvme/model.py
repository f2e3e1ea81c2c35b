"""Fusion head over frozen multi-source embeddings, plus linear probes.

The head projects each source to proj_dim, concatenates, treats the result as
a sequence of scalar tokens, runs single-head softmax attention over them
(skipped in the ablation variant), then layernorm -> projection -> relu ->
dropout -> linear classifier. Parameters are plain dicts of named arrays;
every forward returns a cache consumed by exactly one backward.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ParameterError, ShapeMismatchError, StaleCacheError
from .numerics import ops

DEFAULT_SOURCES = (("simclr", 2048), ("swav", 2048), ("dino", 1536))


@dataclass(frozen=True)
class DvmeConfig:
    num_classes: int
    source_dims: tuple = DEFAULT_SOURCES
    proj_dim: int = 512
    dropout_p: float = 0.2
    use_attention: bool = True
    attention_heads: int = 1
    qkv_bias: bool = True

    def __post_init__(self):
        object.__setattr__(
            self, "source_dims", tuple((str(n), int(d)) for n, d in self.source_dims)
        )
        if self.num_classes < 2:
            raise ParameterError("num_classes must be at least 2")
        if self.proj_dim < 1:
            raise ParameterError("proj_dim must be positive")
        if not self.source_dims:
            raise ParameterError("at least one source is required")
        names = [n for n, _ in self.source_dims]
        if len(set(names)) != len(names):
            raise ParameterError("source names must be unique")
        if any(d < 1 for _, d in self.source_dims):
            raise ParameterError("source dims must be positive")
        if not 0 <= self.dropout_p < 1:
            raise ParameterError("dropout_p must lie in [0, 1)")
        # Tokens carry a single scalar feature, so only one head can divide it.
        if self.use_attention and self.attention_heads != 1:
            raise ParameterError("attention_heads must be 1 for scalar tokens")

    @property
    def source_names(self):
        return tuple(n for n, _ in self.source_dims)

    @property
    def token_count(self):
        return len(self.source_dims) * self.proj_dim

    @property
    def meta_dim(self):
        return self.token_count

    def to_dict(self):
        return {
            "num_classes": self.num_classes,
            "source_dims": [[n, d] for n, d in self.source_dims],
            "proj_dim": self.proj_dim,
            "dropout_p": self.dropout_p,
            "use_attention": self.use_attention,
            "attention_heads": self.attention_heads,
            "qkv_bias": self.qkv_bias,
        }

    @classmethod
    def from_dict(cls, data):
        fields = dict(data)
        fields["source_dims"] = tuple((n, d) for n, d in fields["source_dims"])
        return cls(**fields)


def param_shapes(config):
    """Canonical (name -> shape) layout; iteration order is the layout order."""
    meta = config.meta_dim
    shapes = {}
    for name, dim in config.source_dims:
        shapes[f"proj_{name}_w"] = (dim, config.proj_dim)
        shapes[f"proj_{name}_b"] = (config.proj_dim,)
    if config.use_attention:
        shapes["attn_qkv_w"] = (1, 3)
        if config.qkv_bias:
            shapes["attn_qkv_b"] = (3,)
        shapes["attn_out_w"] = (1, 1)
        shapes["attn_out_b"] = (1,)
    shapes["norm_gamma"] = (meta,)
    shapes["norm_beta"] = (meta,)
    shapes["head_w"] = (meta, config.proj_dim)
    shapes["head_b"] = (config.proj_dim,)
    shapes["cls_w"] = (config.proj_dim, config.num_classes)
    shapes["cls_b"] = (config.num_classes,)
    return shapes


def count_params(config):
    """Exact number of trainable scalars."""
    return sum(int(np.prod(shape)) for shape in param_shapes(config).values())


def count_probe_params(dim, num_classes):
    return dim * num_classes + num_classes


def init_dvme(config, seed, dtype=np.float32):
    """He-uniform weights (a = sqrt(6 / fan_in)), zero biases, unit gamma."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith("_w"):
            bound = np.sqrt(6.0 / shape[0])
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
        elif name == "norm_gamma":
            params[name] = np.ones(shape, dtype=dtype)
        else:
            params[name] = np.zeros(shape, dtype=dtype)
    return params


def init_probe(dim, num_classes, seed, dtype=np.float32):
    rng = np.random.default_rng(seed)
    bound = np.sqrt(6.0 / dim)
    return {
        "w": rng.uniform(-bound, bound, size=(dim, num_classes)).astype(dtype),
        "b": np.zeros(num_classes, dtype=dtype),
    }


def _param_ids(params):
    return tuple((name, id(value)) for name, value in sorted(params.items()))


@dataclass
class DvmeCache:
    param_ids: tuple
    inputs: dict
    tokens: np.ndarray
    qkv: tuple  # (q, k, v) or None
    ctx: np.ndarray
    ln_cache: tuple
    ln_out: np.ndarray
    head_pre: np.ndarray
    drop_scale: np.ndarray
    cls_in: np.ndarray


def _check_inputs(config, inputs, dtype):
    batch = None
    for name, dim in config.source_dims:
        if name not in inputs:
            raise ParameterError(f"missing source {name!r}")
        x = inputs[name]
        if x.ndim != 2 or x.shape[1] != dim:
            raise ShapeMismatchError(
                f"source {name!r} expects (*, {dim}), got {x.shape}"
            )
        if batch is None:
            batch = x.shape[0]
        elif x.shape[0] != batch:
            raise ShapeMismatchError("sources disagree on batch size")
        if x.dtype != dtype:
            raise ParameterError(f"source {name!r} dtype {x.dtype} != params {dtype}")
        ops.require_finite(f"input[{name}]", x)


def dvme_forward(params, config, inputs, train=False, rng=None):
    """Returns (logits, cache); eval mode is a pure function of its inputs."""
    dtype = params["cls_w"].dtype
    _check_inputs(config, inputs, dtype)

    projected = [
        ops.linear_forward(inputs[name], params[f"proj_{name}_w"], params[f"proj_{name}_b"])
        for name, _ in config.source_dims
    ]
    tokens = np.ascontiguousarray(np.concatenate(projected, axis=1))

    if config.use_attention:
        q, k, v = _project_qkv(params, config, tokens)
        ctx = ops.attention_scalar_tokens(q, k, v)
        flat = ctx * params["attn_out_w"][0, 0] + params["attn_out_b"][0]
        qkv = (q, k, v)
    else:
        ctx = tokens
        flat = tokens
        qkv = None

    ln_out, ln_cache = ops.layernorm_forward(flat, params["norm_gamma"], params["norm_beta"])
    head_pre = ops.linear_forward(ln_out, params["head_w"], params["head_b"])
    head_act = ops.relu(head_pre)
    cls_in, drop_scale = ops.dropout_forward(head_act, config.dropout_p, train, rng)
    logits = ops.linear_forward(cls_in, params["cls_w"], params["cls_b"])

    cache = DvmeCache(
        param_ids=_param_ids(params),
        inputs=inputs,
        tokens=tokens,
        qkv=qkv,
        ctx=ctx,
        ln_cache=ln_cache,
        ln_out=ln_out,
        head_pre=head_pre,
        drop_scale=drop_scale,
        cls_in=cls_in,
    )
    return logits, cache


def _project_qkv(params, config, tokens):
    w = params["attn_qkv_w"]
    if config.qkv_bias:
        b = params["attn_qkv_b"]
    else:
        b = np.zeros(3, dtype=w.dtype)
    q = np.ascontiguousarray(tokens * w[0, 0] + b[0])
    k = np.ascontiguousarray(tokens * w[0, 1] + b[1])
    v = np.ascontiguousarray(tokens * w[0, 2] + b[2])
    return q, k, v


def _weight_grad(x, dy):
    # Input gradients of frozen embeddings are never formed, only dW/db.
    dw = ops.matmul(np.ascontiguousarray(x.T), dy)
    return dw, dy.sum(axis=0)


def dvme_backward(params, config, cache, dlogits):
    """Exact reverse of dvme_forward; grads share the params layout."""
    if cache.param_ids != _param_ids(params):
        raise StaleCacheError("cache does not belong to these parameters")

    grads = {}
    dcls_in = ops.matmul(dlogits, np.ascontiguousarray(params["cls_w"].T))
    grads["cls_w"], grads["cls_b"] = _weight_grad(cache.cls_in, dlogits)
    dhead_act = ops.dropout_backward(cache.drop_scale, dcls_in)
    dhead_pre = ops.relu_backward(cache.head_pre, dhead_act)
    dln_out = ops.matmul(dhead_pre, np.ascontiguousarray(params["head_w"].T))
    grads["head_w"], grads["head_b"] = _weight_grad(cache.ln_out, dhead_pre)
    dflat, grads["norm_gamma"], grads["norm_beta"] = ops.layernorm_backward(
        cache.ln_cache, params["norm_gamma"], dln_out
    )

    if config.use_attention:
        w_out = params["attn_out_w"][0, 0]
        grads["attn_out_w"] = np.array([[(dflat * cache.ctx).sum()]], dtype=dflat.dtype)
        grads["attn_out_b"] = np.array([dflat.sum()], dtype=dflat.dtype)
        dctx = np.ascontiguousarray(dflat * w_out)
        q, k, v = cache.qkv
        dq, dk, dv = ops.attention_scalar_tokens_backward(q, k, v, dctx)
        w = params["attn_qkv_w"]
        grads["attn_qkv_w"] = np.array(
            [[(dq * cache.tokens).sum(), (dk * cache.tokens).sum(), (dv * cache.tokens).sum()]],
            dtype=dflat.dtype,
        )
        if config.qkv_bias:
            grads["attn_qkv_b"] = np.array(
                [dq.sum(), dk.sum(), dv.sum()], dtype=dflat.dtype
            )
        dtokens = dq * w[0, 0] + dk * w[0, 1] + dv * w[0, 2]
    else:
        dtokens = dflat

    offset = 0
    for name, _ in config.source_dims:
        dy = np.ascontiguousarray(dtokens[:, offset : offset + config.proj_dim])
        grads[f"proj_{name}_w"], grads[f"proj_{name}_b"] = _weight_grad(
            cache.inputs[name], dy
        )
        offset += config.proj_dim

    return grads


@dataclass(frozen=True)
class AttentionSummary:
    """Block-averaged attention mass: rows attend, columns are attended."""

    matrix: np.ndarray  # (num_sources, num_sources), rows sum to 1
    sample_count: int
    source_names: tuple


def attention_block_summary(params, config, inputs, batch_size=64):
    """Mean over samples of per-source-block average attention mass.

    For each sample the token-level attention matrix is reduced to one entry
    per (attending block, attended block) pair: the mean over the block's rows
    of the attention mass landing in the attended block.
    """
    if not config.use_attention:
        raise ParameterError("attention summary requires the attention variant")
    dtype = params["cls_w"].dtype
    _check_inputs(config, inputs, dtype)

    num_sources = len(config.source_dims)
    total = np.zeros((num_sources, num_sources), dtype=np.float64)
    n = next(iter(inputs.values())).shape[0]
    for start in range(0, n, batch_size):
        batch = {name: x[start : start + batch_size] for name, x in inputs.items()}
        projected = [
            ops.linear_forward(batch[name], params[f"proj_{name}_w"], params[f"proj_{name}_b"])
            for name, _ in config.source_dims
        ]
        tokens = np.ascontiguousarray(np.concatenate(projected, axis=1))
        q, k, _ = _project_qkv(params, config, tokens)
        sums = ops.attention_block_sums(q, k, num_sources)
        total += sums.sum(axis=0, dtype=np.float64)

    matrix = total / (n * config.proj_dim)
    return AttentionSummary(matrix=matrix, sample_count=n, source_names=config.source_names)


def probe_forward(params, x):
    return ops.linear_forward(x, params["w"], params["b"])


def probe_backward(params, x, dlogits):
    dw, db = _weight_grad(x, dlogits)
    return {"w": dw, "b": db}


class DvmeModel:
    """Trainable-model adapter for the fusion head."""

    def __init__(self, config):
        self.config = config

    def init_params(self, seed, dtype=np.float32):
        return init_dvme(self.config, seed, dtype=dtype)

    def loss_and_grads(self, params, inputs, labels, rng=None, train=True):
        logits, cache = dvme_forward(params, self.config, inputs, train=train, rng=rng)
        loss, probs = ops.cross_entropy(logits, labels)
        dlogits = ops.cross_entropy_backward(probs, labels)
        return loss, dvme_backward(params, self.config, cache, dlogits)

    def predict_proba(self, params, inputs):
        logits, _ = dvme_forward(params, self.config, inputs, train=False)
        return ops.softmax_rows(logits)


class ProbeModel:
    """Trainable-model adapter for a single-source linear probe."""

    def __init__(self, dim, num_classes):
        self.dim = dim
        self.num_classes = num_classes

    def init_params(self, seed, dtype=np.float32):
        return init_probe(self.dim, self.num_classes, seed, dtype=dtype)

    def loss_and_grads(self, params, x, labels, rng=None, train=True):
        logits = probe_forward(params, x)
        loss, probs = ops.cross_entropy(logits, labels)
        dlogits = ops.cross_entropy_backward(probs, labels)
        return loss, probe_backward(params, x, dlogits)

    def predict_proba(self, params, x):
        return ops.softmax_rows(probe_forward(params, x))
