"""Decoder-only transformer in plain numpy with exact analytic gradients.

Pre-norm residual blocks, learned positional embeddings, tanh-GELU, and a
token embedding tied to the output head. Everything runs in float64 so the
analytic backward pass can be held to a 1e-4 relative error against central
finite differences; speed is a non-goal at this scale.

Tensor layout is batch-first: activations are [B, T, d_model], attention
internals [B, n_heads, T, head_dim]. Single-sequence entry points wrap a
batch of one.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .hashing import hash64

LN_EPS = 1e-5
INIT_SCALE = 0.02
_GELU_K = 0.7978845608028654  # sqrt(2/pi)
_GELU_C = 0.044715
_NEG_INF = -1e30  # large finite value; keeps softmax backward NaN-free


class InvalidConfig(ValueError):
    pass


class InvalidArguments(ValueError):
    pass


class SequenceTooLong(ValueError):
    pass


class IndexOutOfRange(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class AllMasked(ValueError):
    """Loss requested over a mask with no active positions."""


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 4
    n_heads: int = 4
    d_model: int = 128
    d_ff: int = 512
    context_len: int = 256
    vocab_size: int = 5
    seed: int = 0

    def __post_init__(self):
        positive = (self.n_layers, self.n_heads, self.d_model, self.d_ff,
                    self.context_len, self.vocab_size)
        if any(int(v) <= 0 for v in positive):
            raise InvalidConfig("all dimensions must be positive")
        if self.d_model % self.n_heads != 0:
            raise InvalidConfig("d_model must be divisible by n_heads")
        if self.vocab_size < 5:
            raise InvalidConfig("vocab_size must cover the special tokens")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


def param_names(config: ModelConfig) -> list[str]:
    """Tensor names in fixed declaration order; checkpoints, optimizer state
    and gradient dicts all follow this order."""
    names = ["tok_emb", "pos_emb"]
    for i in range(config.n_layers):
        p = f"layers.{i}."
        names += [p + "ln1.g", p + "ln1.b",
                  p + "attn.wq", p + "attn.wk", p + "attn.wv", p + "attn.wo",
                  p + "ln2.g", p + "ln2.b",
                  p + "ff.w1", p + "ff.b1", p + "ff.w2", p + "ff.b2"]
    names += ["ln_f.g", "ln_f.b"]
    return names


def _shapes(config: ModelConfig) -> dict[str, tuple]:
    d, f = config.d_model, config.d_ff
    shapes = {"tok_emb": (config.vocab_size, d),
              "pos_emb": (config.context_len, d)}
    for i in range(config.n_layers):
        p = f"layers.{i}."
        shapes.update({p + "ln1.g": (d,), p + "ln1.b": (d,),
                       p + "attn.wq": (d, d), p + "attn.wk": (d, d),
                       p + "attn.wv": (d, d), p + "attn.wo": (d, d),
                       p + "ln2.g": (d,), p + "ln2.b": (d,),
                       p + "ff.w1": (d, f), p + "ff.b1": (f,),
                       p + "ff.w2": (f, d), p + "ff.b2": (d,)})
    shapes.update({"ln_f.g": (d,), "ln_f.b": (d,)})
    return shapes


@dataclass
class Parameters:
    """Model weights keyed by name, plus the config they were shaped for.
    The token embedding doubles as the output head (weight tying)."""

    config: ModelConfig
    tensors: dict[str, np.ndarray]

    def validate(self) -> None:
        expected = _shapes(self.config)
        if list(self.tensors) != list(expected):
            raise InvalidConfig("tensor set does not match config")
        for name, arr in self.tensors.items():
            if arr.shape != expected[name] or arr.dtype != np.float64:
                raise InvalidConfig(f"bad tensor {name}: {arr.shape} {arr.dtype}")
            if not np.all(np.isfinite(arr)):
                raise InvalidConfig(f"non-finite values in {name}")

    def copy(self) -> "Parameters":
        return Parameters(self.config,
                          {k: v.copy() for k, v in self.tensors.items()})

    def n_params(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]


def init_params(config: ModelConfig) -> Parameters:
    """Fresh weights: normal(0, 0.02) matrices, layer norms at gain 1 /
    bias 0, zero feed-forward biases. Fully determined by config.seed."""
    rng = np.random.Generator(np.random.PCG64(hash64(config.seed, "init")))
    tensors = {}
    for name, shape in _shapes(config).items():
        if name.endswith((".g",)):
            tensors[name] = np.ones(shape)
        elif name.endswith((".b", ".b1", ".b2")) or ".ff.b" in name:
            tensors[name] = np.zeros(shape)
        else:
            tensors[name] = rng.normal(0.0, INIT_SCALE, shape)
    return Parameters(config, tensors)


def expand_embeddings(params: Parameters, n_new: int, noise_scale: float,
                      seed: int) -> Parameters:
    """Grow the (tied) embedding by n_new rows, each initialized to the
    column-wise mean of the existing rows plus normal(0, noise_scale) noise.
    Existing rows are carried over bit-exactly."""
    if n_new < 1:
        raise InvalidArguments("n_new must be >= 1")
    if noise_scale < 0:
        raise InvalidArguments("noise_scale must be >= 0")
    rng = np.random.Generator(np.random.PCG64(hash64(seed, "expand")))
    old = params["tok_emb"]
    mean = old.mean(axis=0)
    new_rows = mean[None, :] + rng.normal(0.0, noise_scale,
                                          (n_new, old.shape[1]))
    tensors = {k: v.copy() for k, v in params.tensors.items()}
    tensors["tok_emb"] = np.concatenate([old, new_rows], axis=0)
    config = dataclasses.replace(params.config,
                                 vocab_size=params.config.vocab_size + n_new)
    return Parameters(config, tensors)


def _gelu(x):
    return 0.5 * x * (1.0 + np.tanh(_GELU_K * (x + _GELU_C * x ** 3)))


def _gelu_grad(x):
    t = np.tanh(_GELU_K * (x + _GELU_C * x ** 3))
    du = _GELU_K * (1.0 + 3.0 * _GELU_C * x ** 2)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * du


def _ln_forward(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return g * xhat + b, xhat, inv


def _ln_backward(dy, g, xhat, inv):
    axes = tuple(range(dy.ndim - 1))
    dg = np.sum(dy * xhat, axis=axes)
    db = np.sum(dy, axis=axes)
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = np.mean(dxhat * xhat, axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dg, db


def _split_heads(x, n_heads):
    b, t, d = x.shape
    return x.reshape(b, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, t, hd = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * hd)


def _validate_tokens(config: ModelConfig, tokens: np.ndarray) -> None:
    if tokens.shape[-1] == 0:
        raise SequenceTooLong("empty token sequence")
    if tokens.shape[-1] > config.context_len:
        raise SequenceTooLong(
            f"sequence length {tokens.shape[-1]} exceeds context "
            f"{config.context_len}")
    if tokens.min() < 0 or tokens.max() >= config.vocab_size:
        raise IndexOutOfRange("token index outside vocabulary")


def _forward_batch(params: Parameters, config: ModelConfig,
                   tokens: np.ndarray, need_cache: bool):
    """Causal forward over tokens [B, T] -> logits [B, T, V]. With
    need_cache, also returns the activations the backward pass consumes."""
    _validate_tokens(config, tokens)
    t_len = tokens.shape[1]
    emb = params["tok_emb"]
    x = emb[tokens] + params["pos_emb"][:t_len][None, :, :]
    causal = np.tril(np.ones((t_len, t_len), dtype=bool))
    scale = 1.0 / np.sqrt(config.head_dim)
    layers = []
    for i in range(config.n_layers):
        p = f"layers.{i}."
        h1, xhat1, inv1 = _ln_forward(x, params[p + "ln1.g"], params[p + "ln1.b"])
        q = _split_heads(h1 @ params[p + "attn.wq"], config.n_heads)
        k = _split_heads(h1 @ params[p + "attn.wk"], config.n_heads)
        v = _split_heads(h1 @ params[p + "attn.wv"], config.n_heads)
        scores = np.matmul(q, k.transpose(0, 1, 3, 2)) * scale
        scores = np.where(causal[None, None], scores, _NEG_INF)
        scores -= scores.max(axis=-1, keepdims=True)
        attn = np.exp(scores)
        attn /= attn.sum(axis=-1, keepdims=True)
        ctx = _merge_heads(np.matmul(attn, v))
        x_mid = x + ctx @ params[p + "attn.wo"]
        h2, xhat2, inv2 = _ln_forward(x_mid, params[p + "ln2.g"],
                                      params[p + "ln2.b"])
        f1 = h2 @ params[p + "ff.w1"] + params[p + "ff.b1"]
        g1 = _gelu(f1)
        x_out = x_mid + g1 @ params[p + "ff.w2"] + params[p + "ff.b2"]
        if need_cache:
            layers.append(dict(x=x, h1=h1, xhat1=xhat1, inv1=inv1, q=q, k=k,
                               v=v, attn=attn, ctx=ctx, x_mid=x_mid, h2=h2,
                               xhat2=xhat2, inv2=inv2, f1=f1, g1=g1))
        x = x_out
    xf, xhatf, invf = _ln_forward(x, params["ln_f.g"], params["ln_f.b"])
    logits = xf @ emb.T
    if not need_cache:
        return logits, None
    cache = dict(tokens=tokens, t_len=t_len, layers=layers, x_last=x,
                 xhatf=xhatf, invf=invf, xf=xf, scale=scale)
    return logits, cache


def forward(params: Parameters, config: ModelConfig, tokens) -> np.ndarray:
    """Logits [len, vocab_size] for one token sequence; position i sees only
    tokens at positions <= i."""
    arr = np.asarray(tokens, dtype=np.int64).reshape(1, -1)
    logits, _ = _forward_batch(params, config, arr, need_cache=False)
    return logits[0]


def _raw_loss(logits, targets, mask):
    """Per-example masked-mean cross entropy, averaged over examples, in
    whatever float dtype the logits carry. Duplicating an example changes
    nothing because weighting is per example, not per token."""
    b, t, _ = logits.shape
    counts = mask.sum(axis=1)
    if np.any(counts == 0):
        raise AllMasked("an example has no unmasked positions")
    m = logits.max(axis=-1, keepdims=True)
    z = np.exp(logits - m)
    zsum = z.sum(axis=-1, keepdims=True)
    logp = logits - m - np.log(zsum)
    rows = np.arange(b)[:, None], np.arange(t)[None, :]
    nll = -logp[rows[0], rows[1], targets]
    return ((nll * mask).sum(axis=1) / counts).mean()


def _masked_ce(logits, targets, mask):
    """(loss, dlogits) for the batch objective of :func:`_raw_loss`."""
    b, t, _ = logits.shape
    counts = mask.sum(axis=1)
    loss = float(_raw_loss(logits, targets, mask))
    m = logits.max(axis=-1, keepdims=True)
    z = np.exp(logits - m)
    zsum = z.sum(axis=-1, keepdims=True)
    rows = np.arange(b)[:, None], np.arange(t)[None, :]
    weights = mask / counts[:, None] / b
    dlogits = z / zsum
    dlogits[rows[0], rows[1], targets] -= 1.0
    dlogits *= weights[:, :, None]
    return loss, dlogits


def sft_loss(logits, targets, mask) -> float:
    """Cross entropy averaged over the positions where mask is 1."""
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    mask_arr = np.asarray(mask, dtype=np.float64)
    if not (logits.shape[0] == targets.shape[0] == mask_arr.shape[0]):
        raise LengthMismatch("logits, targets and mask lengths differ")
    if targets.size and (targets.min() < 0 or targets.max() >= logits.shape[-1]):
        raise IndexOutOfRange("target index outside vocabulary")
    loss, _ = _masked_ce(logits[None], targets[None], mask_arr[None])
    return loss


def _backward_batch(params: Parameters, config: ModelConfig, cache,
                    dlogits) -> dict[str, np.ndarray]:
    grads = {name: np.zeros(shape) for name, shape in _shapes(config).items()}
    emb = params["tok_emb"]
    xf = cache["xf"]
    # Tied head: logits = xf @ emb.T contributes to both xf and the embedding.
    dxf = dlogits @ emb
    grads["tok_emb"] += np.einsum("btv,btd->vd", dlogits, xf)
    dx, dg, db = _ln_backward(dxf, params["ln_f.g"], cache["xhatf"],
                              cache["invf"])
    grads["ln_f.g"] += dg
    grads["ln_f.b"] += db
    scale = cache["scale"]
    for i in reversed(range(config.n_layers)):
        p = f"layers.{i}."
        c = cache["layers"][i]
        # feed-forward block
        dg1 = dx @ params[p + "ff.w2"].T
        grads[p + "ff.w2"] += np.einsum("btf,btd->fd", c["g1"], dx)
        grads[p + "ff.b2"] += dx.sum(axis=(0, 1))
        df1 = dg1 * _gelu_grad(c["f1"])
        dh2 = df1 @ params[p + "ff.w1"].T
        grads[p + "ff.w1"] += np.einsum("btd,btf->df", c["h2"], df1)
        grads[p + "ff.b1"] += df1.sum(axis=(0, 1))
        dx_mid, dg, db = _ln_backward(dh2, params[p + "ln2.g"], c["xhat2"],
                                      c["inv2"])
        grads[p + "ln2.g"] += dg
        grads[p + "ln2.b"] += db
        dx_mid += dx  # residual
        # attention block
        dctx = dx_mid @ params[p + "attn.wo"].T
        grads[p + "attn.wo"] += np.einsum("btd,bte->de", c["ctx"], dx_mid)
        dctx_h = _split_heads(dctx, config.n_heads)
        dattn = np.matmul(dctx_h, c["v"].transpose(0, 1, 3, 2))
        dv = np.matmul(c["attn"].transpose(0, 1, 3, 2), dctx_h)
        inner = (dattn * c["attn"]).sum(axis=-1, keepdims=True)
        dscores = (dattn - inner) * c["attn"] * scale
        dq = np.matmul(dscores, c["k"])
        dk = np.matmul(dscores.transpose(0, 1, 3, 2), c["q"])
        dq_m, dk_m, dv_m = (_merge_heads(a) for a in (dq, dk, dv))
        dh1 = (dq_m @ params[p + "attn.wq"].T
               + dk_m @ params[p + "attn.wk"].T
               + dv_m @ params[p + "attn.wv"].T)
        grads[p + "attn.wq"] += np.einsum("btd,bte->de", c["h1"], dq_m)
        grads[p + "attn.wk"] += np.einsum("btd,bte->de", c["h1"], dk_m)
        grads[p + "attn.wv"] += np.einsum("btd,bte->de", c["h1"], dv_m)
        dx_in, dg, db = _ln_backward(dh1, params[p + "ln1.g"], c["xhat1"],
                                     c["inv1"])
        grads[p + "ln1.g"] += dg
        grads[p + "ln1.b"] += db
        dx = dx_in + dx_mid  # residual
    tokens = cache["tokens"]
    t_len = cache["t_len"]
    grads["pos_emb"][:t_len] += dx.sum(axis=0)
    flat = dx.reshape(-1, config.d_model)
    np.add.at(grads["tok_emb"], tokens.reshape(-1), flat)
    return grads


def loss_and_grads(params: Parameters, config: ModelConfig, tokens,
                   targets, mask):
    """Batched loss plus exact gradients for every parameter tensor. tokens,
    targets and mask are [B, T]; mask selects the positions that count."""
    tokens = np.asarray(tokens, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    mask_arr = np.asarray(mask, dtype=np.float64)
    if not (tokens.shape == targets.shape == mask_arr.shape):
        raise LengthMismatch("tokens, targets and mask shapes differ")
    if targets.min() < 0 or targets.max() >= config.vocab_size:
        raise IndexOutOfRange("target index outside vocabulary")
    logits, cache = _forward_batch(params, config, tokens, need_cache=True)
    loss, dlogits = _masked_ce(logits, targets, mask_arr)
    grads = _backward_batch(params, config, cache, dlogits)
    return loss, grads


def backward(params: Parameters, config: ModelConfig, tokens, targets,
             mask) -> dict[str, np.ndarray]:
    """Gradients of sft_loss for a single sequence."""
    tokens = np.asarray(tokens, dtype=np.int64)[None]
    targets = np.asarray(targets, dtype=np.int64)[None]
    mask_arr = np.asarray(mask, dtype=np.float64)[None]
    _, grads = loss_and_grads(params, params.config if config is None
                              else config, tokens, targets, mask_arr)
    return grads


def max_rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Largest elementwise |a-b| / max(|a|, |b|, 1e-8)."""
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b) / denom))


def _check_batch(config: ModelConfig, seed: int):
    rng = np.random.Generator(np.random.PCG64(hash64(seed, "gradcheck")))
    b, t = 2, min(8, config.context_len)
    tokens = rng.integers(0, config.vocab_size, size=(b, t))
    targets = rng.integers(0, config.vocab_size, size=(b, t))
    mask = (rng.random((b, t)) < 0.6).astype(np.float64)
    mask[:, -1] = 1.0  # every example keeps at least one active position
    return tokens, targets, mask


def numeric_grads(params: Parameters, config: ModelConfig, tokens, targets,
                  mask, epsilon: float = 1e-5) -> dict[str, np.ndarray]:
    """Central-difference gradients; perturbs every entry of every tensor,
    so only run this on tiny models.

    Two sources of error are kept below the comparison threshold: losses
    are evaluated in extended precision (longdouble) so near-zero gradient
    entries do not drown in float64 cancellation noise, and the stencil is
    the fourth-order central one (+-epsilon, +-2 epsilon) so truncation
    error stays negligible even at epsilon 1e-4."""
    tokens = np.asarray(tokens, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    mask_arr = np.asarray(mask, dtype=np.longdouble)
    work = Parameters(config, {k: v.astype(np.longdouble)
                               for k, v in params.tensors.items()})

    def loss_at() -> np.longdouble:
        logits, _ = _forward_batch(work, config, tokens, need_cache=False)
        return _raw_loss(logits, targets, mask_arr)

    out = {}
    for name in param_names(config):
        grad = np.zeros(params[name].shape)
        flat_p = work.tensors[name].reshape(-1)
        flat_g = grad.reshape(-1)
        for j in range(flat_p.size):
            orig = flat_p[j]
            samples = []
            for h in (2.0, 1.0, -1.0, -2.0):
                flat_p[j] = orig + h * epsilon
                samples.append(loss_at())
            flat_p[j] = orig
            l2p, l1p, l1m, l2m = samples
            flat_g[j] = float(
                (-l2p + 8.0 * l1p - 8.0 * l1m + l2m) / (12.0 * epsilon))
        out[name] = grad
    return out


def grad_check(config: ModelConfig, seed: int = 0,
               epsilon: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients
    over every parameter tensor, on one random masked batch."""
    params = init_params(config)
    tokens, targets, mask = _check_batch(config, seed)
    _, analytic = loss_and_grads(params, config, tokens, targets, mask)
    numeric = numeric_grads(params, config, tokens, targets, mask, epsilon)
    return max(max_rel_error(analytic[name], numeric[name])
               for name in param_names(config))
