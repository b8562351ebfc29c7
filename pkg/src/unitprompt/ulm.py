"""Causal Transformer over discrete units, with prompt-prefix support.

The backbone is a pre-layer-norm decoder: learned token + position
embeddings, multi-head causal self-attention, GELU feed-forward blocks,
and an untied output projection. Prompts enter in two ways, separately
or combined: as embedded rows prepended to the input sequence (they
occupy the positions before BOS), and as per-layer key/value prefixes
that carry no positional embedding. Every backbone tensor is flagged
frozen; gradients still flow through them so prompt parameters upstream
of the loss can train.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ModelError
from .quantizer import UnitSequence


@dataclass(frozen=True)
class ULMConfig:
    n_layers: int = 2
    n_heads: int = 4
    d_model: int = 64
    d_ffn: int = 256
    dropout_p: float = 0.1
    vocab_size: int = 101  # units plus BOS
    max_positions: int = 512

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ModelError(
                f"d_model not divisible by n_heads ({self.d_model} % {self.n_heads})"
            )
        if not 0.0 <= self.dropout_p < 1.0:
            raise ModelError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        for name in ("n_layers", "n_heads", "d_model", "d_ffn", "vocab_size", "max_positions"):
            if getattr(self, name) < 1:
                raise ModelError(f"{name} must be >= 1")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def bos_id(self) -> int:
        return self.vocab_size - 1


@dataclass
class LayerParams:
    ln1_g: Tensor
    ln1_b: Tensor
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    ln2_g: Tensor
    ln2_b: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class ULMParameters:
    config: ULMConfig
    tok_emb: Tensor
    pos_emb: Tensor
    layers: list[LayerParams]
    lnf_g: Tensor
    lnf_b: Tensor
    w_lm: Tensor
    b_lm: Tensor

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        """All backbone tensors in a fixed canonical order."""
        out = [("ulm.tok_emb", self.tok_emb), ("ulm.pos_emb", self.pos_emb)]
        for i, lp in enumerate(self.layers):
            for fname in ("ln1_g", "ln1_b", "wq", "bq", "wk", "bk", "wv", "bv",
                          "wo", "bo", "ln2_g", "ln2_b", "w1", "b1", "w2", "b2"):
                out.append((f"ulm.layer{i}.{fname}", getattr(lp, fname)))
        out += [("ulm.lnf_g", self.lnf_g), ("ulm.lnf_b", self.lnf_b),
                ("ulm.w_lm", self.w_lm), ("ulm.b_lm", self.b_lm)]
        return out


@dataclass
class ForwardOutput:
    """Final-layer hidden states (prefix + real positions) and next-unit
    logits at the real positions (BOS first, then each unit)."""

    hidden_states: Tensor
    next_unit_logits: Tensor
    input_prefix_len: int


def _frozen(rng, shape, scale, name, dtype):
    data = rng.uniform(-scale, scale, size=shape).astype(dtype)
    return Tensor(data, name=name, frozen=True)


def _const(shape, value, name, dtype):
    return Tensor(np.full(shape, value, dtype=dtype), name=name, frozen=True)


def init_backbone(cfg: ULMConfig, seed: int, dtype=np.float32) -> ULMParameters:
    """Deterministic backbone initialization.

    Embeddings draw from U(+-1/sqrt(d_model)), projections use Xavier
    uniform, biases start at zero, layer norms at scale 1 / shift 0.
    """
    rng = np.random.default_rng(seed)
    d, f, v = cfg.d_model, cfg.d_ffn, cfg.vocab_size
    emb_scale = 1.0 / math.sqrt(d)

    def xavier(fan_in, fan_out):
        return math.sqrt(6.0 / (fan_in + fan_out))

    tok = _frozen(rng, (v, d), emb_scale, "ulm.tok_emb", dtype)
    pos = _frozen(rng, (cfg.max_positions, d), emb_scale, "ulm.pos_emb", dtype)
    layers = []
    for i in range(cfg.n_layers):
        p = f"ulm.layer{i}."
        layers.append(LayerParams(
            ln1_g=_const((d,), 1.0, p + "ln1_g", dtype),
            ln1_b=_const((d,), 0.0, p + "ln1_b", dtype),
            wq=_frozen(rng, (d, d), xavier(d, d), p + "wq", dtype),
            bq=_const((d,), 0.0, p + "bq", dtype),
            wk=_frozen(rng, (d, d), xavier(d, d), p + "wk", dtype),
            bk=_const((d,), 0.0, p + "bk", dtype),
            wv=_frozen(rng, (d, d), xavier(d, d), p + "wv", dtype),
            bv=_const((d,), 0.0, p + "bv", dtype),
            wo=_frozen(rng, (d, d), xavier(d, d), p + "wo", dtype),
            bo=_const((d,), 0.0, p + "bo", dtype),
            ln2_g=_const((d,), 1.0, p + "ln2_g", dtype),
            ln2_b=_const((d,), 0.0, p + "ln2_b", dtype),
            w1=_frozen(rng, (d, f), xavier(d, f), p + "w1", dtype),
            b1=_const((f,), 0.0, p + "b1", dtype),
            w2=_frozen(rng, (f, d), xavier(f, d), p + "w2", dtype),
            b2=_const((d,), 0.0, p + "b2", dtype),
        ))
    lnf_g = _const((d,), 1.0, "ulm.lnf_g", dtype)
    lnf_b = _const((d,), 0.0, "ulm.lnf_b", dtype)
    w_lm = _frozen(rng, (d, v), xavier(d, v), "ulm.w_lm", dtype)
    b_lm = _const((v,), 0.0, "ulm.b_lm", dtype)
    return ULMParameters(cfg, tok, pos, layers, lnf_g, lnf_b, w_lm, b_lm)


def _causal_mask(stream_len: int, deep_len: int, dtype) -> np.ndarray:
    """Additive mask: every query sees all deep-prefix keys plus stream
    keys at or before its own index."""
    total = deep_len + stream_len
    mask = np.full((stream_len, total), -1e30, dtype=dtype)
    mask[:, :deep_len] = 0.0
    rows = np.arange(stream_len)[:, None]
    cols = np.arange(stream_len)[None, :]
    mask[:, deep_len:][cols <= rows] = 0.0
    return mask


def _split_heads(t: Tensor, n_heads: int) -> Tensor:
    b, s, d = t.shape
    return ad.swapaxes(t.reshape((b, s, n_heads, d // n_heads)), 1, 2)


def _merge_heads(t: Tensor) -> Tensor:
    b, h, s, dk = t.shape
    return ad.swapaxes(t, 1, 2).reshape((b, s, h * dk))


def forward_batch(token_batch: np.ndarray, params: ULMParameters, prompt=None,
                  train_mode: bool = False, seed: int = 0) -> ForwardOutput:
    """Vectorized forward over a (B, T) batch of equal-length unit rows.

    BOS is prepended internally. `prompt` is a PromptApplication (or None
    for the plain LM); its input prefix occupies the stream positions
    before BOS and its deep prefixes extend each layer's keys/values.
    """
    cfg = params.config
    token_batch = np.asarray(token_batch, dtype=np.int64)
    if token_batch.ndim != 2:
        raise ModelError("token batch must be 2-d (B, T)")
    if token_batch.max(initial=0) >= cfg.vocab_size or token_batch.min(initial=0) < 0:
        raise ModelError(
            f"token out of vocabulary: max={token_batch.max()}, vocab_size={cfg.vocab_size}"
        )
    b, t = token_batch.shape
    input_prefix = getattr(prompt, "input_prefix", None) if prompt is not None else None
    deep_k = getattr(prompt, "deep_k", None) if prompt is not None else None
    deep_v = getattr(prompt, "deep_v", None) if prompt is not None else None
    l_in = input_prefix.shape[0] if input_prefix is not None else 0
    l_deep = deep_k[0].shape[0] if deep_k else 0
    stream_len = l_in + 1 + t
    if stream_len > cfg.max_positions:
        raise ModelError(
            f"sequence overflow: prefix+BOS+units = {stream_len} > max_positions={cfg.max_positions}"
        )
    if deep_k and len(deep_k) != cfg.n_layers:
        raise ModelError(f"deep prefix has {len(deep_k)} layers, model has {cfg.n_layers}")

    dtype = params.tok_emb.dtype
    rng = np.random.default_rng(seed)
    toks = np.concatenate(
        [np.full((b, 1), cfg.bos_id, dtype=np.int64), token_batch], axis=1
    )
    x = ad.add(ad.embedding(params.tok_emb, toks),
               ad.embedding(params.pos_emb, np.arange(l_in, stream_len)))
    if l_in:
        prefix = ad.add(input_prefix, ad.embedding(params.pos_emb, np.arange(l_in)))
        x = ad.concat([ad.broadcast_to(prefix, (b, l_in, cfg.d_model)), x], axis=1)

    mask = _causal_mask(stream_len, l_deep, dtype)
    inv_sqrt_dk = 1.0 / math.sqrt(cfg.head_dim)
    drop = cfg.dropout_p if train_mode else 0.0

    for li, lp in enumerate(params.layers):
        h = ad.layer_norm(x, lp.ln1_g, lp.ln1_b)
        # scaling q (small) instead of the score matrix (large) saves a
        # full pass over the quadratic attention array
        q = _split_heads(ad.mul(ad.add(ad.matmul(h, lp.wq), lp.bq), inv_sqrt_dk), cfg.n_heads)
        k = _split_heads(ad.add(ad.matmul(h, lp.wk), lp.bk), cfg.n_heads)
        v = _split_heads(ad.add(ad.matmul(h, lp.wv), lp.bv), cfg.n_heads)
        if l_deep:
            pk = ad.swapaxes(deep_k[li].reshape((l_deep, cfg.n_heads, cfg.head_dim)), 0, 1)
            pv = ad.swapaxes(deep_v[li].reshape((l_deep, cfg.n_heads, cfg.head_dim)), 0, 1)
            k = ad.concat([ad.broadcast_to(pk, (b, cfg.n_heads, l_deep, cfg.head_dim)), k], axis=2)
            v = ad.concat([ad.broadcast_to(pv, (b, cfg.n_heads, l_deep, cfg.head_dim)), v], axis=2)
        attn = ad.softmax(ad.matmul(q, ad.swapaxes(k, 2, 3)), axis=-1, additive_mask=mask)
        ctx = _merge_heads(ad.matmul(attn, v))
        proj = ad.add(ad.matmul(ctx, lp.wo), lp.bo)
        if drop:
            proj = ad.dropout(proj, drop, rng)
        x = ad.add(x, proj)
        h2 = ad.layer_norm(x, lp.ln2_g, lp.ln2_b)
        ffn = ad.add(ad.matmul(ad.relu(ad.add(ad.matmul(h2, lp.w1), lp.b1)), lp.w2), lp.b2)
        if drop:
            ffn = ad.dropout(ffn, drop, rng)
        x = ad.add(x, ffn)

    hidden = ad.layer_norm(x, params.lnf_g, params.lnf_b)
    real = hidden[:, l_in:, :]
    logits = ad.add(ad.matmul(real, params.w_lm), params.b_lm)
    return ForwardOutput(hidden, logits, l_in)


def forward(tokens, params: ULMParameters, prompt=None, train_mode: bool = False,
            seed: int = 0) -> ForwardOutput:
    """Single-sequence forward; see forward_batch. Accepts a UnitSequence
    or a 1-d integer array and returns unbatched tensors."""
    units = tokens.units if isinstance(tokens, UnitSequence) else np.asarray(tokens)
    out = forward_batch(units[None, :], params, prompt=prompt,
                        train_mode=train_mode, seed=seed)
    return ForwardOutput(out.hidden_states[0], out.next_unit_logits[0],
                         out.input_prefix_len)


def backward(loss: Tensor) -> None:
    """Reverse-mode pass from a recorded scalar loss; gradients land on
    each visited tensor's .grad (frozen ones included; the trainer just
    never applies those)."""
    if loss._backward is None and not loss._prev:
        raise ModelError("backward without a recorded forward computation")
    loss.backward()


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    n_checked: int
    worst_name: str
    epsilon: float
    tolerance: float

    def summary(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (f"grad_check: {status} max_rel_err={self.max_rel_err:.3e} "
                f"(worst={self.worst_name}, n={self.n_checked}, eps={self.epsilon}, "
                f"tol={self.tolerance})")


def grad_check(cfg: ULMConfig | None = None, epsilon: float = 1e-5,
               tolerance: float = 1e-4, seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    Runs a tiny float64 model in eval mode (no dropout) on a random batch
    with a random prompt pool: every prompt and verbalizer entry is
    checked exhaustively, backbone tensors are spot-checked. Relative
    error is |a - n| / max(|a|, |n|, 1e-8).
    """
    from . import prompts as prompts_mod
    from . import verbalizer as vb_mod

    if cfg is None:
        cfg = ULMConfig(n_layers=2, n_heads=4, d_model=16, d_ffn=32,
                        dropout_p=0.0, vocab_size=13, max_positions=64)
    rng = np.random.default_rng(seed)
    params = init_backbone(cfg, seed=int(rng.integers(2 ** 31)), dtype=np.float64)
    task = prompts_mod.TaskSpec("dX", "zz", ("neg", "pos"))
    pool = prompts_mod.init_pool([task], (2, 2, 1), cfg,
                                 seed=int(rng.integers(2 ** 31)),
                                 mode="both", dtype=np.float64)
    vb = vb_mod.init_verbalizer(task, cfg, seed=int(rng.integers(2 ** 31)),
                                dtype=np.float64)
    batch = rng.integers(0, cfg.vocab_size - 1, size=(3, 12))
    labels = rng.integers(0, 2, size=3)

    def compute_loss() -> Tensor:
        app = prompts_mod.compose(task, pool, "both")
        out = forward_batch(batch, params, prompt=app, train_mode=False)
        class_logits = vb_mod.classify(out, vb)
        picked = ad.take_along_last(ad.log_softmax(class_logits, axis=-1), labels)
        return ad.mul(picked.mean(), -1.0)

    loss = compute_loss()
    loss.backward()

    targets = prompts_mod.trainable_parameters(pool, [vb])
    spots = []
    for name, tensor in params.named_tensors():
        n_spots = min(4, tensor.data.size)
        flat = rng.choice(tensor.data.size, size=n_spots, replace=False)
        spots.append((name, tensor, flat))

    max_rel, worst, checked = 0.0, "", 0

    def fd_entry(tensor: Tensor, flat_idx: int) -> float:
        view = tensor.data.reshape(-1)
        orig = view[flat_idx]
        view[flat_idx] = orig + epsilon
        with ad.no_grad():
            hi = float(compute_loss().data)
        view[flat_idx] = orig - epsilon
        with ad.no_grad():
            lo = float(compute_loss().data)
        view[flat_idx] = orig
        return (hi - lo) / (2.0 * epsilon)

    def check(name, tensor, flat_indices):
        nonlocal max_rel, worst, checked
        grad = np.zeros_like(tensor.data) if tensor.grad is None else tensor.grad
        gview = grad.reshape(-1)
        for fi in flat_indices:
            numeric = fd_entry(tensor, int(fi))
            analytic = float(gview[fi])
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            checked += 1
            if rel > max_rel:
                max_rel, worst = rel, name

    for name, tensor in targets:
        check(name, tensor, range(tensor.data.size))
    for name, tensor, flat in spots:
        check(name, tensor, flat)

    return GradCheckReport(max_rel_err=max_rel, passed=max_rel <= tolerance,
                           n_checked=checked, worst_name=worst,
                           epsilon=epsilon, tolerance=tolerance)
