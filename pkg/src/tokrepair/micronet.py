"""Desk-scale transformer encoder-decoder with a copy mechanism.

Runs in float64 on numpy with from-scratch differentiation (see autodiff).
The decoder's final probability at each step covers the vocabulary plus the
source positions: a learned gate g blends the generation softmax (scaled by
g) with the final decoder layer's encoder attention averaged over heads
(scaled by 1-g). Out-of-vocabulary source tokens are reachable only through
the copy half.
"""

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff
from .autodiff import Tensor
from .encoding import EOS, Vocabulary

NEG_INF = -1e30


class NonFiniteLossError(RuntimeError):
    pass


@dataclass
class ModelConfig:
    num_layers: int = 2
    num_heads: int = 4
    model_dim: int = 64
    ff_dim: int = 128
    dropout: float = 0.1
    label_smoothing: float = 0.1
    max_positions: int = 1100

    def __post_init__(self):
        if self.model_dim % self.num_heads != 0:
            raise ValueError("model_dim must be divisible by num_heads")
        if min(self.num_layers, self.num_heads, self.model_dim, self.ff_dim) <= 0:
            raise ValueError("all dimensions must be positive")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads


@dataclass
class Batch:
    src_ids: np.ndarray          # (B, Ts) int
    tgt_in_ids: np.ndarray       # (B, Tt) int, <s> + gold[:-1]
    gold_ids: np.ndarray         # (B, Tt) int, gold + </s>
    src_mask: np.ndarray         # (B, Ts) bool, True on real tokens
    tgt_mask: np.ndarray         # (B, Tt) bool, True on real gold positions
    copy_match: np.ndarray       # (B, Tt, Ts) bool, gold lexeme == source lexeme
    gold_in_vocab: np.ndarray    # (B, Tt) bool
    src_lexemes: list = field(default_factory=list)


def make_batch(samples, vocab: Vocabulary, max_src_len=None, max_tgt_len=None) -> Batch:
    """Pad a list of Samples into id matrices plus copy-target bookkeeping."""
    inputs = [list(s.input) for s in samples]
    targets = [list(s.target) for s in samples]
    ts = max_src_len or max(len(x) for x in inputs)
    tt = (max_tgt_len or max(len(t) for t in targets)) + 1  # room for </s>
    b = len(samples)
    src_ids = np.full((b, ts), vocab.pad_id, dtype=np.int64)
    tgt_in = np.full((b, tt), vocab.pad_id, dtype=np.int64)
    gold = np.full((b, tt), vocab.pad_id, dtype=np.int64)
    src_mask = np.zeros((b, ts), dtype=bool)
    tgt_mask = np.zeros((b, tt), dtype=bool)
    copy_match = np.zeros((b, tt, ts), dtype=bool)
    gold_in_vocab = np.zeros((b, tt), dtype=bool)
    for bi, (inp, tgt) in enumerate(zip(inputs, targets)):
        inp = inp[:ts]
        src_ids[bi, : len(inp)] = vocab.encode(inp)
        src_mask[bi, : len(inp)] = True
        out_lex = tgt[: tt - 1] + [EOS]
        tgt_in[bi, 0] = vocab.bos_id
        tgt_in[bi, 1 : len(out_lex)] = vocab.encode(out_lex[:-1])
        gold[bi, : len(out_lex)] = vocab.encode(out_lex)
        tgt_mask[bi, : len(out_lex)] = True
        for ti, lex in enumerate(out_lex):
            gold_in_vocab[bi, ti] = lex in vocab
            for si, src_lex in enumerate(inp):
                if src_lex == lex:
                    copy_match[bi, ti, si] = True
    return Batch(src_ids, tgt_in, gold, src_mask, tgt_mask, copy_match, gold_in_vocab, inputs)


# ---------------------------------------------------------------------------
# parameters


def init_params(config: ModelConfig, vocab_size: int, seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    d, ff = config.model_dim, config.ff_dim
    params: dict[str, np.ndarray] = {}

    def mat(name, rows, cols):
        params[name] = rng.normal(0.0, rows ** -0.5, size=(rows, cols))

    def bias(name, size):
        params[name] = np.zeros(size)

    params["tok_emb"] = rng.normal(0.0, d ** -0.5, size=(vocab_size, d))
    params["pos_emb"] = rng.normal(0.0, d ** -0.5, size=(config.max_positions, d))
    for side, layers in (("enc", config.num_layers), ("dec", config.num_layers)):
        for l in range(layers):
            p = f"{side}{l}"
            for attn in ["self"] + (["cross"] if side == "dec" else []):
                for proj in ("q", "k", "v", "o"):
                    mat(f"{p}.{attn}.{proj}", d, d)
                    bias(f"{p}.{attn}.{proj}b", d)
                params[f"{p}.{attn}.ln_g"] = np.ones(d)
                bias(f"{p}.{attn}.ln_b", d)
            mat(f"{p}.ff.w1", d, ff)
            bias(f"{p}.ff.b1", ff)
            mat(f"{p}.ff.w2", ff, d)
            bias(f"{p}.ff.b2", d)
            params[f"{p}.ff.ln_g"] = np.ones(d)
            bias(f"{p}.ff.ln_b", d)
    mat("out.w", d, vocab_size)
    bias("out.b", vocab_size)
    mat("gate.w", 2 * d, 1)
    bias("gate.b", 1)
    return params


@dataclass
class ModelState:
    config: ModelConfig
    vocab: Vocabulary
    params: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def initialize(cls, config: ModelConfig, vocab: Vocabulary, seed: int = 0) -> "ModelState":
        return cls(config, vocab, init_params(config, len(vocab), seed))

    def copy(self) -> "ModelState":
        return ModelState(self.config, self.vocab, {k: v.copy() for k, v in self.params.items()}, self.step)

    def check_finite(self):
        for name, value in self.params.items():
            if not np.all(np.isfinite(value)):
                raise NonFiniteLossError(f"non-finite parameter tensor: {name}")


# ---------------------------------------------------------------------------
# forward pass


def attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None):
    """softmax(q kᵀ / sqrt(d_k) + mask) v with -inf-style masking.

    Returns (output, weights). mask is an additive numpy array broadcast to
    the score shape (use NEG_INF at disallowed positions).
    """
    dk = q.shape[-1]
    scores = q.matmul(k.transpose(_swap_last(k))) * (1.0 / np.sqrt(dk))
    if mask is not None:
        scores = scores + Tensor(mask)
    weights = scores.softmax(axis=-1)
    return weights.matmul(v), weights


def _swap_last(t: Tensor):
    axes = list(range(len(t.shape)))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


class _Net:
    """One forward construction over a parameter set wrapped as Tensors."""

    def __init__(self, state: ModelState, train_rng: np.random.Generator | None = None):
        self.config = state.config
        self.vocab = state.vocab
        self.p = {name: Tensor(value, requires_grad=True) for name, value in state.params.items()}
        self.train_rng = train_rng

    def _dropout(self, x: Tensor) -> Tensor:
        p = self.config.dropout
        if self.train_rng is None or p <= 0:
            return x
        keep = (self.train_rng.random(x.shape) >= p).astype(np.float64) / (1.0 - p)
        return x * Tensor(keep)

    def _layernorm(self, x: Tensor, prefix: str) -> Tensor:
        d = self.config.model_dim
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        normed = centered / (var + 1e-6).sqrt()
        return normed * self.p[prefix + "ln_g"] + self.p[prefix + "ln_b"]

    def _heads_split(self, x: Tensor, b: int, t: int) -> Tensor:
        h, dk = self.config.num_heads, self.config.head_dim
        return x.reshape(b, t, h, dk).transpose((0, 2, 1, 3))

    def _heads_join(self, x: Tensor, b: int, t: int) -> Tensor:
        return x.transpose((0, 2, 1, 3)).reshape(b, t, self.config.model_dim)

    def _mha(self, prefix: str, x: Tensor, memory: Tensor, mask: np.ndarray):
        b, tq = x.shape[0], x.shape[1]
        tk = memory.shape[1]
        q = self._heads_split(x.matmul(self.p[prefix + "q"]) + self.p[prefix + "qb"], b, tq)
        k = self._heads_split(memory.matmul(self.p[prefix + "k"]) + self.p[prefix + "kb"], b, tk)
        v = self._heads_split(memory.matmul(self.p[prefix + "v"]) + self.p[prefix + "vb"], b, tk)
        ctx, weights = attention(q, k, v, mask)
        out = self._heads_join(ctx, b, tq).matmul(self.p[prefix + "o"]) + self.p[prefix + "ob"]
        return out, weights

    def _ff(self, prefix: str, x: Tensor) -> Tensor:
        hidden = (x.matmul(self.p[prefix + "w1"]) + self.p[prefix + "b1"]).relu()
        return hidden.matmul(self.p[prefix + "w2"]) + self.p[prefix + "b2"]

    def _embed(self, ids: np.ndarray) -> Tensor:
        t = ids.shape[1]
        if t > self.config.max_positions:
            raise ValueError(f"sequence of length {t} exceeds max_positions")
        tok = self.p["tok_emb"].take_rows(ids)
        pos = self.p["pos_emb"].take_rows(np.arange(t))
        return self._dropout(tok + pos)

    def encode(self, src_ids: np.ndarray, src_mask: np.ndarray) -> Tensor:
        x = self._embed(src_ids)
        key_mask = np.where(src_mask, 0.0, NEG_INF)[:, None, None, :]
        for l in range(self.config.num_layers):
            p = f"enc{l}."
            attn_out, _ = self._mha(p + "self.", x, x, key_mask)
            x = self._layernorm(x + self._dropout(attn_out), p + "self.")
            x = self._layernorm(x + self._dropout(self._ff(p + "ff.", x)), p + "ff.")
        return x

    def decode(self, enc_out: Tensor, src_mask: np.ndarray, tgt_in_ids: np.ndarray):
        """Returns (decoder_output, mean cross-attention of the final layer)."""
        b, tt = tgt_in_ids.shape
        x = self._embed(tgt_in_ids)
        causal = np.triu(np.full((tt, tt), NEG_INF), k=1)[None, None, :, :]
        src_key_mask = np.where(src_mask, 0.0, NEG_INF)[:, None, None, :]
        cross_weights = None
        for l in range(self.config.num_layers):
            p = f"dec{l}."
            attn_out, _ = self._mha(p + "self.", x, x, causal)
            x = self._layernorm(x + self._dropout(attn_out), p + "self.")
            attn_out, cross_weights = self._mha(p + "cross.", x, enc_out, src_key_mask)
            x = self._layernorm(x + self._dropout(attn_out), p + "cross.")
            x = self._layernorm(x + self._dropout(self._ff(p + "ff.", x)), p + "ff.")
        copy_attn = cross_weights.mean(axis=1)  # average heads: (B, Tt, Ts)
        return x, copy_attn

    def output_distribution(self, dec_out: Tensor, copy_attn: Tensor, enc_out: Tensor) -> Tensor:
        """(B, Tt, V + Ts) distribution: gate * generate ++ (1-gate) * copy."""
        context = copy_attn.matmul(enc_out)
        gate_in = dec_out.concat_last(context)
        gate = (gate_in.matmul(self.p["gate.w"]) + self.p["gate.b"]).sigmoid()
        gen = (dec_out.matmul(self.p["out.w"]) + self.p["out.b"]).softmax(axis=-1)
        return (gen * gate).concat_last(copy_attn * (1.0 - gate))


def forward(state: ModelState, src_ids, src_mask, tgt_in_ids, train_rng=None) -> Tensor:
    """Full forward pass; returns per-step distributions (B, Tt, V + Ts)."""
    net = _Net(state, train_rng)
    enc_out = net.encode(src_ids, src_mask)
    dec_out, copy_attn = net.decode(enc_out, src_mask, tgt_in_ids)
    return net.output_distribution(dec_out, copy_attn, enc_out)


def resolve_lexeme_probs(step_probs: np.ndarray, src_lexemes: list[str], vocab: Vocabulary) -> dict[str, float]:
    """Aggregate one step's (V + Ts) distribution to lexeme probabilities.

    Copy mass lands on the source lexeme at each position; generation mass
    lands on vocabulary lexemes. Identical lexemes accumulate.
    """
    v = len(vocab)
    out: dict[str, float] = {}
    for idx in np.nonzero(step_probs[:v] > 0)[0]:
        lex = vocab.lexeme_of(int(idx))
        out[lex] = out.get(lex, 0.0) + float(step_probs[idx])
    for pos, lex in enumerate(src_lexemes):
        mass = float(step_probs[v + pos])
        if mass > 0:
            out[lex] = out.get(lex, 0.0) + mass
    return out


# ---------------------------------------------------------------------------
# loss & gradients


def _target_distribution(batch: Batch, vocab_size: int, label_smoothing: float, unk_id: int = 0):
    """Copy-aware smoothed targets plus a support indicator, both (B,Tt,V+Ts).

    The gold lexeme's mass is split evenly between its vocabulary entry (if
    any) and the uniform set of matching source positions; the smoothing
    mass is uniform over the support (vocabulary + real source positions).
    """
    b, tt, ts = batch.copy_match.shape
    width = vocab_size + ts
    q = np.zeros((b, tt, width))
    match_counts = batch.copy_match.sum(axis=2)  # (B, Tt)
    has_copy = match_counts > 0
    in_vocab = batch.gold_in_vocab
    vocab_w = np.where(in_vocab & has_copy, 0.5, np.where(in_vocab, 1.0, 0.0))
    rows = np.arange(b)[:, None]
    steps = np.arange(tt)[None, :]
    q[rows, steps, batch.gold_ids] = vocab_w
    copy_w = np.where(has_copy, (1.0 - vocab_w) / np.maximum(match_counts, 1), 0.0)
    q[:, :, vocab_size:] = batch.copy_match * copy_w[:, :, None]
    # gold neither in vocabulary nor copyable: fall back to <unk>
    fallback = (~in_vocab) & (~has_copy)
    if fallback.any():
        q[:, :, unk_id][fallback] = 1.0
    support = np.zeros((b, tt, width))
    support[:, :, :vocab_size] = 1.0
    support[:, :, vocab_size:] = batch.src_mask[:, None, :]
    sizes = support.sum(axis=-1, keepdims=True)
    q = (1.0 - label_smoothing) * q + label_smoothing * support / sizes
    q *= batch.tgt_mask[:, :, None]
    return q, support


def loss_tensor(state: ModelState, batch: Batch, train_rng=None) -> Tensor:
    probs = forward(state, batch.src_ids, batch.src_mask, batch.tgt_in_ids, train_rng)
    q, support = _target_distribution(
        batch, len(state.vocab), state.config.label_smoothing, state.vocab.unk_id
    )
    # log(1)=0 outside the support, where q is zero anyway
    safe = probs + Tensor(1.0 - support)
    ce = -(Tensor(q) * safe.log()).sum()
    return ce * (1.0 / batch.tgt_mask.sum())


def loss(state: ModelState, batch: Batch, train_rng=None) -> float:
    with autodiff.no_grad():
        value = loss_tensor(state, batch, train_rng).item()
    if not np.isfinite(value):
        raise NonFiniteLossError(f"loss is {value}")
    return value


def loss_and_grads(state: ModelState, batch: Batch, train_rng=None, loss_scale: float = 1.0):
    """Exact gradients of the (optionally scaled) loss for every parameter."""
    net = _Net(state, train_rng)
    enc_out = net.encode(batch.src_ids, batch.src_mask)
    dec_out, copy_attn = net.decode(enc_out, batch.src_mask, batch.tgt_in_ids)
    probs = net.output_distribution(dec_out, copy_attn, enc_out)
    q, support = _target_distribution(
        batch, len(state.vocab), state.config.label_smoothing, state.vocab.unk_id
    )
    safe = probs + Tensor(1.0 - support)
    ce = -(Tensor(q) * safe.log()).sum() * (loss_scale / batch.tgt_mask.sum())
    value = ce.item()
    if not np.isfinite(value):
        raise NonFiniteLossError(f"loss is {value}")
    ce.backward()
    grads = {name: net.p[name].grad for name in net.p}
    for name, g in grads.items():
        if g is None:
            grads[name] = np.zeros_like(state.params[name])
    return value, grads


# ---------------------------------------------------------------------------
# optimizer & schedule


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params) -> "AdamState":
        return cls(
            {k: np.zeros_like(p) for k, p in params.items()},
            {k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    state: ModelState,
    opt: AdamState,
    grads: dict[str, np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """In-place Adam update with bias correction; bumps both step counters."""
    opt.t += 1
    for name, p in state.params.items():
        g = grads[name]
        opt.m[name] = beta1 * opt.m[name] + (1 - beta1) * g
        opt.v[name] = beta2 * opt.v[name] + (1 - beta2) * (g * g)
        m_hat = opt.m[name] / (1 - beta1 ** opt.t)
        v_hat = opt.v[name] / (1 - beta2 ** opt.t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    state.step += 1


def lr_at(
    step: int,
    base_lr: float,
    decay_factor: float = 0.9,
    decay_start: int = 50000,
    decay_interval: int = 10000,
) -> float:
    """base_lr until decay_start, then multiplied by decay_factor every
    decay_interval steps (step 50000 is the first decayed step)."""
    if step < decay_start:
        return base_lr
    decays = (step - decay_start) // decay_interval + 1
    return base_lr * decay_factor ** decays


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(state: ModelState, path) -> None:
    """Bit-stable npz container: config + vocabulary + step + all tensors."""
    header = json.dumps(
        {
            "config": asdict(state.config),
            "vocab": list(state.vocab.lexemes),
            "step": state.step,
            "tensors": sorted(state.params),
        }
    )
    arrays = {f"t.{k}": v for k, v in state.params.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.frombuffer(header.encode("utf-8"), dtype=np.uint8), **arrays)


def load_checkpoint(path) -> ModelState:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(bytes(data["__header__"]).decode("utf-8"))
        params = {k[2:]: data[k].copy() for k in data.files if k.startswith("t.")}
    config = ModelConfig(**header["config"])
    vocab = Vocabulary(header["vocab"])
    return ModelState(config, vocab, params, header["step"])
