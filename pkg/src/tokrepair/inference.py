"""Patch synthesis: neural beam search over diff token sequences, per-
hypothesis interpretation enumeration, and their capped combination."""

from dataclasses import dataclass

import numpy as np

from . import ctok, diffcodec, micronet
from .autodiff import Tensor, no_grad
from .diffcodec import MalformedDiff, NoInterpretation
from .encoding import EOS, FIRST_LINE, GENERIC_CWE, mark_input
from .micronet import ModelState, _Net

DEFAULT_BEAM_WIDTH = 50
DEFAULT_MAX_LEN = 100


@dataclass(frozen=True, slots=True)
class Hypothesis:
    tokens: tuple[str, ...]
    log_prob: float


@dataclass(frozen=True, slots=True)
class PatchCandidate:
    function: tuple[str, ...]
    hypothesis_rank: int
    interpretation_rank: int
    score: float


class ModelStepper:
    """Per-input decoding front end for the transformer.

    Encodes the source once; step() maps a batch of output prefixes to
    next-token probabilities over `names` (vocabulary lexemes followed by
    the input's out-of-vocabulary lexemes), with copy mass folded onto the
    lexeme it would produce.
    """

    def __init__(self, state: ModelState, input_lexemes):
        self.state = state
        self.vocab = state.vocab
        self.src_lexemes = list(input_lexemes)
        src_ids = np.array([self.vocab.encode(self.src_lexemes)], dtype=np.int64)
        self.src_mask = np.ones((1, len(self.src_lexemes)), dtype=bool)
        with no_grad():
            self._enc = _Net(state).encode(src_ids, self.src_mask).data
        in_vocab_pairs = []
        oov_positions: dict[str, list[int]] = {}
        for pos, lex in enumerate(self.src_lexemes):
            if lex in self.vocab:
                in_vocab_pairs.append((pos, self.vocab.id_of(lex)))
            else:
                oov_positions.setdefault(lex, []).append(pos)
        self._in_vocab_pairs = in_vocab_pairs
        self._oov = sorted(oov_positions.items())
        self.names = list(self.vocab.lexemes) + [lex for lex, _ in self._oov]
        self.eos_index = self.vocab.eos_id

    def step(self, prefixes: list[tuple[str, ...]]) -> np.ndarray:
        """(len(prefixes), len(names)) next-token probability matrix."""
        b = len(prefixes)
        v = len(self.vocab)
        tt = max(len(p) for p in prefixes) + 1
        tgt_in = np.full((b, tt), self.vocab.pad_id, dtype=np.int64)
        tgt_in[:, 0] = self.vocab.bos_id
        for i, prefix in enumerate(prefixes):
            tgt_in[i, 1 : 1 + len(prefix)] = self.vocab.encode(prefix)
        enc = Tensor(np.broadcast_to(self._enc, (b,) + self._enc.shape[1:]).copy())
        mask = np.broadcast_to(self.src_mask, (b, self.src_mask.shape[1]))
        with no_grad():
            net = _Net(self.state)
            dec_out, copy_attn = net.decode(enc, mask, tgt_in)
            probs = net.output_distribution(dec_out, copy_attn, enc).data
        step_probs = probs[np.arange(b), [len(p) for p in prefixes], :]
        out = np.zeros((b, len(self.names)))
        out[:, :v] = step_probs[:, :v]
        for pos, vid in self._in_vocab_pairs:
            out[:, vid] += step_probs[:, v + pos]
        for col, (_, positions) in enumerate(self._oov):
            out[:, v + col] = step_probs[:, v + np.array(positions)].sum(axis=1)
        return out


def neural_beam(stepper, width: int, max_len: int = DEFAULT_MAX_LEN) -> list[Hypothesis]:
    """Standard beam search over next-token distributions.

    stepper exposes `names`, `eos_index` and `step(prefixes) -> (n, L)`
    probabilities. At each step the `width` best extensions by cumulative
    log-probability survive; extensions emitting end-of-sequence (or
    reaching max_len tokens) retire to the finished pool. No length
    normalization. Result sorted by descending log-probability.
    """
    if width < 1:
        raise ValueError("beam width must be >= 1")
    names = stepper.names
    active: list[tuple[tuple[str, ...], float]] = [((), 0.0)]
    finished: list[Hypothesis] = []
    for _ in range(max_len + 1):
        if not active:
            break
        probs = stepper.step([tokens for tokens, _ in active])
        lps = np.array([lp for _, lp in active])
        with np.errstate(divide="ignore"):
            scores = np.log(probs) + lps[:, None]
        flat = scores.ravel()
        k = min(width, flat.size)
        top = np.argpartition(-flat, k - 1)[:k]
        # deterministic order: best score first, ties by hyp then name index
        top = top[np.lexsort((top, -flat[top]))]
        next_active = []
        for idx in top:
            score = flat[idx]
            if score == -np.inf:
                continue
            hyp_i, name_i = divmod(int(idx), len(names))
            prev_tokens = active[hyp_i][0]
            if name_i == stepper.eos_index:
                finished.append(Hypothesis(prev_tokens, float(score)))
                continue
            tokens = prev_tokens + (names[name_i],)
            if len(tokens) >= max_len:
                finished.append(Hypothesis(tokens, float(score)))
            else:
                next_active.append((tokens, float(score)))
        if len(finished) >= width:
            bar = sorted(finished, key=lambda h: -h.log_prob)[width - 1].log_prob
            next_active = [(t, lp) for t, lp in next_active if lp >= bar]
        active = next_active
    finished.sort(key=lambda h: (-h.log_prob, h.tokens))
    return finished[:width]


def neural_beam_for_sample(state: ModelState, sample, width: int, max_len: int = DEFAULT_MAX_LEN):
    return neural_beam(ModelStepper(state, sample.input), width, max_len)


def combined_beam(
    state: ModelState,
    function_tokens,
    vuln_line,
    cwe: str = GENERIC_CWE,
    width: int = DEFAULT_BEAM_WIDTH,
    context_size: int = diffcodec.DEFAULT_CONTEXT_SIZE,
    mode: str = FIRST_LINE,
    max_len: int = DEFAULT_MAX_LEN,
) -> list[PatchCandidate]:
    """Combined neural x interpretation beam, capped at width.

    Hypotheses are expanded in rank order into all their interpretations
    (hypothesis-major), malformed or inapplicable predictions are dropped,
    identical patched functions keep their best rank, and identity patches
    are filtered. An empty result is a valid outcome.
    """
    lines = [vuln_line] if isinstance(vuln_line, int) else list(vuln_line or [])
    input_lexemes = mark_input(function_tokens, lines, cwe=cwe, mode=mode)
    hypotheses = neural_beam(ModelStepper(state, input_lexemes), width, max_len)
    return apply_hypotheses(function_tokens, hypotheses, width, context_size)


def apply_hypotheses(function_tokens, hypotheses, width: int, context_size: int) -> list[PatchCandidate]:
    """Interpretation expansion half of the combined beam (model-free)."""
    src = ctok.lexemes(function_tokens)
    seen: set[tuple[str, ...]] = set()
    candidates: list[PatchCandidate] = []
    for h_rank, hyp in enumerate(hypotheses):
        try:
            diff = diffcodec.parse_diff(hyp.tokens, context_size)
            interpretations = diffcodec.enumerate_applications(src, diff, cap=width)
        except (MalformedDiff, NoInterpretation):
            continue
        for i_rank, patched in enumerate(interpretations):
            key = tuple(patched)
            if patched == src or key in seen:
                continue
            seen.add(key)
            candidates.append(PatchCandidate(key, h_rank, i_rank, hyp.log_prob))
    return candidates[:width]


def batched_greedy_decode(state: ModelState, samples, max_len: int = DEFAULT_MAX_LEN, chunk: int = 64):
    """Greedy (beam width 1) decode of many samples, batched per step."""
    outputs: list[list[str]] = []
    for lo in range(0, len(samples), chunk):
        outputs.extend(_greedy_chunk(state, samples[lo : lo + chunk], max_len))
    return outputs


def _greedy_chunk(state: ModelState, samples, max_len: int) -> list[list[str]]:
    vocab = state.vocab
    b = len(samples)
    v = len(vocab)
    inputs = [list(s.input) for s in samples]
    ts = max(len(x) for x in inputs)
    src_ids = np.full((b, ts), vocab.pad_id, dtype=np.int64)
    src_mask = np.zeros((b, ts), dtype=bool)
    for i, inp in enumerate(inputs):
        src_ids[i, : len(inp)] = vocab.encode(inp)
        src_mask[i, : len(inp)] = True
    with no_grad():
        enc = _Net(state).encode(src_ids, src_mask)
    tgt_in = np.full((b, 1), vocab.bos_id, dtype=np.int64)
    done = np.zeros(b, dtype=bool)
    outputs: list[list[str]] = [[] for _ in range(b)]
    for _ in range(max_len):
        with no_grad():
            net = _Net(state)
            dec_out, copy_attn = net.decode(enc, src_mask, tgt_in)
            probs = net.output_distribution(dec_out, copy_attn, enc).data[:, -1, :]
        next_ids = np.full(b, vocab.pad_id, dtype=np.int64)
        for i in range(b):
            if done[i]:
                continue
            agg = probs[i, :v].copy()
            best_oov, best_oov_p = None, -1.0
            oov_mass: dict[str, float] = {}
            for pos, lex in enumerate(inputs[i]):
                mass = probs[i, v + pos]
                if lex in vocab:
                    agg[vocab.id_of(lex)] += mass
                else:
                    oov_mass[lex] = oov_mass.get(lex, 0.0) + mass
            for lex, mass in sorted(oov_mass.items()):
                if mass > best_oov_p:
                    best_oov, best_oov_p = lex, mass
            top_id = int(np.argmax(agg))
            if best_oov is not None and best_oov_p > agg[top_id]:
                lex = best_oov
            else:
                lex = vocab.lexeme_of(top_id)
            if lex == EOS:
                done[i] = True
            else:
                outputs[i].append(lex)
                next_ids[i] = vocab.id_of(lex)
        if done.all():
            break
        tgt_in = np.concatenate([tgt_in, next_ids[:, None]], axis=1)
    return outputs
