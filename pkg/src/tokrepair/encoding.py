"""Model-ready sample construction.

Turns function pairs into (CWE token + localized input tokens, serialized
diff) samples, builds the shared vocabulary, and generates denoising
pretraining data (mask / delete / infill).
"""

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import ctok, diffcodec
from .ctok import Token
from .mining import FunctionPair

UNK = "<unk>"
PAD = "<pad>"
BOS = "<s>"
EOS = "</s>"
START_LOC = "<StartLoc>"
END_LOC = "<EndLoc>"
MASK = "<MASK>"
GENERIC_CWE = "CWE-000"

RESERVED_TOKENS = (
    UNK,
    PAD,
    BOS,
    EOS,
    diffcodec.MOD_START,
    diffcodec.MOD_END,
    START_LOC,
    END_LOC,
    diffcodec.BOF,
    diffcodec.EOF,
    MASK,
)

FIRST_LINE = "first_line"
NONE = "none"
ALL_LINES = "all_lines"
SINGLE_BLOCK = "single_block"
LOCALIZATION_MODES = (FIRST_LINE, NONE, ALL_LINES, SINGLE_BLOCK)

DEFAULT_VOCAB_SIZE = 5000
DEFAULT_CWE_COVERAGE = 0.8


class LocalizationError(ValueError):
    """The requested suspicious line has no tokens in the function."""


class EncodingError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class Sample:
    cwe_token: str
    input: tuple[str, ...]
    target: tuple[str, ...]
    meta: dict = field(default_factory=dict)


class Vocabulary:
    """Dense lexeme<->id map; reserved tokens always occupy the lowest ids."""

    def __init__(self, lexemes):
        self._lexemes = list(lexemes)
        self._ids = {lex: i for i, lex in enumerate(self._lexemes)}
        if len(self._ids) != len(self._lexemes):
            raise ValueError("duplicate lexemes in vocabulary")
        for tok in RESERVED_TOKENS:
            if tok not in self._ids:
                raise ValueError(f"reserved token {tok} missing from vocabulary")

    def __len__(self):
        return len(self._lexemes)

    def __contains__(self, lexeme):
        return lexeme in self._ids

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self._lexemes == other._lexemes

    @property
    def lexemes(self):
        return tuple(self._lexemes)

    @property
    def unk_id(self):
        return self._ids[UNK]

    @property
    def pad_id(self):
        return self._ids[PAD]

    @property
    def bos_id(self):
        return self._ids[BOS]

    @property
    def eos_id(self):
        return self._ids[EOS]

    def id_of(self, lexeme: str) -> int:
        return self._ids.get(lexeme, self._ids[UNK])

    def lexeme_of(self, idx: int) -> str:
        return self._lexemes[idx]

    def encode(self, lexemes) -> list[int]:
        return [self.id_of(lex) for lex in lexemes]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for lex in self._lexemes:
                fh.write(lex + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls(line.rstrip("\n") for line in fh if line.rstrip("\n"))


def build_vocab(corpus, size_budget: int = DEFAULT_VOCAB_SIZE, cwe_tokens=()) -> Vocabulary:
    """Reserved tokens plus the most frequent corpus lexemes up to the budget.

    corpus is an iterable of lexeme sequences. Frequency ties break by
    lexeme ascending; reserved and CWE tokens are always present even when
    the budget is smaller than the reserved set.
    """
    reserved = list(RESERVED_TOKENS)
    if GENERIC_CWE not in cwe_tokens:
        reserved.append(GENERIC_CWE)
    reserved.extend(sorted(set(cwe_tokens)))
    counts = Counter()
    for seq in corpus:
        counts.update(ctok.lexemes(seq))
    for tok in reserved:
        counts.pop(tok, None)
    room = max(0, size_budget - len(reserved))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary(reserved + [lex for lex, _ in ranked[:room]])


def assign_cwe_token(cwe_id: str | None, kept_set) -> str:
    """CWE token for a sample: kept ids keep their token, everything else
    (including unlabeled bug-fix samples) becomes the generic CWE-000."""
    if cwe_id and cwe_id in kept_set:
        return cwe_id
    return GENERIC_CWE


def build_cwe_kept_set(train_samples, coverage: float = DEFAULT_CWE_COVERAGE) -> set[str]:
    """Smallest prefix of CWE ids (by descending frequency, ties by id
    ascending) covering the given fraction of CWE-labeled samples."""
    counts = Counter()
    for sample in train_samples:
        cwe = sample.meta.get("cwe") if hasattr(sample, "meta") else sample
        if cwe and cwe != GENERIC_CWE:
            counts[cwe] += 1
    total = sum(counts.values())
    if total == 0:
        return set()
    kept: set[str] = set()
    cum = 0
    for cwe, cnt in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
        kept.add(cwe)
        cum += cnt
        if cum >= coverage * total:
            break
    return kept


def changed_before_lines(pair: FunctionPair) -> list[int]:
    """Line numbers of the before-function affected by the change.

    Removed/replaced tokens contribute their own lines; a pure insertion
    contributes the line of the token at the insertion site (last token's
    line when inserting at the end).
    """
    blocks = diffcodec.diff_blocks(pair.before, pair.after)
    lines: set[int] = set()
    for i1, i2, _, _ in blocks:
        if i2 > i1:
            lines.update(tok.line for tok in pair.before[i1:i2])
        else:
            anchor = min(i1, len(pair.before) - 1)
            lines.add(pair.before[anchor].line)
    return sorted(lines)


def _line_spans(tokens, wanted_lines):
    """(first_index, last_index) per wanted line, in line order."""
    spans = {}
    for idx, tok in enumerate(tokens):
        if tok.line in wanted_lines:
            first, _ = spans.get(tok.line, (idx, idx))
            spans[tok.line] = (first, idx)
    return [spans[line] for line in sorted(spans)]


def mark_input(tokens, suspicious_lines, cwe: str = GENERIC_CWE, mode: str = FIRST_LINE) -> list[str]:
    """CWE token + flattened function tokens with localization markers.

    suspicious_lines is the list of line numbers to consider: first_line
    wraps the earliest one, all_lines wraps each, single_block wraps the
    contiguous region from the first to the last, none adds no markers.
    """
    if mode not in LOCALIZATION_MODES:
        raise ValueError(f"unknown localization mode: {mode}")
    if mode == NONE:
        return [cwe] + ctok.lexemes(tokens)
    token_lines = {tok.line for tok in tokens}
    lines = sorted(set(suspicious_lines))
    missing = [ln for ln in lines if ln not in token_lines]
    if not lines or missing:
        raise LocalizationError(f"lines {missing or lines} have no tokens in the function")
    if mode == FIRST_LINE:
        spans = _line_spans(tokens, {lines[0]})
    elif mode == ALL_LINES:
        spans = _line_spans(tokens, set(lines))
    else:  # SINGLE_BLOCK: one span from first to last suspicious line
        per_line = _line_spans(tokens, set(lines))
        spans = [(per_line[0][0], per_line[-1][1])]
    starts = {first for first, _ in spans}
    ends = {last for _, last in spans}
    out = [cwe]
    for idx, tok in enumerate(tokens):
        if idx in starts:
            out.append(START_LOC)
        out.append(tok.text)
        if idx in ends:
            out.append(END_LOC)
    return out


def build_input(
    pair: FunctionPair,
    vuln_line: int | None = None,
    cwe: str = GENERIC_CWE,
    mode: str = FIRST_LINE,
) -> list[str]:
    """Encoder input for a training pair.

    The suspicious lines default to the lines the fix changed (so
    first_line marks the earliest changed line); an externally supplied
    vuln_line overrides them.
    """
    if vuln_line is not None:
        lines = [vuln_line]
    elif mode == NONE:
        lines = []
    else:
        lines = changed_before_lines(pair)
    return mark_input(pair.before, lines, cwe=cwe, mode=mode)


def encode_pair(
    pair: FunctionPair,
    kept_cwes=(),
    mode: str = FIRST_LINE,
    context_size: int = diffcodec.DEFAULT_CONTEXT_SIZE,
    vuln_line: int | None = None,
) -> Sample | None:
    """Full sample for one function pair; None when the pair has no change."""
    diff = diffcodec.extract_diff(pair.before, pair.after, context_size)
    if not diff.ops:
        return None
    cwe_token = assign_cwe_token(pair.meta.get("cwe"), kept_cwes)
    input_seq = build_input(pair, vuln_line=vuln_line, cwe=cwe_token, mode=mode)
    target = diffcodec.serialize_diff(diff)
    return Sample(cwe_token, tuple(input_seq), tuple(target), dict(pair.meta))


@dataclass(frozen=True, slots=True)
class NoiseConfig:
    mask_ratio: float = 0.15
    delete_ratio: float = 0.10
    infill_lambda: float | None = 3.0


def make_noise(tokens, config: NoiseConfig, rng_seed: int) -> tuple[list[str], list[str]]:
    """Corrupt a lexeme sequence for denoising pretraining.

    Masking swaps tokens for <MASK>, deletion drops tokens, infilling
    replaces one span of Poisson(infill_lambda) length with a single
    <MASK>. Deterministic given the seed; returns (noised, original).
    """
    original = ctok.lexemes(tokens)
    if not original:
        raise EncodingError("cannot noise an empty token sequence")
    rng = np.random.default_rng(rng_seed)
    noised = list(original)
    if config.mask_ratio > 0:
        picks = rng.random(len(noised)) < config.mask_ratio
        noised = [MASK if hit else tok for tok, hit in zip(noised, picks)]
    if config.delete_ratio > 0:
        picks = rng.random(len(noised)) < config.delete_ratio
        noised = [tok for tok, hit in zip(noised, picks) if not hit]
    if config.infill_lambda is not None and config.infill_lambda > 0:
        span = min(int(rng.poisson(config.infill_lambda)), len(noised))
        start = int(rng.integers(0, len(noised) - span + 1))
        noised = noised[:start] + [MASK] + noised[start + span :]
    return noised, original


def noise_sample(
    tokens,
    config: NoiseConfig,
    rng_seed: int,
    context_size: int = diffcodec.DEFAULT_CONTEXT_SIZE,
    meta: dict | None = None,
) -> Sample | None:
    """Denoising sample: input = noised function, target = diff back to the
    original. None when the noise left the sequence unchanged."""
    noised, original = make_noise(tokens, config, rng_seed)
    if not noised:
        return None
    fake_before = [Token(lex, ctok.IDENTIFIER, 1) for lex in noised]
    fake_after = [Token(lex, ctok.IDENTIFIER, 1) for lex in original]
    diff = diffcodec.extract_diff(fake_before, fake_after, context_size)
    if not diff.ops:
        return None
    input_seq = [GENERIC_CWE] + noised
    return Sample(GENERIC_CWE, tuple(input_seq), tuple(diffcodec.serialize_diff(diff)), dict(meta or {}))
