"""Bug-fix corpus construction from commit records.

Filters commits by message keywords, pairs up changed function definitions
across file versions, deduplicates, and enforces sequence-length limits.
Input is a local corpus of commit records (JSON Lines); no forge API access.
"""

import logging
import re
from dataclasses import dataclass, field

from . import ctok, diffcodec
from .ctok import Token, TokenStream

log = logging.getLogger(__name__)

ACTION_WORDS = ("fix", "solve", "repair")
TOPIC_WORDS = ("bug", "issue", "problem", "error", "fault", "vulnerability")

_ACTION_RE = re.compile(r"\b(?:%s)\b" % "|".join(ACTION_WORDS), re.IGNORECASE)
_TOPIC_RE = re.compile(r"\b(?:%s)\b" % "|".join(TOPIC_WORDS), re.IGNORECASE)

DEFAULT_MAX_INPUT = 1000
DEFAULT_MAX_OUTPUT = 100
# A mined function is later encoded as: CWE token + tokens + one localization
# marker pair. The length limit applies to that encoded form.
ENCODED_INPUT_OVERHEAD = 3


@dataclass(frozen=True, slots=True)
class FileChange:
    path: str
    before: str
    after: str


@dataclass(frozen=True, slots=True)
class CommitRecord:
    message: str
    files: tuple[FileChange, ...]
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True, slots=True)
class FunctionPair:
    signature: tuple[str, ...]
    before: TokenStream
    after: TokenStream
    meta: dict = field(default_factory=dict)


def is_bugfix_message(message: str) -> bool:
    """Whole-word, case-insensitive: (fix|solve|repair) AND
    (bug|issue|problem|error|fault|vulnerability)."""
    return bool(_ACTION_RE.search(message)) and bool(_TOPIC_RE.search(message))


def _match_paren(tokens: TokenStream, open_idx: int) -> int | None:
    depth = 0
    for i in range(open_idx, len(tokens)):
        t = tokens[i].text
        if t == "(":
            depth += 1
        elif t == ")":
            depth -= 1
            if depth == 0:
                return i
    return None


def _find_functions(tokens: TokenStream) -> dict[tuple[str, ...], TokenStream]:
    """Map signature lexemes -> full definition token span.

    A definition is: identifier, parenthesized parameter list, then '{' at
    file scope; the span starts after the previous top-level terminator.
    Prototypes (')' followed by ';') are skipped. Signatures duplicated
    within one version are dropped as ambiguous.
    """
    funcs: dict[tuple[str, ...], TokenStream] = {}
    ambiguous: set[tuple[str, ...]] = set()
    n = len(tokens)
    i = 0
    depth = 0
    decl_start = 0
    while i < n:
        t = tokens[i]
        if t.kind == ctok.PREPROCESSOR:
            i += 1
            if depth == 0:
                decl_start = i
            continue
        if t.text == "{":
            depth += 1
            i += 1
            continue
        if t.text == "}":
            depth = max(0, depth - 1)
            i += 1
            if depth == 0:
                decl_start = i
            continue
        if depth == 0 and t.text == ";":
            i += 1
            decl_start = i
            continue
        if depth == 0 and t.kind == ctok.IDENTIFIER and i + 1 < n and tokens[i + 1].text == "(":
            close = _match_paren(tokens, i + 1)
            if close is not None and close + 1 < n and tokens[close + 1].text == "{":
                body_end = _match_brace(tokens, close + 1)
                if body_end is not None:
                    sig = tuple(tok.text for tok in tokens[i : close + 1])
                    span = tokens[decl_start : body_end + 1]
                    if sig in funcs:
                        ambiguous.add(sig)
                    else:
                        funcs[sig] = span
                    i = body_end + 1
                    depth = 0
                    decl_start = i
                    continue
        i += 1
    for sig in ambiguous:
        funcs.pop(sig, None)
    return funcs


def _match_brace(tokens: TokenStream, open_idx: int) -> int | None:
    depth = 0
    for i in range(open_idx, len(tokens)):
        t = tokens[i].text
        if t == "{":
            depth += 1
        elif t == "}":
            depth -= 1
            if depth == 0:
                return i
    return None


def extract_function_pairs(before_text: str, after_text: str, meta: dict | None = None) -> list[FunctionPair]:
    """Changed function definitions shared (by signature) between two file
    versions. Functions present in only one version are ignored; files that
    fail to lex are skipped with a warning."""
    try:
        before_tokens = ctok.tokenize(before_text)
        after_tokens = ctok.tokenize(after_text)
    except ctok.LexError as err:
        log.warning("skipping file pair: %s", err)
        return []
    before_funcs = _find_functions(before_tokens)
    after_funcs = _find_functions(after_tokens)
    pairs = []
    for sig, before_span in before_funcs.items():
        after_span = after_funcs.get(sig)
        if after_span is None:
            continue
        if ctok.lexemes(before_span) == ctok.lexemes(after_span):
            continue
        pairs.append(FunctionPair(sig, before_span, after_span, dict(meta or {})))
    return pairs


def extract_from_commit(record: CommitRecord) -> list[FunctionPair]:
    pairs = []
    for change in record.files:
        if not change.path.endswith(".c"):
            continue
        pairs.extend(extract_function_pairs(change.before, change.after, record.meta))
    return pairs


def _pair_key(pair: FunctionPair, context_size: int) -> tuple:
    before = ctok.lexemes(pair.before)
    diff = diffcodec.extract_diff(pair.before, pair.after, context_size)
    return (tuple(before), tuple(diffcodec.serialize_diff(diff)))


def dedup(pairs, context_size: int = diffcodec.DEFAULT_CONTEXT_SIZE) -> list[FunctionPair]:
    """Keep the first of any pairs sharing (before lexemes, serialized diff)."""
    seen: set[tuple] = set()
    out = []
    for pair in pairs:
        key = _pair_key(pair, context_size)
        if key in seen:
            continue
        seen.add(key)
        out.append(pair)
    return out


def filter_lengths(
    pairs,
    max_input: int = DEFAULT_MAX_INPUT,
    max_output: int = DEFAULT_MAX_OUTPUT,
    context_size: int = diffcodec.DEFAULT_CONTEXT_SIZE,
    input_overhead: int = ENCODED_INPUT_OVERHEAD,
) -> list[FunctionPair]:
    """Drop pairs whose encoded input or serialized diff is over the limits."""
    out = []
    for pair in pairs:
        input_len = len(pair.before) + input_overhead
        if input_len > max_input:
            continue
        diff = diffcodec.extract_diff(pair.before, pair.after, context_size)
        if len(diffcodec.serialize_diff(diff)) > max_output:
            continue
        out.append(pair)
    return out
