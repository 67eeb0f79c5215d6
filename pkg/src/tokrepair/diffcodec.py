"""Token context diff codec.

A diff is an ordered list of add/delete/replace changes, each located by the
n_context lexemes before the change site (start context) and, when source
tokens are removed, the n_context lexemes after the removed span (end
context). Serialized form:

    <ModStart> start_ctx... insertion... [<ModEnd> end_ctx...]   per change

Virtual sentinels pad contexts at the stream boundaries: <BOF> stands for
positions before the first token, <EOF> for positions past the last one, and
both anchor a context to the respective boundary when matching.
"""

from dataclasses import dataclass, field

from .ctok import lexemes

MOD_START = "<ModStart>"
MOD_END = "<ModEnd>"
BOF = "<BOF>"
EOF = "<EOF>"

ADD = "add"
DELETE = "delete"
REPLACE = "replace"

DEFAULT_CONTEXT_SIZE = 3
DEFAULT_ENUM_CAP = 50


class MalformedDiff(ValueError):
    """Token sequence does not follow the diff grammar (unusable prediction)."""


class NoInterpretation(ValueError):
    """Some context of the diff never matches the source stream."""


@dataclass(frozen=True, slots=True)
class ChangeOp:
    start_ctx: tuple[str, ...]
    insertion: tuple[str, ...]
    end_ctx: tuple[str, ...] | None = None

    @property
    def kind(self) -> str:
        if self.end_ctx is None:
            return ADD
        return DELETE if not self.insertion else REPLACE

    def __post_init__(self):
        if self.end_ctx is None and not self.insertion:
            raise ValueError("an add change needs a non-empty insertion")


@dataclass(frozen=True, slots=True)
class TokenContextDiff:
    context_size: int
    ops: tuple[ChangeOp, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.context_size < 1:
            raise ValueError("context_size must be positive")
        for op in self.ops:
            if len(op.start_ctx) != self.context_size:
                raise ValueError("start context length != context_size")
            if op.end_ctx is not None and len(op.end_ctx) != self.context_size:
                raise ValueError("end context length != context_size")


def serialize_diff(diff: TokenContextDiff) -> list[str]:
    """Flatten a diff into its token-sequence form (empty diff -> [])."""
    out: list[str] = []
    for op in diff.ops:
        out.append(MOD_START)
        out.extend(op.start_ctx)
        out.extend(op.insertion)
        if op.end_ctx is not None:
            out.append(MOD_END)
            out.extend(op.end_ctx)
    return out


def parse_diff(tokens, n_context: int = DEFAULT_CONTEXT_SIZE) -> TokenContextDiff:
    """Parse a (possibly model-produced) token sequence into a diff.

    Raises MalformedDiff when the sequence does not match the grammar
    exactly; such predictions are dropped from the beam by callers.
    """
    toks = lexemes(tokens)
    ops: list[ChangeOp] = []
    i = 0
    n = len(toks)
    while i < n:
        if toks[i] != MOD_START:
            raise MalformedDiff(f"expected {MOD_START} at position {i}")
        i += 1
        start_ctx, i = _read_context(toks, i, n_context)
        insertion: list[str] = []
        while i < n and toks[i] not in (MOD_START, MOD_END):
            insertion.append(toks[i])
            i += 1
        if i < n and toks[i] == MOD_END:
            i += 1
            end_ctx, i = _read_context(toks, i, n_context)
        else:
            end_ctx = None
            if not insertion:
                raise MalformedDiff("change with no insertion and no end context")
        ops.append(ChangeOp(tuple(start_ctx), tuple(insertion), end_ctx))
    return TokenContextDiff(n_context, tuple(ops))


def _read_context(toks, i, n_context):
    ctx = toks[i : i + n_context]
    if len(ctx) < n_context or MOD_START in ctx or MOD_END in ctx:
        raise MalformedDiff(f"context shorter than {n_context} tokens at position {i}")
    return tuple(ctx), i + n_context


def diff_blocks(a, b) -> list[tuple[int, int, int, int]]:
    """Minimal edit script between lexeme sequences as changed blocks.

    Returns (i1, i2, j1, j2) tuples meaning a[i1:i2] was replaced by
    b[j1:j2]; blocks are in order and separated by at least one matched
    token. Uses Myers' O(ND) greedy algorithm, so the total number of
    inserted plus deleted tokens is minimal.
    """
    a = lexemes(a)
    b = lexemes(b)
    matches = _myers_matches(a, b)
    blocks = []
    pi, pj = 0, 0
    for mi, mj in matches + [(len(a), len(b))]:
        if mi > pi or mj > pj:
            blocks.append((pi, mi, pj, mj))
        pi, pj = mi + 1, mj + 1
    return blocks


def _myers_matches(a, b) -> list[tuple[int, int]]:
    """Index pairs (x, y) with a[x] == b[y] forming a maximal alignment."""
    n, m = len(a), len(b)
    if n == 0 or m == 0:
        return []
    v = {1: 0}
    snapshots = []
    depth = None
    for d in range(n + m + 1):
        for k in range(-d, d + 1, 2):
            if k == -d or (k != d and v.get(k - 1, -1) < v.get(k + 1, -1)):
                x = v.get(k + 1, 0)
            else:
                x = v.get(k - 1, 0) + 1
            y = x - k
            while x < n and y < m and a[x] == b[y]:
                x += 1
                y += 1
            v[k] = x
            if x >= n and y >= m:
                depth = d
                break
        snapshots.append(dict(v))
        if depth is not None:
            break
    matches: list[tuple[int, int]] = []
    x, y = n, m
    for d in range(depth, 0, -1):
        prev = snapshots[d - 1]
        k = x - y
        if k == -d or (k != d and prev.get(k - 1, -1) < prev.get(k + 1, -1)):
            pk = k + 1  # arrived via an insertion from b
        else:
            pk = k - 1  # arrived via a deletion from a
        px = prev[pk]
        py = px - pk
        mx = px + 1 if pk == k - 1 else px
        my = py if pk == k - 1 else py + 1
        while x > mx and y > my:
            x -= 1
            y -= 1
            matches.append((x, y))
        x, y = px, py
    while x > 0 and y > 0:
        x -= 1
        y -= 1
        matches.append((x, y))
    matches.reverse()
    return matches


def extract_diff(src, tgt, n_context: int = DEFAULT_CONTEXT_SIZE) -> TokenContextDiff:
    """Edit script turning src into tgt, located by n_context-token contexts.

    Changes closer than n_context unchanged tokens are coalesced into one
    replace so serialized contexts never overlap a neighbouring change.
    Identical streams yield an empty diff (callers filter those samples).
    Guarantee: tgt is always among enumerate_applications(src, result).
    """
    a = lexemes(src)
    b = lexemes(tgt)
    if not a:
        raise ValueError("source stream must be non-empty")
    blocks = diff_blocks(a, b)
    merged: list[tuple[int, int, int, int]] = []
    for blk in blocks:
        if merged and blk[0] - merged[-1][1] < n_context:
            p = merged[-1]
            merged[-1] = (p[0], blk[1], p[2], blk[3])
        else:
            merged.append(blk)
    ops = []
    for i1, i2, j1, j2 in merged:
        start_ctx = _pad_start(a, i1, n_context)
        insertion = tuple(b[j1:j2])
        end_ctx = _pad_end(a, i2, n_context) if i2 > i1 else None
        ops.append(ChangeOp(start_ctx, insertion, end_ctx))
    return TokenContextDiff(n_context, tuple(ops))


def _pad_start(a, pos, n):
    ctx = a[max(0, pos - n) : pos]
    return tuple([BOF] * (n - len(ctx)) + ctx)


def _pad_end(a, pos, n):
    ctx = a[pos : pos + n]
    return tuple(ctx + [EOF] * (n - len(ctx)))


def _ctx_matches(a, pos, ctx):
    # pos is the stream index where ctx[0] should sit; sentinels match the
    # virtual positions beyond either boundary and nothing else.
    for off, want in enumerate(ctx):
        p = pos + off
        if p < 0:
            got = BOF
        elif p >= len(a):
            got = EOF
        else:
            got = a[p]
        if got != want:
            return False
    return True


def _match_tuples(a, diff):
    """Yield per-change (site, removal_end, insertion) tuples in
    lexicographic match-position order. site is where the modified region
    begins; the next change's start context must begin at or after the
    previous removal end."""
    n = diff.context_size

    def rec(idx, prev_end, acc):
        if idx == len(diff.ops):
            yield list(acc)
            return
        op = diff.ops[idx]
        for site in range(max(0, prev_end + n), len(a) + 1):
            if not _ctx_matches(a, site - n, op.start_ctx):
                continue
            if op.end_ctx is None:
                acc.append((site, site, op.insertion))
                yield from rec(idx + 1, site, acc)
                acc.pop()
            else:
                for rend in range(site, len(a) + 1):
                    if not _ctx_matches(a, rend, op.end_ctx):
                        continue
                    acc.append((site, rend, op.insertion))
                    yield from rec(idx + 1, rend, acc)
                    acc.pop()

    yield from rec(0, -len(a) - n, [])


def _apply_tuple(a, tup) -> list[str]:
    out: list[str] = []
    prev = 0
    for site, rend, insertion in tup:
        out.extend(a[prev:site])
        out.extend(insertion)
        prev = rend
    out.extend(a[prev:])
    return out


def enumerate_applications(src, diff: TokenContextDiff, cap: int | None = DEFAULT_ENUM_CAP) -> list[list[str]]:
    """All distinct patched streams obtainable from the diff, in match order.

    Candidates follow the lexicographic order of their match-position
    tuples (leftmost first); duplicates are dropped; at most cap distinct
    results are returned (cap=None means unbounded). An empty diff yields
    [src]. Raises NoInterpretation when no context assignment matches.
    """
    a = lexemes(src)
    results: list[list[str]] = []
    seen: set[tuple[str, ...]] = set()
    for tup in _match_tuples(a, diff):
        candidate = _apply_tuple(a, tup)
        key = tuple(candidate)
        if key in seen:
            continue
        seen.add(key)
        results.append(candidate)
        if cap is not None and len(results) >= cap:
            break
    if not results:
        raise NoInterpretation("diff contexts never match the source stream")
    return results


def count_interpretations(src, diff: TokenContextDiff) -> int:
    """Number of distinct patched streams (0 when the diff is inapplicable)."""
    try:
        return len(enumerate_applications(src, diff, cap=None))
    except NoInterpretation:
        return 0
