import itertools
import random

import pytest

from tokrepair import diffcodec
from tokrepair.ctok import tokenize, lexemes
from tokrepair.diffcodec import (
    BOF,
    EOF,
    MOD_END,
    MOD_START,
    ChangeOp,
    MalformedDiff,
    NoInterpretation,
    TokenContextDiff,
    count_interpretations,
    diff_blocks,
    enumerate_applications,
    extract_diff,
    parse_diff,
    serialize_diff,
)

# Reconstructed two-change repair: at context size 3 the contexts
# 'index < len', 'else { return' and '; } }' are unique; at context size 2
# '{ return' and '; }' each occur twice, giving three interpretations.
BUGGY = (
    "int get ( int * arr , int index , int len ) "
    "{ if ( index < len ) { return arr [ index ] ; } else { return - 1 ; } }"
).split()
FIXED = (
    "int get ( int * arr , int index , int len ) "
    "{ if ( index < len && index > 0 ) { return arr [ index ] ; } else { return 0 ; } }"
).split()


def brute_force_lcs(a, b):
    """Reference LCS length table; independent of the Myers implementation."""
    n, m = len(a), len(b)
    table = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        for j in range(m - 1, -1, -1):
            if a[i] == b[j]:
                table[i][j] = table[i + 1][j + 1] + 1
            else:
                table[i][j] = max(table[i + 1][j], table[i][j + 1])
    return table[0][0]


def brute_force_interpretations(src, diff):
    """Independent enumerator: try every combination of context positions."""
    n = diff.context_size

    def virtual(pos):
        if pos < 0:
            return BOF
        if pos >= len(src):
            return EOF
        return src[pos]

    def ctx_at(pos, ctx):
        return all(virtual(pos + k) == ctx[k] for k in range(n))

    per_change = []
    for op in diff.ops:
        sites = [s for s in range(len(src) + 1) if ctx_at(s - n, op.start_ctx)]
        if op.end_ctx is None:
            per_change.append([(s, s) for s in sites])
        else:
            ends = [e for e in range(len(src) + 1) if ctx_at(e, op.end_ctx)]
            per_change.append([(s, e) for s in sites for e in ends if e >= s])
    results = set()
    for combo in itertools.product(*per_change):
        ok = True
        prev_end = None
        for site, rend in combo:
            if prev_end is not None and site - n < prev_end:
                ok = False
                break
            prev_end = rend
        if not ok:
            continue
        out = []
        prev = 0
        for (site, rend), op in zip(combo, diff.ops):
            out.extend(src[prev:site])
            out.extend(op.insertion)
            prev = rend
        out.extend(src[prev:])
        results.add(tuple(out))
    return results


# --- serialization -----------------------------------------------------------


def test_serialize_figure_repair_context3_is_17_tokens():
    diff = extract_diff(BUGGY, FIXED, 3)
    assert len(diff.ops) == 2
    assert diff.ops[0].start_ctx == ("index", "<", "len")
    assert diff.ops[1].start_ctx == ("else", "{", "return")
    assert diff.ops[1].end_ctx == (";", "}", "}")
    assert len(serialize_diff(diff)) == 17


def test_serialize_figure_repair_context2_is_14_tokens():
    diff = extract_diff(BUGGY, FIXED, 2)
    assert len(serialize_diff(diff)) == 14


def test_serialize_empty_diff():
    assert serialize_diff(TokenContextDiff(3)) == []


def test_serialize_parse_roundtrip():
    diff = extract_diff(BUGGY, FIXED, 3)
    assert parse_diff(serialize_diff(diff), 3) == diff


# --- parsing -----------------------------------------------------------------


def test_parse_add():
    diff = parse_diff([MOD_START, "a", "b", "c", "x", "y"], 3)
    assert diff.ops == (ChangeOp(("a", "b", "c"), ("x", "y")),)
    assert diff.ops[0].kind == "add"


def test_parse_delete():
    diff = parse_diff([MOD_START, "a", "b", "c", MOD_END, "d", "e", "f"], 3)
    assert diff.ops == (ChangeOp(("a", "b", "c"), (), ("d", "e", "f")),)
    assert diff.ops[0].kind == "delete"


def test_parse_replace():
    diff = parse_diff([MOD_START, "a", "b", "x", MOD_END, "c", "d"], 2)
    assert diff.ops[0].kind == "replace"
    assert diff.ops[0].insertion == ("x",)


def test_parse_stray_modend_is_malformed():
    with pytest.raises(MalformedDiff):
        parse_diff([MOD_END, "a"], 1)


def test_parse_missing_start_is_malformed():
    with pytest.raises(MalformedDiff):
        parse_diff(["a", "b"], 1)


def test_parse_short_context_is_malformed():
    with pytest.raises(MalformedDiff):
        parse_diff([MOD_START, "a", "b"], 3)
    with pytest.raises(MalformedDiff):
        parse_diff([MOD_START, "a", "b", "c", "x", MOD_END, "d"], 3)


def test_parse_add_without_insertion_is_malformed():
    with pytest.raises(MalformedDiff):
        parse_diff([MOD_START, "a", "b", "c", MOD_START, "d", "e", "f", "x"], 3)


# --- extraction --------------------------------------------------------------


def test_extract_identical_streams_empty_diff():
    diff = extract_diff(["a", "b"], ["a", "b"], 3)
    assert diff.ops == ()


def test_extract_empty_source_rejected():
    with pytest.raises(ValueError):
        extract_diff([], ["a"], 3)


def test_extract_single_replace_example():
    diff = extract_diff("a b c d e".split(), "a b c X e".split(), 1)
    assert diff.ops == (ChangeOp(("c",), ("X",), ("e",)),)


def test_extract_start_of_stream_pads_with_bof():
    diff = extract_diff("a b c".split(), "X a b c".split(), 2)
    assert diff.ops[0].start_ctx == (BOF, BOF)
    assert tuple(diff.ops[0].insertion) == ("X",)


def test_extract_end_of_stream_pads_with_eof():
    diff = extract_diff("a b c".split(), "a b".split(), 2)
    op = diff.ops[0]
    assert op.kind == "delete"
    assert op.end_ctx == (EOF, EOF)


def test_extract_coalesces_nearby_changes():
    src = "a b c d e f".split()
    tgt = "a X c Y e f".split()
    # gap between the two replacements is 1 unchanged token < n_context=2
    diff = extract_diff(src, tgt, 2)
    assert len(diff.ops) == 1
    assert diff.ops[0].kind == "replace"
    assert diff.ops[0].insertion == ("X", "c", "Y")


def test_extract_keeps_separated_changes_apart():
    src = "a b c d e f g".split()
    tgt = "a X c d e Y g".split()
    diff = extract_diff(src, tgt, 2)
    assert len(diff.ops) == 2


def test_diff_blocks_matches_brute_force_lcs():
    rng = random.Random(7)
    for _ in range(200):
        n = rng.randrange(0, 14)
        m = rng.randrange(0, 14)
        a = [rng.choice("abcd") for _ in range(n)]
        b = [rng.choice("abcd") for _ in range(m)]
        blocks = diff_blocks(a, b)
        edit = sum((i2 - i1) + (j2 - j1) for i1, i2, j1, j2 in blocks)
        expected = n + m - 2 * brute_force_lcs(a, b)
        assert edit == expected, (a, b, blocks)


# --- enumeration -------------------------------------------------------------


def test_figure_repair_interpretation_counts():
    diff3 = extract_diff(BUGGY, FIXED, 3)
    apps3 = enumerate_applications(BUGGY, diff3, cap=None)
    assert apps3 == [FIXED]
    diff2 = extract_diff(BUGGY, FIXED, 2)
    apps2 = enumerate_applications(BUGGY, diff2, cap=None)
    assert len(apps2) == 3
    assert FIXED in apps2


def test_enumerate_empty_diff_returns_source():
    src = "a b c".split()
    assert enumerate_applications(src, TokenContextDiff(3), cap=None) == [src]


def test_enumerate_unmatched_context_raises():
    diff = TokenContextDiff(1, (ChangeOp(("z",), ("X",)),))
    with pytest.raises(NoInterpretation):
        enumerate_applications("a b c".split(), diff, cap=None)


def test_enumerate_cap_and_order():
    src = "a b a b a".split()
    diff = TokenContextDiff(1, (ChangeOp(("a",), ("X",)),))
    all_apps = enumerate_applications(src, diff, cap=None)
    assert all_apps == [
        "a X b a b a".split(),
        "a b a X b a".split(),
        "a b a b a X".split(),
    ]
    assert enumerate_applications(src, diff, cap=2) == all_apps[:2]


def test_count_repeated_context_add():
    src = "a b a b a".split()
    diff = TokenContextDiff(1, (ChangeOp(("a",), ("X",)),))
    assert count_interpretations(src, diff) == 3


def test_count_unique_context_is_one():
    src = "a b c".split()
    diff = TokenContextDiff(1, (ChangeOp(("b",), ("X",)),))
    assert count_interpretations(src, diff) == 1


def test_count_inapplicable_is_zero():
    diff = TokenContextDiff(1, (ChangeOp(("z",), ("X",)),))
    assert count_interpretations("a b".split(), diff) == 0


def test_count_matches_brute_force_oracle():
    rng = random.Random(11)
    for _ in range(150):
        src = [rng.choice("abcde") for _ in range(rng.randrange(4, 30))]
        tgt = mutate(src, rng, rng.randrange(1, 3))
        if tgt == src:
            continue
        for n in (1, 2):
            diff = extract_diff(src, tgt, n)
            got = count_interpretations(src, diff)
            want = brute_force_interpretations(src, diff)
            assert got == len(want)
            assert tuple(tgt) in want


# --- randomized soundness ----------------------------------------------------


def mutate(tokens, rng, edits):
    """Random token-level edits (replace/insert/delete spans)."""
    out = list(tokens)
    for _ in range(edits):
        if not out:
            out.insert(0, rng.choice("abcde"))
            continue
        kind = rng.choice(("replace", "insert", "delete"))
        pos = rng.randrange(len(out))
        span = rng.randrange(1, 3)
        if kind == "replace":
            out[pos : pos + span] = [rng.choice("abcde") for _ in range(rng.randrange(1, 3))]
        elif kind == "insert":
            out[pos:pos] = [rng.choice("abcde") for _ in range(rng.randrange(1, 3))]
        else:
            del out[pos : pos + span]
    return out


def test_codec_soundness_randomized():
    rng = random.Random(3)
    alphabet = [f"t{i}" for i in range(40)]
    checked = 0
    for _ in range(300):
        src = [rng.choice(alphabet) for _ in range(rng.randrange(10, 80))]
        tgt = mutate(src, rng, rng.randrange(1, 5))
        if tgt == src or not tgt:
            continue
        checked += 1
        for n in (1, 2, 3):
            diff = extract_diff(src, tgt, n)
            apps = enumerate_applications(src, diff, cap=None)
            assert tgt in apps, (src, tgt, n)
    assert checked > 250


def test_unique_contexts_give_unique_application():
    # distinct tokens everywhere -> every context matches exactly once
    src = [f"u{i}" for i in range(30)]
    tgt = list(src)
    tgt[10:12] = ["x1", "x2", "x3"]
    for n in (1, 2, 3):
        diff = extract_diff(src, tgt, n)
        assert enumerate_applications(src, diff, cap=None) == [tgt]


def test_monotone_ambiguity_under_context_truncation():
    rng = random.Random(23)
    for _ in range(80):
        src = [rng.choice("abc") for _ in range(rng.randrange(6, 25))]
        tgt = mutate(src, rng, 1)
        if tgt == src:
            continue
        wide = extract_diff(src, tgt, 3)
        narrowed = TokenContextDiff(
            2,
            tuple(
                ChangeOp(op.start_ctx[-2:], op.insertion, None if op.end_ctx is None else op.end_ctx[:2])
                for op in wide.ops
            ),
        )
        assert count_interpretations(src, narrowed) >= count_interpretations(src, wide)


def test_extract_from_token_streams():
    before = tokenize("int f(int x) { return x; }")
    after = tokenize("int f(int x) { return x + 1; }")
    diff = extract_diff(before, after, 3)
    apps = enumerate_applications(before, diff, cap=None)
    assert lexemes(after) in apps
