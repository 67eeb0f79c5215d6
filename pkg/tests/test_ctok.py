import pytest

from tokrepair import ctok
from tokrepair.ctok import LexError, tokenize, detokenize, lexemes

CORPUS = [
    "int a=0;",
    "/*c*/ x++;",
    """
#include <stdio.h>
#define MAX(a, b) ((a) > (b) ? (a) : (b))

static int add(int a, int b) {
    // sum two ints
    return a + b;
}
""",
    """
unsigned long hash(const char *s) {
    unsigned long h = 5381UL;
    while (*s) h = ((h << 5) + h) ^ (unsigned char)*s++;
    return h;
}
""",
    r"""
const char *msg = "he said \"hi\"\n";
char tab = '\t';
char q = '\'';
""",
    """
double nums[] = { .5f, 1e-3, 0x1.8p3, 0755, 0xFFul, 1.0E+6 };
""",
    """
#define JOIN(a, b) a ## b
#define LONG_MACRO(x) \\
    do { (x)->flags |= 1; } while (0)
int y = JOIN(foo, bar);
""",
    """
struct pt { int x, y; };
int norm2(struct pt *p) { return p->x * p->x + p->y * p->y; }
""",
]


def test_simple_declaration():
    assert lexemes(tokenize("int a=0;")) == ["int", "a", "=", "0", ";"]


def test_comment_removed():
    assert lexemes(tokenize("/*c*/ x++;")) == ["x", "++", ";"]


def test_line_comment_removed():
    assert lexemes(tokenize("x; // trailing\ny;")) == ["x", ";", "y", ";"]


def test_multichar_operators_single_tokens():
    src = "a <<= b; c->d; e <= f; g ... ; h != i;"
    toks = lexemes(tokenize(src))
    for op in ("<<=", "->", "<=", "...", "!="):
        assert op in toks


def test_string_and_char_literals_single_tokens():
    toks = tokenize(r'printf("a b \"c\"", '"'x'"');')
    texts = lexemes(toks)
    assert r'"a b \"c\""' in texts
    assert "'x'" in texts
    kinds = {t.text: t.kind for t in toks}
    assert kinds[r'"a b \"c\""'] == ctok.STRING_LITERAL
    assert kinds["'x'"] == ctok.CHAR_LITERAL


def test_wide_string_prefix_stays_glued():
    toks = lexemes(tokenize('wchar_t *w = L"wide";'))
    assert 'L"wide"' in toks


def test_preprocessor_tokens_flagged():
    toks = tokenize("#include <stdio.h>\nint x;")
    pre = [t for t in toks if t.kind == ctok.PREPROCESSOR]
    assert lexemes(pre) == ["#", "include", "<", "stdio", ".", "h", ">"]
    assert [t.text for t in toks if t.kind != ctok.PREPROCESSOR] == ["int", "x", ";"]


def test_preprocessor_continuation_is_one_directive():
    toks = tokenize("#define F(x) \\\n  ((x) + 1)\nint y;")
    pre = [t for t in toks if t.kind == ctok.PREPROCESSOR]
    assert "define" in lexemes(pre) and ")" in lexemes(pre)
    assert [t.text for t in toks if t.kind != ctok.PREPROCESSOR] == ["int", "y", ";"]


def test_keyword_vs_identifier_kinds():
    toks = tokenize("int foo; return bar;")
    kinds = {t.text: t.kind for t in toks}
    assert kinds["int"] == ctok.KEYWORD
    assert kinds["return"] == ctok.KEYWORD
    assert kinds["foo"] == ctok.IDENTIFIER


def test_line_numbers_non_decreasing():
    for src in CORPUS:
        toks = tokenize(src)
        lines = [t.line for t in toks]
        assert lines == sorted(lines)


def test_no_newlines_or_empty_tokens():
    for src in CORPUS:
        for t in tokenize(src):
            assert t.text
            assert "\n" not in t.text


def test_roundtrip_over_corpus():
    # Oracle: re-tokenizing the rendered stream gives the same lexemes.
    for src in CORPUS:
        toks = tokenize(src)
        rendered = detokenize(toks)
        assert lexemes(tokenize(rendered)) == lexemes(toks)
        # and the rendering is a fixed point from there on
        assert detokenize(tokenize(rendered)) == rendered


def test_detokenize_trivial():
    assert detokenize([]) == ""
    assert detokenize(tokenize("int a=0;")) == "int a = 0 ;"


def test_determinism():
    src = CORPUS[2]
    assert tokenize(src) == tokenize(src)


def test_unterminated_string_reports_line():
    with pytest.raises(LexError) as err:
        tokenize('int a;\nchar *s = "oops;\n')
    assert err.value.line == 2


def test_unterminated_comment_reports_line():
    with pytest.raises(LexError) as err:
        tokenize("x;\n/* never closed\ny;")
    assert err.value.line == 2


def test_pp_number_forms():
    src = "a = 1.5e-3 + 0x1fUL + .25f + 0x1.8p-2;"
    toks = lexemes(tokenize(src))
    for lit in ("1.5e-3", "0x1fUL", ".25f", "0x1.8p-2"):
        assert lit in toks


def test_unknown_character_survives_roundtrip():
    toks = tokenize("a @ b;")
    assert lexemes(toks) == ["a", "@", "b", ";"]
    assert lexemes(tokenize(detokenize(toks))) == ["a", "@", "b", ";"]
