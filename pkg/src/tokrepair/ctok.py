"""Self-contained lexer for un-preprocessed C source.

Produces flat token streams with line provenance and renders them back to
text. The correctness contract is round-trip stability: re-tokenizing the
rendered text yields the same lexeme sequence. Byte-level fidelity of the
original layout is not preserved (and not needed downstream).
"""

import string
from dataclasses import dataclass

IDENTIFIER = "identifier"
KEYWORD = "keyword"
NUMBER = "number"
STRING_LITERAL = "string-literal"
CHAR_LITERAL = "char-literal"
PUNCTUATOR = "punctuator"
PREPROCESSOR = "preprocessor"

KEYWORDS = frozenset(
    """
    auto break case char const continue default do double else enum extern
    float for goto if inline int long register restrict return short signed
    sizeof static struct switch typedef union unsigned void volatile
    _Alignas _Alignof _Atomic _Bool _Complex _Generic _Imaginary _Noreturn
    _Static_assert _Thread_local
    """.split()
)

# Longest-match table of C11 punctuators, digraphs included.
PUNCTUATORS = sorted(
    """
    %:%: <<= >>= ... -> ++ -- << >> <= >= == != && || *= /= %= += -= &= ^= |=
    ## <: :> <% %> %: [ ] ( ) { } . & * + - ~ ! / % < > ^ | ? : ; = , #
    """.split(),
    key=len,
    reverse=True,
)
_PUNCT_BY_FIRST = {}
for _p in PUNCTUATORS:
    _PUNCT_BY_FIRST.setdefault(_p[0], []).append(_p)

_IDENT_START = frozenset(string.ascii_letters + "_")
_IDENT_CONT = frozenset(string.ascii_letters + string.digits + "_")
_DIGITS = frozenset(string.digits)
_LITERAL_PREFIXES = frozenset({"L", "u", "U", "u8"})


class LexError(ValueError):
    """Unterminated literal/comment or similar unrecoverable lexical problem."""

    def __init__(self, message, line):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True, slots=True)
class Token:
    text: str
    kind: str
    line: int


TokenStream = list[Token]


class _Scanner:
    def __init__(self, source: str):
        self.src = source
        self.n = len(source)
        self.i = 0
        self.line = 1

    def peek(self, offset=0) -> str:
        j = self.i + offset
        return self.src[j] if j < self.n else ""

    def skip_space_and_comments(self, stop_at_newline=False) -> bool:
        """Advance past whitespace, comments and line splices.

        Returns True if a (non-spliced) newline was crossed. With
        stop_at_newline the scanner halts *before* consuming it.
        """
        crossed = False
        while self.i < self.n:
            c = self.src[self.i]
            if c == "\n":
                if stop_at_newline:
                    return True
                self.i += 1
                self.line += 1
                crossed = True
            elif c in " \t\r\f\v":
                self.i += 1
            elif c == "\\" and self.peek(1) == "\n":
                self.i += 2
                self.line += 1
            elif c == "/" and self.peek(1) == "/":
                while self.i < self.n and self.src[self.i] != "\n":
                    self.i += 1
            elif c == "/" and self.peek(1) == "*":
                start_line = self.line
                self.i += 2
                while True:
                    if self.i >= self.n:
                        raise LexError("unterminated block comment", start_line)
                    if self.src[self.i] == "*" and self.peek(1) == "/":
                        self.i += 2
                        break
                    if self.src[self.i] == "\n":
                        self.line += 1
                    self.i += 1
            else:
                break
        return crossed

    def lex_one(self) -> tuple[str, str]:
        """Lex exactly one token at the current position; returns (text, kind)."""
        c = self.src[self.i]
        if c in _IDENT_START:
            start = self.i
            while self.i < self.n and self.src[self.i] in _IDENT_CONT:
                self.i += 1
            text = self.src[start : self.i]
            nxt = self.peek()
            if text in _LITERAL_PREFIXES and nxt in "\"'":
                # Wide/unicode string or char literal: prefix glued to the quote.
                body, kind = self._lex_quoted(nxt)
                return text + body, kind
            kind = KEYWORD if text in KEYWORDS else IDENTIFIER
            return text, kind
        if c in _DIGITS or (c == "." and self.peek(1) in _DIGITS):
            return self._lex_ppnumber(), NUMBER
        if c in "\"'":
            return self._lex_quoted(c)
        for punct in _PUNCT_BY_FIRST.get(c, ()):
            if self.src.startswith(punct, self.i):
                self.i += len(punct)
                return punct, PUNCTUATOR
        # Unknown printable character (e.g. @ or $ in asm-heavy code): keep it
        # as a one-character token so the stream stays round-trip stable.
        self.i += 1
        return c, PUNCTUATOR

    def _lex_ppnumber(self) -> str:
        # Preprocessing-number: covers every C integer/float literal form
        # (hex, octal, exponents, suffixes) and re-lexes to itself.
        start = self.i
        self.i += 1
        while self.i < self.n:
            c = self.src[self.i]
            if c in _IDENT_CONT or c == ".":
                self.i += 1
            elif c in "+-" and self.src[self.i - 1] in "eEpP":
                self.i += 1
            else:
                break
        return self.src[start : self.i]

    def _lex_quoted(self, quote: str) -> tuple[str, str]:
        start_line = self.line
        what = "string literal" if quote == '"' else "char literal"
        parts = [quote]
        self.i += 1
        while True:
            if self.i >= self.n:
                raise LexError(f"unterminated {what}", start_line)
            c = self.src[self.i]
            if c == "\n":
                raise LexError(f"unterminated {what}", start_line)
            if c == "\\":
                if self.peek(1) == "\n":
                    # Line splice inside a literal: drop it from the lexeme.
                    self.i += 2
                    self.line += 1
                    continue
                if self.i + 1 >= self.n:
                    raise LexError(f"unterminated {what}", start_line)
                parts.append(self.src[self.i : self.i + 2])
                self.i += 2
                continue
            parts.append(c)
            self.i += 1
            if c == quote:
                break
        text = "".join(parts)
        return text, STRING_LITERAL if quote == '"' else CHAR_LITERAL


def tokenize(source: str) -> TokenStream:
    """Lex arbitrary C text into a flat token stream.

    Comments are dropped, string/char literals stay single tokens,
    multi-character operators stay single tokens, and every token on a
    preprocessor directive line is flagged as such. Raises LexError (with
    the offending line) on unterminated literals or comments.
    """
    sc = _Scanner(source)
    tokens: TokenStream = []
    at_line_start = True
    while True:
        crossed = sc.skip_space_and_comments()
        if crossed:
            at_line_start = True
        if sc.i >= sc.n:
            break
        if at_line_start and sc.src[sc.i] == "#":
            _lex_directive(sc, tokens)
            at_line_start = True
            continue
        line = sc.line
        text, kind = sc.lex_one()
        tokens.append(Token(text, kind, line))
        at_line_start = False
    return tokens


def _lex_directive(sc: _Scanner, tokens: TokenStream) -> None:
    # The directive extends to the next newline; splices continue it.
    while sc.i < sc.n:
        hit_newline = sc.skip_space_and_comments(stop_at_newline=True)
        if hit_newline:
            sc.i += 1
            sc.line += 1
            return
        if sc.i >= sc.n:
            return
        line = sc.line
        text, _ = sc.lex_one()
        tokens.append(Token(text, PREPROCESSOR, line))


def lexemes(stream) -> list[str]:
    """Lexeme texts of a stream; passes through plain string sequences."""
    return [t.text if isinstance(t, Token) else t for t in stream]


def detokenize(stream) -> str:
    """Render a token stream (or plain lexeme sequence) as space-joined text."""
    return " ".join(lexemes(stream))
