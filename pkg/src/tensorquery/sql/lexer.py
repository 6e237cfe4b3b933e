"""Tokenizer for the SQL subset.

Keywords are matched case-insensitively by the parser; identifier tokens
keep their original spelling (identifiers are case-sensitive).  String
literals use double quotes.
"""

from __future__ import annotations

from dataclasses import dataclass


class SqlSyntaxError(ValueError):
    """Lex/parse failure with a byte offset and the expected-token set."""

    def __init__(self, message: str, offset: int, expected: tuple[str, ...] = ()):
        hint = f" (expected {', '.join(expected)})" if expected else ""
        super().__init__(f"{message} at offset {offset}{hint}")
        self.offset = offset
        self.expected = expected


@dataclass(frozen=True)
class Token:
    kind: str  # WORD | NUMBER | STRING | SYMBOL | EOF
    text: str
    offset: int


_SYMBOLS = ("<=", ">=", "<>", "(", ")", ",", "*", "=", "<", ">")


def tokenize(sql: str) -> list[Token]:
    tokens: list[Token] = []
    i, n = 0, len(sql)
    while i < n:
        ch = sql[i]
        if ch.isspace():
            i += 1
            continue
        if ch == '"':
            j = sql.find('"', i + 1)
            if j < 0:
                raise SqlSyntaxError("unterminated string literal", i)
            tokens.append(Token("STRING", sql[i + 1 : j], i))
            i = j + 1
            continue
        if ch.isdigit() or (ch == "." and i + 1 < n and sql[i + 1].isdigit()):
            j = i
            seen_dot = False
            while j < n and (sql[j].isdigit() or (sql[j] == "." and not seen_dot)):
                seen_dot = seen_dot or sql[j] == "."
                j += 1
            tokens.append(Token("NUMBER", sql[i:j], i))
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (sql[j].isalnum() or sql[j] == "_"):
                j += 1
            tokens.append(Token("WORD", sql[i:j], i))
            i = j
            continue
        for sym in _SYMBOLS:
            if sql.startswith(sym, i):
                tokens.append(Token("SYMBOL", sym, i))
                i += len(sym)
                break
        else:
            raise SqlSyntaxError(f"unexpected character {ch!r}", i)
    tokens.append(Token("EOF", "", n))
    return tokens
