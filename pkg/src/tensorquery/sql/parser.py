"""Recursive-descent parser producing the AST in :mod:`tensorquery.sql.ast`."""

from __future__ import annotations

from typing import Union

from .ast import (
    Aggregate,
    ColumnRef,
    Comparison,
    FromSource,
    FuncCall,
    OrderSpec,
    SelectItem,
    SelectQuery,
    Star,
    SubquerySource,
    TableRef,
)
from .lexer import SqlSyntaxError, Token, tokenize

_KEYWORDS = {
    "SELECT", "FROM", "WHERE", "GROUP", "BY", "ORDER", "LIMIT",
    "AND", "ASC", "DESC", "COUNT", "SUM", "AVG",
}


class _Parser:
    def __init__(self, tokens: list[Token]):
        self._tokens = tokens
        self._pos = 0

    def _peek(self) -> Token:
        return self._tokens[self._pos]

    def _advance(self) -> Token:
        tok = self._tokens[self._pos]
        if tok.kind != "EOF":
            self._pos += 1
        return tok

    def _at_keyword(self, *words: str) -> bool:
        tok = self._peek()
        return tok.kind == "WORD" and tok.text.upper() in words

    def _match_keyword(self, word: str) -> bool:
        if self._at_keyword(word):
            self._advance()
            return True
        return False

    def _expect_keyword(self, word: str) -> Token:
        if not self._at_keyword(word):
            tok = self._peek()
            raise SqlSyntaxError(f"unexpected {tok.text or 'end of input'!r}", tok.offset, (word,))
        return self._advance()

    def _match_symbol(self, sym: str) -> bool:
        tok = self._peek()
        if tok.kind == "SYMBOL" and tok.text == sym:
            self._advance()
            return True
        return False

    def _expect_symbol(self, sym: str) -> Token:
        tok = self._peek()
        if tok.kind != "SYMBOL" or tok.text != sym:
            raise SqlSyntaxError(f"unexpected {tok.text or 'end of input'!r}", tok.offset, (sym,))
        return self._advance()

    def _expect_identifier(self) -> str:
        tok = self._peek()
        if tok.kind != "WORD" or tok.text.upper() in _KEYWORDS:
            raise SqlSyntaxError(
                f"unexpected {tok.text or 'end of input'!r}", tok.offset, ("identifier",)
            )
        return self._advance().text

    # grammar ---------------------------------------------------------------

    def parse_query(self) -> SelectQuery:
        self._expect_keyword("SELECT")
        items = self._select_items()
        self._expect_keyword("FROM")
        source = self._from_source()
        where: tuple[Comparison, ...] = ()
        if self._match_keyword("WHERE"):
            where = self._conjunction()
        group_by: tuple[str, ...] = ()
        if self._match_keyword("GROUP"):
            self._expect_keyword("BY")
            group_by = self._identifier_list()
        order_by = None
        if self._match_keyword("ORDER"):
            self._expect_keyword("BY")
            column = self._expect_identifier()
            descending = False
            if self._match_keyword("DESC"):
                descending = True
            else:
                self._match_keyword("ASC")
            order_by = OrderSpec(column, descending)
        limit = None
        if self._match_keyword("LIMIT"):
            tok = self._peek()
            if tok.kind != "NUMBER" or "." in tok.text:
                raise SqlSyntaxError("LIMIT needs an integer", tok.offset, ("integer",))
            limit = int(self._advance().text)
        return SelectQuery(items, source, where, group_by, order_by, limit)

    def _select_items(self) -> tuple[SelectItem, ...]:
        if self._match_symbol("*"):
            return (Star(),)
        items = [self._select_item()]
        while self._match_symbol(","):
            items.append(self._select_item())
        return tuple(items)

    def _select_item(self) -> SelectItem:
        tok = self._peek()
        if tok.kind == "WORD":
            upper = tok.text.upper()
            if upper in ("COUNT", "SUM", "AVG"):
                self._advance()
                self._expect_symbol("(")
                if upper == "COUNT":
                    self._expect_symbol("*")
                    self._expect_symbol(")")
                    return Aggregate("count", None)
                arg = self._expect_identifier()
                self._expect_symbol(")")
                return Aggregate(upper.lower(), arg)
        name = self._expect_identifier()
        if self._match_symbol("("):
            args = self._identifier_list()
            self._expect_symbol(")")
            return FuncCall(name, args)
        return ColumnRef(name)

    def _from_source(self) -> FromSource:
        if self._match_symbol("("):
            sub = self.parse_query()
            self._expect_symbol(")")
            return SubquerySource(sub)
        name = self._expect_identifier()
        if self._match_symbol("("):
            args = self._identifier_list()
            self._expect_symbol(")")
            return FuncCall(name, args)
        return TableRef(name)

    def _identifier_list(self) -> tuple[str, ...]:
        names = [self._expect_identifier()]
        while self._match_symbol(","):
            names.append(self._expect_identifier())
        return tuple(names)

    def _conjunction(self) -> tuple[Comparison, ...]:
        comparisons = [self._comparison()]
        while self._match_keyword("AND"):
            comparisons.append(self._comparison())
        return tuple(comparisons)

    def _comparison(self) -> Comparison:
        column = self._expect_identifier()
        tok = self._peek()
        if tok.kind != "SYMBOL" or tok.text not in ("=", "<>", "<", ">", "<=", ">="):
            raise SqlSyntaxError(
                f"unexpected {tok.text or 'end of input'!r}",
                tok.offset,
                ("=", "<>", "<", ">", "<=", ">="),
            )
        op = self._advance().text
        literal = self._literal()
        return Comparison(column, op, literal)

    def _literal(self) -> Union[int, float, str]:
        tok = self._peek()
        if tok.kind == "STRING":
            return self._advance().text
        if tok.kind == "NUMBER":
            text = self._advance().text
            return float(text) if "." in text else int(text)
        raise SqlSyntaxError(
            f"unexpected {tok.text or 'end of input'!r}", tok.offset, ("literal",)
        )


def parse(sql: str) -> SelectQuery:
    """Parse one SELECT statement; raises SqlSyntaxError with byte offset."""
    parser = _Parser(tokenize(sql))
    query = parser.parse_query()
    tok = parser._peek()
    if tok.kind != "EOF":
        raise SqlSyntaxError(f"trailing input {tok.text!r}", tok.offset, ("end of input",))
    return query
