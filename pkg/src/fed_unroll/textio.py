"""Plain-text numeric block format shared by matrices, datasets and checkpoints.

Values are written with ``repr(float)``, the shortest string that parses back
to the identical double, so every file round-trips bit-exactly.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np


class FormatError(ValueError):
    """Raised when a numeric text file cannot be parsed."""


def format_row(values) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(values, dtype=float).ravel())


def format_block(mat: np.ndarray) -> str:
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    return "".join(format_row(row) + "\n" for row in mat)


class TokenReader:
    """Sequential reader over whitespace-separated tokens."""

    def __init__(self, text: str):
        self._tokens: Iterator[str] = iter(text.split())
        self.consumed = 0

    def _next(self) -> str:
        try:
            tok = next(self._tokens)
        except StopIteration:
            raise FormatError("unexpected end of data") from None
        self.consumed += 1
        return tok

    def int(self) -> int:
        tok = self._next()
        try:
            value = int(tok)
        except ValueError:
            raise FormatError(f"expected integer, got {tok!r}") from None
        if value < 0:
            raise FormatError(f"negative dimension {value}")
        return value

    def float(self) -> float:
        tok = self._next()
        try:
            return float(tok)
        except ValueError:
            raise FormatError(f"expected number, got {tok!r}") from None

    def block(self, rows: int, cols: int) -> np.ndarray:
        out = np.empty(rows * cols, dtype=float)
        for i in range(rows * cols):
            out[i] = self.float()
        return out.reshape(rows, cols)

    def expect_end(self) -> None:
        extra = next(self._tokens, None)
        if extra is not None:
            raise FormatError(f"trailing data after declared content: {extra!r}")


def dumps_matrix(mat: np.ndarray) -> str:
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    return f"{mat.shape[0]} {mat.shape[1]}\n" + format_block(mat)


def loads_matrix(text: str) -> np.ndarray:
    reader = TokenReader(text)
    rows, cols = reader.int(), reader.int()
    mat = reader.block(rows, cols)
    reader.expect_end()
    return mat
