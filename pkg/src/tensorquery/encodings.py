"""Encoded tensors: columns carrying metadata about how values are stored.

Three encodings are supported: plain (raw values), order-preserving
dictionary encoding for strings (codes sort like the strings they stand
for), and probability encoding (PE) where each row is a distribution over
``num_classes`` classes.  PE is what makes counting differentiable: soft
operators consume the probabilities directly.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .tensor import FLOAT_DTYPES, Tensor, softmax, tensor

PE_ROW_SUM_TOL = 1e-6


class EncodingError(ValueError):
    """Encoding invariant violation or wrong-variant access."""


@dataclass(frozen=True)
class StringDictionary:
    """Distinct strings in strictly ascending order; codes are positions."""

    entries: tuple[str, ...]

    def __post_init__(self):
        for prev, cur in zip(self.entries, self.entries[1:]):
            if prev >= cur:
                raise EncodingError(
                    f"dictionary entries must be strictly ascending ({prev!r} !< {cur!r})"
                )

    def __len__(self) -> int:
        return len(self.entries)

    def code_of(self, s: str) -> Optional[int]:
        i = bisect.bisect_left(self.entries, s)
        if i < len(self.entries) and self.entries[i] == s:
            return i
        return None


@dataclass(frozen=True)
class PlainEncoding:
    pass


@dataclass(frozen=True)
class DictionaryEncoding:
    dictionary: StringDictionary


@dataclass(frozen=True)
class ProbabilityEncoding:
    num_classes: int
    labels: Optional[StringDictionary] = None

    def __post_init__(self):
        if self.num_classes < 1:
            raise EncodingError("probability encoding needs num_classes >= 1")
        if self.labels is not None and len(self.labels) != self.num_classes:
            raise EncodingError("label dictionary size must equal num_classes")


Encoding = PlainEncoding | DictionaryEncoding | ProbabilityEncoding

PLAIN = PlainEncoding()


@dataclass(frozen=True)
class EncodedTensor:
    """A tensor plus its encoding; validated on construction."""

    values: Tensor
    encoding: Encoding = field(default=PLAIN)

    def __post_init__(self):
        enc = self.encoding
        v = self.values
        if isinstance(enc, DictionaryEncoding):
            if v.dtype != "int64" or v.data.ndim != 1:
                raise EncodingError("dictionary column must be a 1-d int64 code vector")
            if v.size and (v.data.min() < 0 or v.data.max() >= len(enc.dictionary)):
                raise EncodingError(
                    f"dictionary code out of range [0, {len(enc.dictionary)})"
                )
        elif isinstance(enc, ProbabilityEncoding):
            if v.dtype not in FLOAT_DTYPES or v.data.ndim != 2:
                raise EncodingError("PE column must be a float [n, k] matrix")
            if v.shape[1] != enc.num_classes:
                raise EncodingError(
                    f"PE column has {v.shape[1]} classes, encoding declares {enc.num_classes}"
                )
            d = v.data
            if d.size:
                if d.min() < -PE_ROW_SUM_TOL or d.max() > 1.0 + PE_ROW_SUM_TOL:
                    raise EncodingError("PE entries must lie in [0, 1]")
                sums = d.sum(axis=1)
                if np.max(np.abs(sums - 1.0)) > PE_ROW_SUM_TOL:
                    raise EncodingError("PE rows must sum to 1")

    @property
    def row_count(self) -> int:
        return int(self.values.shape[0]) if self.values.data.ndim else 1

    def is_plain(self) -> bool:
        return isinstance(self.encoding, PlainEncoding)

    def is_dictionary(self) -> bool:
        return isinstance(self.encoding, DictionaryEncoding)

    def is_pe(self) -> bool:
        return isinstance(self.encoding, ProbabilityEncoding)


def plain(values: Tensor) -> EncodedTensor:
    return EncodedTensor(values, PLAIN)


def dict_encode(strings: Sequence[str]) -> EncodedTensor:
    """Dictionary-encode strings; codes are assigned by sorted rank."""
    dictionary = StringDictionary(tuple(sorted(set(strings))))
    codes = np.array(
        [bisect.bisect_left(dictionary.entries, s) for s in strings], dtype=np.int64
    )
    return EncodedTensor(Tensor(codes), DictionaryEncoding(dictionary))


def dict_decode(col: EncodedTensor) -> list[str]:
    if not col.is_dictionary():
        raise EncodingError(f"dict_decode on {type(col.encoding).__name__} column")
    entries = col.encoding.dictionary.entries
    return [entries[c] for c in col.values.data.tolist()]


def pe_encode(logits: Tensor, labels: Optional[StringDictionary] = None) -> EncodedTensor:
    """Turn raw per-row class scores into a PE column via stable softmax.

    Differentiable: gradients flow from soft aggregates back to the logits.
    """
    if logits.data.ndim != 2:
        raise EncodingError(f"pe_encode expects [n, k] logits, got shape {list(logits.shape)}")
    probs = softmax(logits, axis=-1)
    return EncodedTensor(probs, ProbabilityEncoding(int(logits.shape[1]), labels))


def pe_decode(col: EncodedTensor) -> EncodedTensor:
    """Hard per-row argmax of a PE column; ties break to the lowest class.

    Non-differentiable by design: this is the inference-time swap target.
    """
    if not col.is_pe():
        raise EncodingError(f"pe_decode on {type(col.encoding).__name__} column")
    codes = np.argmax(col.values.data, axis=1).astype(np.int64)
    labels = col.encoding.labels
    if labels is not None:
        return EncodedTensor(Tensor(codes), DictionaryEncoding(labels))
    return plain(Tensor(codes))


def pe_from_probabilities(probs: Tensor, labels: Optional[StringDictionary] = None) -> EncodedTensor:
    """Wrap an already row-stochastic matrix as PE (e.g. one-hot tests)."""
    if probs.data.ndim != 2:
        raise EncodingError("PE values must be 2-d")
    return EncodedTensor(probs, ProbabilityEncoding(int(probs.shape[1]), labels))


def one_hot_pe(codes: Sequence[int], num_classes: int, dtype: str = "float64") -> EncodedTensor:
    """Exact one-hot PE column from integer codes."""
    arr = np.asarray(list(codes), dtype=np.int64)
    out = np.zeros((arr.size, num_classes), dtype=dtype)
    if arr.size:
        if arr.min() < 0 or arr.max() >= num_classes:
            raise EncodingError(f"code out of range [0, {num_classes})")
        out[np.arange(arr.size), arr] = 1
    return pe_from_probabilities(tensor(out, dtype=dtype))
