"""Token alphabets and fixed-length padded index sequences.

Corpora are plain UTF-8 text, one tokenized string per line. Tokens are
bracket-delimited (``[C][=O]``) by default; a whitespace mode exists for
generic corpora.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD_TOKEN = "[pad]"

_BRACKET_TOKEN = re.compile(r"\[[^\[\]]*\]")


class MalformedStringError(ValueError):
    pass


def tokenize(string: str, mode: str = "bracket") -> list[str]:
    """Split a tokenized string into its tokens.

    Raises:
        MalformedStringError: on unbalanced brackets or stray characters
            between bracket tokens.
    """
    if mode == "whitespace":
        return string.split()
    if mode != "bracket":
        raise ValueError(f"unknown tokenization mode {mode!r}")
    tokens = []
    pos = 0
    for match in _BRACKET_TOKEN.finditer(string):
        if match.start() != pos:
            break
        tokens.append(match.group())
        pos = match.end()
    if pos != len(string):
        raise MalformedStringError(f"malformed token string at offset {pos}: {string!r}")
    return tokens


@dataclass(frozen=True)
class TokenAlphabet:
    """Bijective token <-> index map. The pad token is always last."""

    tokens: tuple[str, ...]
    mode: str = "bracket"
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("alphabet tokens must be distinct")
        if not self.tokens or self.tokens[-1] != PAD_TOKEN:
            raise ValueError(f"alphabet must end with the pad token {PAD_TOKEN!r}")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def pad_index(self) -> int:
        return len(self.tokens) - 1

    def index(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise KeyError(f"unknown token {token!r}") from None

    def join(self, tokens: Iterable[str]) -> str:
        return (" " if self.mode == "whitespace" else "").join(tokens)

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path, mode: str = "bracket") -> TokenAlphabet:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(tuple(lines), mode=mode)


@dataclass(frozen=True)
class TokenSequence:
    """Fixed-length index sequence; padding may only appear as a suffix."""

    indices: tuple[int, ...]

    def __len__(self):
        return len(self.indices)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.indices, dtype=dtype or np.int64)


def build_alphabet(corpus: Sequence[str], mode: str = "bracket") -> TokenAlphabet:
    """Alphabet of every distinct token in first-occurrence order, pad last."""
    if len(corpus) == 0:
        raise ValueError("cannot build an alphabet from an empty corpus")
    seen: dict[str, None] = {}
    for string in corpus:
        for tok in tokenize(string, mode):
            if tok == PAD_TOKEN:
                raise MalformedStringError(f"{PAD_TOKEN!r} is reserved for padding")
            seen.setdefault(tok, None)
    return TokenAlphabet(tuple(seen) + (PAD_TOKEN,), mode=mode)


def encode(string: str, alphabet: TokenAlphabet, length: int) -> TokenSequence:
    tokens = tokenize(string, alphabet.mode)
    if len(tokens) > length:
        raise ValueError(f"string has {len(tokens)} tokens, longer than N={length}")
    idx = [alphabet.index(t) for t in tokens]
    idx += [alphabet.pad_index] * (length - len(idx))
    return TokenSequence(tuple(idx))


def check_suffix_padding(indices: np.ndarray, pad_index: int) -> None:
    """Raise if any row has a non-pad index after a pad index."""
    indices = np.atleast_2d(indices)
    is_pad = indices == pad_index
    after_pad = np.logical_or.accumulate(is_pad, axis=1)
    bad = np.flatnonzero((after_pad & ~is_pad).any(axis=1))
    if bad.size:
        raise ValueError(f"pad followed by non-pad token in row {int(bad[0])}")


def suffix_pad(indices: np.ndarray, pad_index: int) -> np.ndarray:
    """Replace everything after the first pad in each row by pad."""
    indices = np.array(indices, copy=True)
    after_pad = np.logical_or.accumulate(indices == pad_index, axis=-1)
    indices[after_pad] = pad_index
    return indices


def decode(seq, alphabet: TokenAlphabet) -> str:
    idx = np.asarray(seq, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= alphabet.size):
        raise IndexError(f"index out of range for alphabet of size {alphabet.size}")
    check_suffix_padding(idx, alphabet.pad_index)
    return alphabet.join(alphabet.tokens[i] for i in idx if i != alphabet.pad_index)


def decode_many(indices: np.ndarray, alphabet: TokenAlphabet) -> list[str]:
    return [decode(row, alphabet) for row in np.atleast_2d(indices)]


def decode_samples(indices: np.ndarray, alphabet: TokenAlphabet) -> list[str]:
    """Decode generated rows, truncating each at its first pad.

    Exact TN samples range over all d**N index strings, so a pad may be
    followed by real tokens; those tokens are dropped, matching the GAN rule.
    """
    return decode_many(suffix_pad(np.atleast_2d(indices), alphabet.pad_index), alphabet)


@dataclass(frozen=True)
class SequenceDataset:
    """Encoded corpus. ``indices`` is a read-only (D, N) integer array."""

    indices: np.ndarray
    alphabet: TokenAlphabet

    def __post_init__(self):
        idx = np.array(self.indices, dtype=np.int64)
        if idx.ndim != 2 or idx.shape[0] < 1:
            raise ValueError("dataset needs at least one sequence")
        if idx.min() < 0 or idx.max() >= self.alphabet.size:
            raise ValueError("dataset index outside alphabet")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @property
    def size(self) -> int:
        return self.indices.shape[0]

    @property
    def length(self) -> int:
        return self.indices.shape[1]

    @property
    def sequences(self) -> list[TokenSequence]:
        return [TokenSequence(tuple(int(i) for i in row)) for row in self.indices]

    def strings(self) -> list[str]:
        return decode_many(self.indices, self.alphabet)

    def __len__(self):
        return self.size


def dataset_from_strings(strings: Sequence[str], length: int | None = None,
                         mode: str = "bracket",
                         alphabet: TokenAlphabet | None = None) -> SequenceDataset:
    alphabet = alphabet or build_alphabet(strings, mode)
    max_len = max(len(tokenize(s, alphabet.mode)) for s in strings)
    if length is None:
        length = max_len
    elif length < max_len:
        raise ValueError(f"N={length} is shorter than the longest string ({max_len} tokens)")
    if length < 1:
        raise ValueError("sequence length N must be >= 1")
    rows = [encode(s, alphabet, length).indices for s in strings]
    return SequenceDataset(np.array(rows, dtype=np.int64).reshape(len(rows), length), alphabet)


def load_dataset(path, length: int | None = None, mode: str = "bracket") -> SequenceDataset:
    """Read a corpus file. Blank lines are skipped."""
    text = Path(path).read_text(encoding="utf-8")
    strings = []
    for lineno, line in enumerate(text.split("\n"), start=1):
        line = line.rstrip("\r")
        if not line.strip():
            continue
        try:
            tokenize(line, mode)
        except MalformedStringError as exc:
            raise MalformedStringError(f"{path}:{lineno}: {exc}") from None
        strings.append(line)
    if not strings:
        raise ValueError(f"{path}: no sequences found")
    return dataset_from_strings(strings, length=length, mode=mode)
