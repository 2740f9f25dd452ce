"""Vocabulary, word-embedding table and fixed-length sentence preparation."""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError

PAD = 0
UNK = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def tokenize(text: str) -> List[str]:
    """Lowercase, then split on whitespace and at punctuation boundaries."""
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    """Token <-> id map with reserved ids 0 (PAD) and 1 (UNK)."""

    def __init__(self, tokens: Iterable[str] = ()):
        self._itos: List[str] = [PAD_TOKEN, UNK_TOKEN]
        self._stoi: Dict[str, int] = {}
        for tok in tokens:
            if tok in self._stoi or tok in (PAD_TOKEN, UNK_TOKEN):
                raise DataError(f"duplicate or reserved token in vocabulary: {tok!r}")
            self._stoi[tok] = len(self._itos)
            self._itos.append(tok)

    def __len__(self) -> int:
        return len(self._itos)

    def __contains__(self, token: str) -> bool:
        return token in self._stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._itos == other._itos

    @property
    def tokens(self) -> List[str]:
        """Non-reserved tokens in id order (id = index + 2)."""
        return self._itos[2:]

    def id_of(self, token: str) -> int:
        return self._stoi.get(token, UNK)

    def token_of(self, idx: int) -> str:
        return self._itos[idx]

    def encode(self, tokens: Sequence[str]) -> List[int]:
        return [self._stoi.get(t, UNK) for t in tokens]

    def save(self, path: Union[str, Path]) -> None:
        text = "".join(tok + "\n" for tok in self.tokens)
        Path(path).write_text(text, encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)


@dataclass
class EmbeddingTable:
    """Trainable d x |V| matrix; column ``i`` embeds token id ``i``."""

    W: T.Tensor

    @property
    def dim(self) -> int:
        return self.W.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.W.shape[1]


def init_embeddings(vocab: Union[Vocabulary, int], d: int, half_range: float,
                    seed: Union[int, np.random.Generator]) -> EmbeddingTable:
    size = vocab if isinstance(vocab, int) else len(vocab)
    if d <= 0:
        raise ConfigError(f"embedding dimension must be positive, got {d}")
    if half_range <= 0:
        raise ConfigError(f"embedding init half-range must be positive, got {half_range}")
    if size < 2:
        raise ConfigError("vocabulary must contain at least the PAD and UNK ids")
    rng = np.random.default_rng(seed)
    W = rng.uniform(-half_range, half_range, size=(d, size))
    W[:, PAD] = 0.0
    return EmbeddingTable(T.Tensor(W, requires_grad=True, name="W"))


@dataclass(frozen=True)
class Sentence:
    """Fixed-length id sequence plus its true (unpadded) length."""

    ids: Tuple[int, ...]
    length: int

    @property
    def padded_length(self) -> int:
        return len(self.ids)


def pad_truncate(ids: Sequence[int], L: int) -> Sentence:
    if L < 1:
        raise ConfigError(f"sequence length must be >= 1, got {L}")
    if len(ids) == 0:
        raise DataError("a sentence must contain at least one token")
    kept = tuple(int(i) for i in ids[:L])
    return Sentence(kept + (PAD,) * (L - len(kept)), len(kept))


def embed(ids: Union[Sentence, Sequence[int]], table: EmbeddingTable) -> T.Tensor:
    """d x L matrix whose column j is ``W[:, ids[j]]``."""
    if isinstance(ids, Sentence):
        ids = ids.ids
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1 or idx.size == 0:
        raise DataError("embed expects a non-empty id sequence")
    if idx.min() < 0 or idx.max() >= table.vocab_size:
        raise DataError(f"token id out of range for vocabulary of size {table.vocab_size}")
    return T.record("embed", (table.W,), table.W.data[:, idx], {"idx": idx})


@T.register_backward("embed")
def _embed_backward(node, g):
    idx = node.saved["idx"]
    keep = idx != PAD
    return (T.ColumnGrad(idx[keep], g[:, keep]),)
