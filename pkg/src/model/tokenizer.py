"""Lowercased word tokenizer with a corpus-built vocabulary."""
import re
from typing import Iterable

import numpy as np
from pydantic import BaseModel, Field, PrivateAttr

from src.types import IntArray

PAD_ID = 0
UNK_ID = 1
_RESERVED = 2
_TOKEN_RE = re.compile(r"[a-z0-9]+")


def split_words(text: str) -> list[str]:
    """Lowercase, then split on anything that is not a letter or digit."""
    return _TOKEN_RE.findall(text.lower())


class Vocab(BaseModel):
    """Token table; ids 0 (pad) and 1 (unknown) are reserved, words start at 2."""
    tokens: tuple[str, ...] = ()
    max_len: int = Field(default=16, gt=0)

    _index: dict[str, int] = PrivateAttr(default_factory=dict)

    def model_post_init(self, __context) -> None:
        self._index = {tok: i + _RESERVED for i, tok in enumerate(self.tokens)}

    @classmethod
    def build(cls, corpus: Iterable[str], max_len: int = 16) -> "Vocab":
        """Sorted unique tokens of ``corpus``; stable for a given set of captions."""
        words = sorted({w for text in corpus for w in split_words(text)})
        return cls(tokens=tuple(words), max_len=max_len)

    @property
    def size(self) -> int:
        return len(self.tokens) + _RESERVED

    def id_of(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def covers(self, text: str) -> bool:
        return all(w in self._index for w in split_words(text))


def tokenize(vocab: Vocab, text: str) -> IntArray:
    """Ids for ``text`` truncated or padded to ``vocab.max_len``."""
    ids = np.full(vocab.max_len, PAD_ID, dtype=np.int64)
    words = split_words(text)[: vocab.max_len]
    for i, w in enumerate(words):
        ids[i] = vocab.id_of(w)
    return ids


def tokenize_batch(vocab: Vocab, texts: Iterable[str]) -> IntArray:
    rows = [tokenize(vocab, t) for t in texts]
    if not rows:
        return np.empty((0, vocab.max_len), dtype=np.int64)
    return np.stack(rows)
