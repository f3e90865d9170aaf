"""WordPiece-style subword tokenizer.

Words are split on whitespace and segmented by greedy longest-prefix match
against the vocabulary; non-initial pieces carry a continuation prefix
(``##`` by default). Encoded sequences are framed ``[CLS] ... [SEP]`` and
padded with ``[PAD]`` (id 0) to a fixed length.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
SPECIALS = (PAD, UNK, CLS, SEP)
_SPECIAL_SET = frozenset(SPECIALS)


class Vocab:
    """Immutable token table; ids follow insertion (file line) order."""

    def __init__(self, tokens: Iterable[str], continuation_prefix: str = "##"):
        tokens = list(tokens)
        if tokens[:4] != list(SPECIALS):
            raise ValueError(f"vocabulary must start with {', '.join(SPECIALS)}")
        index = {}
        for i, tok in enumerate(tokens):
            if tok in index:
                raise ValueError(f"duplicate token {tok!r} at ids {index[tok]} and {i}")
            if not tok or any(c.isspace() for c in tok):
                raise ValueError(f"token at id {i} is empty or contains whitespace")
            index[tok] = i
        self._tokens = tuple(tokens)
        self._index = index
        self.continuation_prefix = continuation_prefix

    def __len__(self):
        return len(self._tokens)

    def __contains__(self, token):
        return token in self._index

    def __eq__(self, other):
        return isinstance(other, Vocab) and self._tokens == other._tokens

    @property
    def tokens(self):
        return self._tokens

    def id(self, token: str) -> int:
        return self._index[token]

    def get(self, token: str, default=None):
        return self._index.get(token, default)

    def token(self, i: int) -> str:
        return self._tokens[i]

    @property
    def pad_id(self):
        return 0

    @property
    def unk_id(self):
        return 1

    @property
    def cls_id(self):
        return 2

    @property
    def sep_id(self):
        return 3

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self._tokens), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        text = Path(path).read_text(encoding="utf-8")
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)


@dataclass(frozen=True)
class TokenizedInput:
    ids: np.ndarray
    mask: np.ndarray
    real_len: int


def _initial_pieces(word: str, prefix: str) -> list[str]:
    return [word[0]] + [prefix + c for c in word[1:]]


def _merge_name(left: str, right: str, prefix: str) -> str:
    return left + right[len(prefix):]


def train_vocab(corpus: Iterable[str], target_size: int, min_freq: int = 1,
                continuation_prefix: str = "##") -> Vocab:
    """Learn a vocabulary by repeatedly merging the most frequent adjacent pair.

    The alphabet is every character seen at least ``min_freq`` times, in both
    its word-initial and continuation forms. Merging stops at ``target_size``
    tokens or when no pair occurs ``min_freq`` times. Ties go to the
    lexicographically smallest pair.
    """
    prefix = continuation_prefix
    word_counts = Counter()
    for line in corpus:
        word_counts.update(line.split())
    if not word_counts:
        raise ValueError("cannot train a vocabulary on an empty corpus")

    char_counts = Counter()
    for word, n in word_counts.items():
        for ch in word:
            char_counts[ch] += n
    alphabet = sorted(ch for ch, n in char_counts.items() if n >= min_freq)
    base = list(SPECIALS)
    for ch in alphabet:
        base.extend([ch, prefix + ch])
    if target_size < len(base):
        raise ValueError(f"target_size {target_size} too small: specials and alphabet need {len(base)}")

    tokens = list(base)
    known = set(tokens)
    # only words fully covered by the alphabet take part in merges
    words = []
    for word in sorted(word_counts):
        if all(ch in char_counts and char_counts[ch] >= min_freq for ch in word):
            words.append([_initial_pieces(word, prefix), word_counts[word]])

    while len(tokens) < target_size:
        pairs = Counter()
        for pieces, n in words:
            for a, b in zip(pieces, pieces[1:]):
                pairs[(a, b)] += n
        best = None
        for pair, n in pairs.items():
            if n < min_freq:
                continue
            if best is None or n > best[1] or (n == best[1] and pair < best[0]):
                best = (pair, n)
        if best is None:
            break
        (left, right), _ = best
        merged = _merge_name(left, right, prefix)
        for entry in words:
            pieces = entry[0]
            if len(pieces) < 2:
                continue
            out = []
            i = 0
            while i < len(pieces):
                if i + 1 < len(pieces) and pieces[i] == left and pieces[i + 1] == right:
                    out.append(merged)
                    i += 2
                else:
                    out.append(pieces[i])
                    i += 1
            entry[0] = out
        if merged not in known:
            known.add(merged)
            tokens.append(merged)
    return Vocab(tokens, continuation_prefix=prefix)


def wordpiece(word: str, vocab: Vocab) -> list[str]:
    """Greedy longest-match segmentation of one word; ``[UNK]`` if it fails."""
    prefix = vocab.continuation_prefix
    pieces = []
    start = 0
    while start < len(word):
        end = len(word)
        found = None
        while end > start:
            piece = word[start:end] if start == 0 else prefix + word[start:end]
            # literal "[PAD]" etc. in text must not become a control token
            if piece in vocab and piece not in _SPECIAL_SET:
                found = piece
                break
            end -= 1
        if found is None:
            return [UNK]
        pieces.append(found)
        start = end
    return pieces


def tokenize(text: str, vocab: Vocab) -> list[str]:
    pieces = []
    for word in text.split():
        pieces.extend(wordpiece(word, vocab))
    return pieces


def encode(text: str, vocab: Vocab, max_len: int = 128) -> TokenizedInput:
    if max_len < 3:
        raise ValueError(f"max_len must be at least 3, got {max_len}")
    pieces = tokenize(text, vocab)[: max_len - 2]
    ids = [vocab.cls_id] + [vocab.get(p, vocab.unk_id) for p in pieces] + [vocab.sep_id]
    real_len = len(ids)
    out = np.zeros(max_len, dtype=np.int64)
    out[:real_len] = ids
    mask = np.zeros(max_len, dtype=np.int8)
    mask[:real_len] = 1
    return TokenizedInput(out, mask, real_len)


def encode_batch(texts: Iterable[str], vocab: Vocab, max_len: int = 128):
    """Stack encodings into ``(ids [n, max_len], mask [n, max_len])`` arrays."""
    encoded = [encode(t, vocab, max_len) for t in texts]
    if not encoded:
        return np.zeros((0, max_len), dtype=np.int64), np.zeros((0, max_len), dtype=np.int8)
    return np.stack([e.ids for e in encoded]), np.stack([e.mask for e in encoded])


def decode(ids: Iterable[int], vocab: Vocab) -> str:
    prefix = vocab.continuation_prefix
    words = []
    for pos, i in enumerate(ids):
        i = int(i)
        if not 0 <= i < len(vocab):
            raise IndexError(f"id {i} at position {pos} outside vocabulary of size {len(vocab)}")
        if i < len(SPECIALS):
            continue
        tok = vocab.token(i)
        if tok.startswith(prefix) and len(tok) > len(prefix) and words:
            words[-1] += tok[len(prefix):]
        else:
            words.append(tok)
    return " ".join(words)
