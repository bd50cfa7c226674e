"""Parallel corpus handling: vocabularies, encoding, length filtering, batching.

Input is pre-tokenized plain text, one sentence per line, whitespace
separated; no tokenizer is applied here.  Vocabularies are frequency ranked
(ties broken lexicographically) and carry a single reserved unknown token
that always occupies the *last* id, so ids 0..n-1 are exactly the n most
frequent real tokens.  All types are immutable after construction.
"""

from __future__ import annotations

import collections
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, Union

DEFAULT_UNK = "<unk>"

TokenLine = Union[str, Sequence[str]]


def _tokens(line: TokenLine) -> list[str]:
    if isinstance(line, str):
        return line.split()
    return list(line)


@dataclass
class Vocab:
    """Frequency-ranked token/id mapping for one language side.

    Attributes:
        tokens: surface forms, index = id; the last entry is the unk symbol.
        freq: per-id occurrence count; for unk this is the out-of-vocabulary
            mass observed when the vocabulary was built.
        unk_id: id of the reserved unknown token (always ``len(tokens) - 1``).
    """

    tokens: list[str]
    freq: list[int]
    unk_id: int
    id_of: dict[str, int] = field(repr=False, default_factory=dict)

    def __post_init__(self) -> None:
        if not self.id_of:
            self.id_of = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.id_of) != len(self.tokens):
            raise ValueError("duplicate token strings in vocabulary")
        if len(self.freq) != len(self.tokens):
            raise ValueError("freq/tokens length mismatch")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def unk_token(self) -> str:
        return self.tokens[self.unk_id]

    def encode_token(self, token: str) -> int:
        return self.id_of.get(token, self.unk_id)

    def encode(self, line: TokenLine) -> tuple[int, ...]:
        unk = self.unk_id
        get = self.id_of.get
        return tuple(get(t, unk) for t in _tokens(line))

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def save(self, path: Union[str, Path]) -> None:
        """Write TSV rows ``rank<TAB>token<TAB>frequency``, rank ascending."""
        with open(path, "w", encoding="utf-8") as fh:
            for rank, (tok, cnt) in enumerate(zip(self.tokens, self.freq)):
                fh.write(f"{rank}\t{tok}\t{cnt}\n")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Vocab":
        """Read the TSV format written by :meth:`save` (unk is the last row)."""
        tokens: list[str] = []
        freq: list[int] = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise ValueError(f"{path}: malformed vocab row on line {lineno + 1}")
                rank, tok, cnt = parts
                if int(rank) != len(tokens):
                    raise ValueError(f"{path}: non-contiguous rank on line {lineno + 1}")
                tokens.append(tok)
                freq.append(int(cnt))
        if not tokens:
            raise ValueError(f"{path}: empty vocabulary file")
        return cls(tokens=tokens, freq=freq, unk_id=len(tokens) - 1)


@dataclass(frozen=True)
class SentencePair:
    """One encoded sentence pair; both sides non-empty."""

    src: tuple[int, ...]
    tgt: tuple[int, ...]


@dataclass
class Bitext:
    """Encoded parallel corpus with its two vocabularies attached."""

    pairs: list[SentencePair]
    src_vocab: Vocab
    tgt_vocab: Vocab

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)


@dataclass(frozen=True)
class Batch:
    """Indices of the sentence pairs grouped into one bucket batch."""

    indices: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.indices)


def build_vocab(lines: Iterable[TokenLine], max_size: int,
                unk_symbol: str = DEFAULT_UNK) -> Vocab:
    """Build a frequency-ranked vocabulary of at most ``max_size`` real tokens.

    Ties in frequency are broken lexicographically so builds are
    deterministic.  Occurrences of ``unk_symbol`` itself, and of every token
    beyond the ``max_size`` most frequent, are folded into the unk entry's
    frequency.
    """
    if max_size < 1:
        raise ValueError(f"max_size must be >= 1, got {max_size}")
    counter: collections.Counter[str] = collections.Counter()
    for line in lines:
        counter.update(_tokens(line))
    if not counter:
        raise ValueError("empty input corpus: no tokens found")
    oov_mass = counter.pop(unk_symbol, 0)
    ranked = sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = ranked[:max_size]
    oov_mass += sum(cnt for _, cnt in ranked[max_size:])
    tokens = [tok for tok, _ in kept] + [unk_symbol]
    freq = [cnt for _, cnt in kept] + [oov_mass]
    return Vocab(tokens=tokens, freq=freq, unk_id=len(tokens) - 1)


def encode(lines_src: Iterable[TokenLine], lines_tgt: Iterable[TokenLine],
           src_vocab: Vocab, tgt_vocab: Vocab) -> Bitext:
    """Encode parallel lines into id sequences, mapping OOV tokens to unk."""
    src_list = list(lines_src)
    tgt_list = list(lines_tgt)
    if len(src_list) != len(tgt_list):
        raise ValueError(
            f"line count mismatch: {len(src_list)} source lines vs "
            f"{len(tgt_list)} target lines")
    pairs: list[SentencePair] = []
    for lineno, (ls, lt) in enumerate(zip(src_list, tgt_list), start=1):
        s = _tokens(ls)
        t = _tokens(lt)
        if not s or not t:
            raise ValueError(f"empty sentence on line {lineno}")
        pairs.append(SentencePair(src_vocab.encode(s), tgt_vocab.encode(t)))
    return Bitext(pairs=pairs, src_vocab=src_vocab, tgt_vocab=tgt_vocab)


def filter_by_length(bitext: Bitext, max_len: int) -> Bitext:
    """Keep pairs whose source AND target are at most ``max_len`` tokens."""
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    kept = [p for p in bitext.pairs
            if len(p.src) <= max_len and len(p.tgt) <= max_len]
    return Bitext(pairs=kept, src_vocab=bitext.src_vocab,
                  tgt_vocab=bitext.tgt_vocab)


def bucket_batch(bitext: Bitext, batch_size: int) -> list[Batch]:
    """Bucket-batch on target length.

    Pairs are ordered by (target length, source length); consecutive runs of
    equal target length are chunked into batches of at most ``batch_size``,
    leaving some batches not full rather than mixing target lengths.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = sorted(range(len(bitext.pairs)),
                   key=lambda i: (len(bitext.pairs[i].tgt),
                                  len(bitext.pairs[i].src)))
    batches: list[Batch] = []
    cur: list[int] = []
    cur_len = -1
    for idx in order:
        tlen = len(bitext.pairs[idx].tgt)
        if tlen != cur_len or len(cur) >= batch_size:
            if cur:
                batches.append(Batch(tuple(cur)))
            cur = []
            cur_len = tlen
        cur.append(idx)
    if cur:
        batches.append(Batch(tuple(cur)))
    return batches


def read_lines(path: Union[str, Path]) -> list[str]:
    """Read a one-sentence-per-line UTF-8 text file, stripping newlines only."""
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


def write_lines(lines: Iterable[str], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line)
            fh.write("\n")
