"""Phrase-pair extraction consistent with word alignments; n-gram selection.

A (source span, target span) rectangle is extracted when it contains at
least one link, no link leaves it on either side, and both spans are at most
``max_len`` tokens.  For each source span this reduces to: take the tight
target span of its links, check consistency, then extend over adjacent
unaligned target words.  Enumerating every source span this way yields
exactly the set of consistent rectangles.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, Union

from .align import SentenceAlignment
from .corpus import Bitext, Vocab

DEFAULT_MAX_LEN = 5
DEFAULT_MIN_COUNT = 5

Ngram = tuple[int, ...]


@dataclass
class PhraseTable:
    """Source n-gram -> {target n-gram: count}, n bounded by ``max_len``."""

    entries: dict[Ngram, dict[Ngram, int]] = field(default_factory=dict)
    max_len: int = DEFAULT_MAX_LEN
    min_count: int = 1

    def add(self, src: Ngram, tgt: Ngram, count: int = 1) -> None:
        self.entries.setdefault(src, {})
        self.entries[src][tgt] = self.entries[src].get(tgt, 0) + count

    def n_pairs(self) -> int:
        return sum(len(t) for t in self.entries.values())

    def save_tsv(self, path: Union[str, Path], src_vocab: Vocab,
                 tgt_vocab: Vocab) -> None:
        """Rows ``src tokens ||| tgt tokens ||| count``, sorted for determinism."""
        with open(path, "w", encoding="utf-8") as fh:
            for src in sorted(self.entries):
                src_txt = " ".join(src_vocab.tokens[i] for i in src)
                for tgt in sorted(self.entries[src]):
                    tgt_txt = " ".join(tgt_vocab.tokens[j] for j in tgt)
                    fh.write(f"{src_txt} ||| {tgt_txt} ||| {self.entries[src][tgt]}\n")

    @classmethod
    def load_tsv(cls, path: Union[str, Path], src_vocab: Vocab,
                 tgt_vocab: Vocab, max_len: int = DEFAULT_MAX_LEN) -> "PhraseTable":
        table = cls(max_len=max_len)
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split(" ||| ")
                if len(parts) != 3:
                    raise ValueError(
                        f"{path}: malformed phrase row on line {lineno}")
                src = tuple(src_vocab.encode_token(t) for t in parts[0].split())
                tgt = tuple(tgt_vocab.encode_token(t) for t in parts[1].split())
                table.add(src, tgt, int(parts[2]))
                table.max_len = max(table.max_len, len(src), len(tgt))
        return table


def _extract_from_pair(src: Sequence[int], tgt: Sequence[int],
                       links: frozenset[tuple[int, int]],
                       max_len: int) -> list[tuple[Ngram, Ngram]]:
    n_src = len(src)
    n_tgt = len(tgt)
    tgt_aligned = [False] * n_tgt
    links_by_src: list[list[int]] = [[] for _ in range(n_src)]
    row_links = [0] * n_tgt     # links per target position
    for (i, j) in links:
        if not (0 <= i < n_src and 0 <= j < n_tgt):
            raise ValueError(
                f"alignment link ({i},{j}) out of range for lengths "
                f"({n_src},{n_tgt})")
        links_by_src[i].append(j)
        tgt_aligned[j] = True
        row_links[j] += 1
    row_cum = [0]
    for c in row_links:
        row_cum.append(row_cum[-1] + c)

    out: list[tuple[Ngram, Ngram]] = []
    for i1 in range(n_src):
        j_min, j_max = n_tgt, -1
        n_inside = 0
        for i2 in range(i1, min(i1 + max_len, n_src)):
            for j in links_by_src[i2]:
                j_min = min(j_min, j)
                j_max = max(j_max, j)
                n_inside += 1
            if n_inside == 0:
                continue
            if j_max - j_min + 1 > max_len:
                continue
            # Consistent iff every link in target rows [j_min, j_max] lies
            # inside the source span, i.e. the row totals match the span's.
            if row_cum[j_max + 1] - row_cum[j_min] != n_inside:
                continue
            src_gram = tuple(src[i1:i2 + 1])
            jf = j_min
            while jf >= 0 and (jf == j_min or not tgt_aligned[jf]):
                if j_max - jf + 1 > max_len:
                    break
                jt = j_max
                while jt < n_tgt and (jt == j_max or not tgt_aligned[jt]):
                    if jt - jf + 1 <= max_len:
                        out.append((src_gram, tuple(tgt[jf:jt + 1])))
                    else:
                        break
                    jt += 1
                jf -= 1
    return out


def extract_phrases(bitext: Bitext, alignments: Sequence[SentenceAlignment],
                    max_len: int = DEFAULT_MAX_LEN) -> PhraseTable:
    """Extract all alignment-consistent phrase pairs, one count per rectangle."""
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    if len(alignments) != len(bitext.pairs):
        raise ValueError(
            f"{len(alignments)} alignments for {len(bitext.pairs)} pairs")
    table = PhraseTable(max_len=max_len)
    for pair, al in zip(bitext.pairs, alignments):
        for src_gram, tgt_gram in _extract_from_pair(
                pair.src, pair.tgt, al.links, max_len):
            table.add(src_gram, tgt_gram)
    return table


def prune(table: PhraseTable, min_count: int,
          top_per_source: int = 0) -> PhraseTable:
    """Drop entries below ``min_count``; optionally cap targets per source.

    With ``top_per_source`` > 0 each source n-gram keeps only its most
    frequent target phrases (ties broken by target sequence), the per-phrase
    candidate cap.  Source n-grams left without targets disappear.
    """
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    pruned = PhraseTable(max_len=table.max_len, min_count=min_count)
    for src, tgts in table.entries.items():
        kept = [(t, c) for t, c in tgts.items() if c >= min_count]
        if not kept:
            continue
        if top_per_source > 0:
            kept.sort(key=lambda tc: (-tc[1], tc[0]))
            kept = kept[:top_per_source]
        pruned.entries[src] = dict(sorted(kept))
    return pruned


def select_phrase(table: PhraseTable, src_sentence: Sequence[int],
                  unk_id: int = -1) -> set[int]:
    """Union of target tokens over all matching source n-grams.

    Every contiguous n-gram (n <= max_len) of the sentence is looked up by
    exact id match; n-grams containing the unk id never match, and unk never
    enters the returned set.
    """
    out: set[int] = set()
    sent = tuple(src_sentence)
    n_sent = len(sent)
    for n in range(1, table.max_len + 1):
        for start in range(0, n_sent - n + 1):
            gram = sent[start:start + n]
            if unk_id in gram:
                continue
            tgts = table.entries.get(gram)
            if not tgts:
                continue
            for tgt_gram in tgts:
                out.update(tgt_gram)
    out.discard(unk_id)
    return out
