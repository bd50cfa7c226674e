"""Unified selection interface: word/sentence/batch/training vocabulary subsets.

Word-level strategies (cooccur, pmi, word_align, pca) union per-word
shortlists over the sentence; phrase and svm strategies produce their set
from the whole sentence.  Common words are the top-n frequency ranks of the
target vocabulary, always included; at training time the reference tokens
are added on top.  Subsets are sorted by global id so common words keep
stable leading local indices.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .cooccur import ShortlistTable
from .corpus import Batch, Bitext, Vocab
from .pca import BilingualEmbedding, METRIC_RECONSTRUCTION, nearest_targets
from .phrase import PhraseTable, select_phrase
from .svm import SvmEnsemble, select_svm

ORIGIN_COMMON = "common"
ORIGIN_SELECTED = "selected"
ORIGIN_REFERENCE = "reference"

WORD_STRATEGIES = ("cooccur", "pmi", "word_align", "pca")
SENTENCE_STRATEGIES = ("phrase", "svm")
STRATEGIES = WORD_STRATEGIES + SENTENCE_STRATEGIES


@dataclass(frozen=True)
class SelectorConfig:
    """Strategy name plus the two knobs shared by all strategies."""

    strategy: str
    k: int = 0
    common_n: int = 0

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy: {self.strategy!r}")
        if self.k < 0 or self.common_n < 0:
            raise ValueError("k and common_n must be >= 0")


class VocabSubset:
    """A selected set of target ids with a compact local re-indexing.

    Global ids are kept sorted ascending; local indices are their positions,
    so they are contiguous 0..len-1 and common words (low global ids) occupy
    the leading local slots whenever present.
    """

    __slots__ = ("global_ids", "origins", "_local")

    def __init__(self, ids_with_origin: dict[int, str]):
        items = sorted(ids_with_origin.items())
        self.global_ids: tuple[int, ...] = tuple(g for g, _ in items)
        self.origins: tuple[str, ...] = tuple(o for _, o in items)
        self._local: Optional[dict[int, int]] = None

    def __len__(self) -> int:
        return len(self.global_ids)

    def __contains__(self, gid: int) -> bool:
        return gid in self.local_of

    @property
    def local_of(self) -> dict[int, int]:
        if self._local is None:
            self._local = {g: i for i, g in enumerate(self.global_ids)}
        return self._local

    def origin_of(self, gid: int) -> str:
        return self.origins[self.local_of[gid]]

    def as_set(self) -> set[int]:
        return set(self.global_ids)

    def with_added(self, ids: Iterable[int], origin: str) -> "VocabSubset":
        merged = {g: o for g, o in zip(self.global_ids, self.origins)}
        for g in ids:
            if g not in merged:
                merged[g] = origin
        return VocabSubset(merged)


def remap(subset: VocabSubset) -> tuple[list[int], dict[int, int]]:
    """(gather list, global->local map): the lookup-table extraction order."""
    return list(subset.global_ids), dict(subset.local_of)


def add_common(subset: VocabSubset, tgt_vocab: Vocab, n: int) -> VocabSubset:
    """Union in ids 0..n-1 (the n most frequent words), tagged as common."""
    if n > len(tgt_vocab):
        raise ValueError(f"common_n {n} exceeds vocabulary size {len(tgt_vocab)}")
    if n <= 0:
        return subset
    return subset.with_added(range(n), ORIGIN_COMMON)


class Selector:
    """One strategy bound to its resources, ready to answer selection queries."""

    def __init__(self, config: SelectorConfig, tgt_vocab: Vocab,
                 src_vocab: Optional[Vocab] = None,
                 shortlists: Optional[ShortlistTable] = None,
                 embedding: Optional[BilingualEmbedding] = None,
                 pca_metric: str = METRIC_RECONSTRUCTION,
                 phrase_table: Optional[PhraseTable] = None,
                 svm_ensemble: Optional[SvmEnsemble] = None):
        self.config = config
        self.tgt_vocab = tgt_vocab
        self.src_vocab = src_vocab
        self.shortlists = shortlists
        self.embedding = embedding
        self.pca_metric = pca_metric
        self.phrase_table = phrase_table
        self.svm_ensemble = svm_ensemble
        self._pca_cache: dict[int, tuple[int, ...]] = {}
        strat = config.strategy
        if strat in ("cooccur", "pmi", "word_align") and shortlists is None:
            raise ValueError(f"strategy {strat!r} needs a shortlist table")
        if strat == "pca" and embedding is None:
            raise ValueError("strategy 'pca' needs an embedding")
        if strat == "phrase" and phrase_table is None:
            raise ValueError("strategy 'phrase' needs a phrase table")
        if strat == "svm" and svm_ensemble is None:
            raise ValueError("strategy 'svm' needs an ensemble")

    # -- word level ---------------------------------------------------------

    def select_word(self, s: int) -> set[int]:
        """Shortlist for one source id; empty for unknown words or k=0."""
        strat = self.config.strategy
        if strat not in WORD_STRATEGIES:
            raise ValueError(f"{strat!r} has no word-level selection")
        k = self.config.k
        if k <= 0:
            return set()
        if self.src_vocab is not None and s == self.src_vocab.unk_id:
            return set()
        if strat == "pca":
            cached = self._pca_cache.get(s)
            if cached is None:
                if not 0 <= s < self.embedding.src_vecs.shape[0]:
                    return set()
                cached = tuple(int(t) for t in nearest_targets(
                    self.embedding, s, k, metric=self.pca_metric))
                self._pca_cache[s] = cached
            return set(cached[:k])
        return {int(t) for t in self.shortlists.lookup(s)[:k]}

    # -- sentence level -----------------------------------------------------

    def _sentence_ids(self, src_sentence: Sequence[int]) -> set[int]:
        strat = self.config.strategy
        if strat == "phrase":
            unk = self.src_vocab.unk_id if self.src_vocab else -1
            ids = select_phrase(self.phrase_table, src_sentence, unk_id=unk)
        elif strat == "svm":
            unk = self.src_vocab.unk_id if self.src_vocab else -1
            ids = select_svm(self.svm_ensemble, src_sentence, unk_id=unk)
        else:
            ids = set()
            for s in set(src_sentence):
                ids |= self.select_word(s)
        ids.discard(self.tgt_vocab.unk_id)
        return ids

    def select_sentence(self, src_sentence: Sequence[int]) -> VocabSubset:
        subset = VocabSubset({g: ORIGIN_SELECTED
                              for g in self._sentence_ids(src_sentence)})
        return add_common(subset, self.tgt_vocab, self.config.common_n)

    def select_batch(self, sentences: Sequence[Sequence[int]]) -> VocabSubset:
        ids: set[int] = set()
        for sent in sentences:
            ids |= self._sentence_ids(sent)
        subset = VocabSubset({g: ORIGIN_SELECTED for g in ids})
        return add_common(subset, self.tgt_vocab, self.config.common_n)

    def select_training(self, sentences: Sequence[Sequence[int]],
                        references: Sequence[Sequence[int]]) -> VocabSubset:
        """Batch selection plus all in-vocab reference token ids."""
        if len(sentences) != len(references):
            raise ValueError(
                f"{len(sentences)} sentences vs {len(references)} references")
        subset = self.select_batch(sentences)
        unk = self.tgt_vocab.unk_id
        ref_ids = {t for ref in references for t in ref if t != unk}
        return subset.with_added(ref_ids, ORIGIN_REFERENCE)


def count_reference_oov(references: Sequence[Sequence[int]], unk_id: int) -> int:
    """Reference token occurrences that no subset can ever cover."""
    return sum(1 for ref in references for t in ref if t == unk_id)


def load_config_file(path: Union[str, Path]) -> dict[str, str]:
    """Parse a ``key = value`` config file; '#' starts a comment line."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}: expected 'key = value' on line {lineno}")
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def dump_selection(subsets: Iterable[VocabSubset], tgt_vocab: Vocab,
                   path: Union[str, Path]) -> None:
    """One line per sentence/batch: the selected target tokens, id order."""
    with open(path, "w", encoding="utf-8") as fh:
        for subset in subsets:
            fh.write(" ".join(tgt_vocab.tokens[g] for g in subset.global_ids))
            fh.write("\n")
