"""Sparse bilingual co-occurrence statistics and top-k target shortlists.

Counts how often each source word co-occurs with each target word: every
(source position, target position) pair in a sentence pair contributes one
count, so a sentence contributes ``len(src) * len(tgt)`` counts.  The same
table type also holds alignment-link counts (see :mod:`vocselect.align`).
Unknown-token ids never enter the table.

Counts are stored as 64-bit integers in a CSR matrix (source = rows), which
keeps web-scale cross-products exact and makes shard merges associative.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp

from .corpus import Bitext, Vocab

_MAGIC = b"VSCOOCT1"

# Ranking statistics understood by topk().
STAT_JOINT = "joint"
STAT_PMI = "pmi"
STAT_CONDITIONAL = "conditional"

# Below this many occurrences of the target word, PMI estimates are too
# unstable to rank; such targets are excluded from PMI shortlists.
DEFAULT_PMI_FLOOR = 10


@dataclass
class CooccurTable:
    """Sparse joint counts c(s, t) with marginals.

    ``counts`` is a CSR matrix of shape (V_src, V_tgt) with int64 data;
    marginals are the row/column sums and ``grand_total`` the overall sum.
    """

    counts: sp.csr_matrix
    src_marginal: np.ndarray
    tgt_marginal: np.ndarray
    grand_total: int

    @classmethod
    def from_counts(cls, counts: sp.csr_matrix) -> "CooccurTable":
        counts = counts.tocsr()
        counts.sum_duplicates()
        counts.eliminate_zeros()
        src_marginal = np.asarray(counts.sum(axis=1)).ravel().astype(np.int64)
        tgt_marginal = np.asarray(counts.sum(axis=0)).ravel().astype(np.int64)
        return cls(counts=counts, src_marginal=src_marginal,
                   tgt_marginal=tgt_marginal,
                   grand_total=int(counts.data.sum()))

    @property
    def shape(self) -> tuple[int, int]:
        return self.counts.shape

    def count(self, s: int, t: int) -> int:
        return int(self.counts[s, t])

    def joint_prob(self, s: int, t: int) -> float:
        """P(s, t) = c(s, t) / grand_total; absent pairs give 0."""
        if self.grand_total <= 0:
            raise ValueError("joint_prob undefined: empty table")
        return self.count(s, t) / self.grand_total

    def pmi(self, s: int, t: int,
            floor: int = DEFAULT_PMI_FLOOR) -> Optional[float]:
        """P(s,t) / (P(s) P(t)), or None when excluded from ranking.

        Pairs whose target marginal is below ``floor`` (or with a zero
        marginal on either side) are excluded: the estimate is unreliable
        at very low target frequencies.
        """
        cs = int(self.src_marginal[s])
        ct = int(self.tgt_marginal[t])
        if cs == 0 or ct == 0 or ct < floor:
            return None
        return self.count(s, t) * self.grand_total / (cs * ct)

    def save(self, path: Union[str, Path]) -> None:
        m = self.counts
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<QQQ", m.shape[0], m.shape[1], m.nnz))
            m.indptr.astype(np.int64).tofile(fh)
            m.indices.astype(np.int64).tofile(fh)
            m.data.astype(np.int64).tofile(fh)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "CooccurTable":
        with open(path, "rb") as fh:
            magic = fh.read(len(_MAGIC))
            if magic != _MAGIC:
                raise ValueError(f"{path}: not a co-occurrence table file")
            v_src, v_tgt, nnz = struct.unpack("<QQQ", fh.read(24))
            indptr = np.fromfile(fh, dtype=np.int64, count=v_src + 1)
            indices = np.fromfile(fh, dtype=np.int64, count=nnz)
            data = np.fromfile(fh, dtype=np.int64, count=nnz)
        if indptr.size != v_src + 1 or indices.size != nnz or data.size != nnz:
            raise ValueError(f"{path}: truncated co-occurrence table file")
        counts = sp.csr_matrix((data, indices, indptr), shape=(v_src, v_tgt))
        return cls.from_counts(counts)

    def export_tsv(self, path: Union[str, Path], src_vocab: Vocab,
                   tgt_vocab: Vocab) -> None:
        """Write ``src_token<TAB>tgt_token<TAB>count`` rows, (s, t) ascending."""
        m = self.counts
        with open(path, "w", encoding="utf-8") as fh:
            for s in range(m.shape[0]):
                lo, hi = m.indptr[s], m.indptr[s + 1]
                for t, c in zip(m.indices[lo:hi], m.data[lo:hi]):
                    fh.write(f"{src_vocab.tokens[s]}\t{tgt_vocab.tokens[t]}\t{c}\n")


@dataclass
class ShortlistTable:
    """Per-source-word ordered lists of up to k target ids.

    Each list is sorted by non-increasing score under the statistic named in
    ``provenance``, ties broken by lower target id, so the list for a smaller
    k is always a prefix of the list for a larger one.
    """

    lists: list[np.ndarray]
    k: int
    provenance: str

    def lookup(self, s: int) -> np.ndarray:
        if 0 <= s < len(self.lists):
            return self.lists[s]
        return np.empty(0, dtype=np.int64)

    def save_tsv(self, path: Union[str, Path], src_vocab: Vocab,
                 tgt_vocab: Vocab) -> None:
        """Write ``src_token<TAB>t1 t2 ... tk`` rows for non-empty lists."""
        with open(path, "w", encoding="utf-8") as fh:
            for s, ids in enumerate(self.lists):
                if ids.size == 0:
                    continue
                tgts = " ".join(tgt_vocab.tokens[t] for t in ids)
                fh.write(f"{src_vocab.tokens[s]}\t{tgts}\n")

    @classmethod
    def load_tsv(cls, path: Union[str, Path], src_vocab: Vocab,
                 tgt_vocab: Vocab, provenance: str = "file") -> "ShortlistTable":
        lists = [np.empty(0, dtype=np.int64) for _ in range(len(src_vocab))]
        k = 0
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise ValueError(f"{path}: malformed shortlist row on "
                                     f"line {lineno + 1}")
                src_tok, tgt_toks = parts
                s = src_vocab.id_of.get(src_tok)
                if s is None or s == src_vocab.unk_id:
                    continue
                ids = [tgt_vocab.id_of[t] for t in tgt_toks.split()
                       if t in tgt_vocab.id_of]
                lists[s] = np.asarray(ids, dtype=np.int64)
                k = max(k, len(ids))
        return cls(lists=lists, k=k, provenance=provenance)


def _count_chunk(bitext: Bitext, lo: int, hi: int) -> sp.csr_matrix:
    v_src = len(bitext.src_vocab)
    v_tgt = len(bitext.tgt_vocab)
    src_unk = bitext.src_vocab.unk_id
    tgt_unk = bitext.tgt_vocab.unk_id
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    for pair in bitext.pairs[lo:hi]:
        s = np.asarray([i for i in pair.src if i != src_unk], dtype=np.int64)
        t = np.asarray([j for j in pair.tgt if j != tgt_unk], dtype=np.int64)
        if s.size == 0 or t.size == 0:
            continue
        rows.append(np.repeat(s, t.size))
        cols.append(np.tile(t, s.size))
    if not rows:
        return sp.csr_matrix((v_src, v_tgt), dtype=np.int64)
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    coo = sp.coo_matrix((np.ones(r.size, dtype=np.int64), (r, c)),
                        shape=(v_src, v_tgt))
    return coo.tocsr()


def count_cooccurrences(bitext: Bitext, threads: int = 1) -> CooccurTable:
    """Count position-pair co-occurrences over the whole bitext.

    Counting shards the corpus into fixed-size chunks whose partial tables
    are merged in chunk order; integer addition makes the result identical
    for any thread count.
    """
    if not bitext.pairs:
        raise ValueError("empty bitext")
    chunk = 8192
    spans = [(lo, min(lo + chunk, len(bitext.pairs)))
             for lo in range(0, len(bitext.pairs), chunk)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda sp_: _count_chunk(bitext, *sp_), spans))
    else:
        parts = [_count_chunk(bitext, lo, hi) for lo, hi in spans]
    total = parts[0]
    for part in parts[1:]:
        total = total + part
    return CooccurTable.from_counts(total)


def topk(table: CooccurTable, k: int, statistic: str = STAT_JOINT,
         floor: int = DEFAULT_PMI_FLOOR) -> ShortlistTable:
    """Per source word, the k highest-scoring co-occurring target words.

    ``statistic`` is one of ``joint`` (P(s,t)), ``pmi`` or ``conditional``
    (P(t|s), used for alignment-count tables).  Only observed pairs are
    candidates; ties break toward the lower target id.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if statistic not in (STAT_JOINT, STAT_PMI, STAT_CONDITIONAL):
        raise ValueError(f"unknown ranking statistic: {statistic!r}")
    m = table.counts
    n = table.grand_total
    lists: list[np.ndarray] = []
    for s in range(m.shape[0]):
        lo, hi = m.indptr[s], m.indptr[s + 1]
        cand = m.indices[lo:hi].astype(np.int64)
        vals = m.data[lo:hi].astype(np.float64)
        if statistic == STAT_PMI:
            tm = table.tgt_marginal[cand]
            keep = tm >= max(floor, 1)
            cand = cand[keep]
            scores = vals[keep] * n / (float(table.src_marginal[s]) * tm[keep])
        elif statistic == STAT_CONDITIONAL:
            scores = vals / float(table.src_marginal[s]) if vals.size else vals
        else:
            scores = vals
        if cand.size == 0:
            lists.append(np.empty(0, dtype=np.int64))
            continue
        order = np.lexsort((cand, -scores))[:k]
        lists.append(cand[order])
    return ShortlistTable(lists=lists, k=k, provenance=statistic)
