"""Diagonal-reparameterized IBM Model 2 alignment, EM training and symmetrization.

The model explains each generated-side ("target") position by one
conditioning-side ("source") position or a null word.  The link prior is
p0 for null and, for real source positions, proportional to
exp(-lambda * |i/m - j/n|) with 0-based positions, normalized so the whole
distribution sums to one.  lambda and p0 stay fixed; EM re-estimates only
the translation table, so the corpus log-likelihood is non-decreasing.

Expected counts accumulate in float64 over fixed-size sentence blocks merged
in block order, which makes results independent of the worker-thread count.
"""

from __future__ import annotations

import logging
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .cooccur import CooccurTable
from .corpus import Bitext, SentencePair
import scipy.sparse as sp

logger = logging.getLogger(__name__)

_MAGIC = b"VSALIGN1"

DIR_FWD = "fwd"   # conditions on the source side, generates the target side
DIR_REV = "rev"   # conditions on the target side, generates the source side

DEFAULT_LAMBDA = 4.0
DEFAULT_P0 = 0.08
DEFAULT_ITERATIONS = 5

# Sentences per E-step block; fixed so that float64 reduction order (and
# therefore the result) does not depend on the thread count.
_BLOCK_SENTS = 4096

_NEIGHBORS8 = ((-1, 0), (0, -1), (1, 0), (0, 1),
               (-1, -1), (-1, 1), (1, -1), (1, 1))


@dataclass(frozen=True)
class SentenceAlignment:
    """Set of (source position, target position) links, 0-based."""

    links: frozenset[tuple[int, int]]

    def __len__(self) -> int:
        return len(self.links)

    def transpose(self) -> "SentenceAlignment":
        return SentenceAlignment(frozenset((j, i) for i, j in self.links))


@lru_cache(maxsize=4096)
def _prior_matrix(m: int, n: int, lam: float, p0: float) -> np.ndarray:
    """(m x n) prior over real source positions; rows sum to 1 - p0."""
    i = np.arange(m, dtype=np.float64)[:, None] / m
    j = np.arange(n, dtype=np.float64)[None, :] / n
    w = np.exp(-lam * np.abs(i - j))
    return (1.0 - p0) * w / w.sum(axis=1, keepdims=True)


def diagonal_prior(i: int, j: Optional[int], m: int, n: int,
                   lam: float = DEFAULT_LAMBDA,
                   p0: float = DEFAULT_P0) -> float:
    """Prior probability that target position i aligns to source position j.

    ``j=None`` denotes the null word and returns p0; real positions share the
    remaining 1 - p0 proportionally to exp(-lambda * |i/m - j/n|).
    """
    if not 0 <= i < m:
        raise ValueError(f"target position {i} out of range for length {m}")
    if j is None:
        return p0
    if not 0 <= j < n:
        raise ValueError(f"source position {j} out of range for length {n}")
    return float(_prior_matrix(m, n, lam, p0)[i, j])


@dataclass
class AlignmentModel:
    """Sparse translation table theta(t|s) plus diagonal-prior parameters.

    ``pair_keys`` holds the observed (conditioning id, generated id) pairs
    encoded as ``s * v_gen + t`` in ascending order; ``theta`` the matching
    probabilities.  ``theta_null`` is the null word's distribution over
    generated-side ids.
    """

    pair_keys: np.ndarray
    theta: np.ndarray
    theta_null: np.ndarray
    lam: float
    p0: float
    direction: str
    v_cond: int
    v_gen: int
    log_likelihoods: list[float] = field(default_factory=list)

    def theta_of(self, s: int, t: int) -> float:
        """theta(t|s); unseen pairs give 0."""
        key = s * self.v_gen + t
        idx = np.searchsorted(self.pair_keys, key)
        if idx < self.pair_keys.size and self.pair_keys[idx] == key:
            return float(self.theta[idx])
        return 0.0

    def row_sums(self) -> np.ndarray:
        """Per-conditioning-word total of theta (1.0 for words with support)."""
        s_of = self.pair_keys // self.v_gen
        return np.bincount(s_of, weights=self.theta, minlength=self.v_cond)

    def viterbi(self, cond_ids: Sequence[int], gen_ids: Sequence[int]) -> SentenceAlignment:
        """Hard alignment (cond position, gen position) per generated word.

        Each generated position takes the argmax over {null} + positions of
        theta * prior; null wins all-zero rows and ties, otherwise ties break
        toward the smaller conditioning position.  Null links are omitted.
        """
        n = len(cond_ids)
        m = len(gen_ids)
        cond = np.asarray(cond_ids, dtype=np.int64)
        gen = np.asarray(gen_ids, dtype=np.int64)
        keys = (cond[None, :] * self.v_gen + gen[:, None]).ravel()
        idx = np.searchsorted(self.pair_keys, keys)
        idx_c = np.minimum(idx, self.pair_keys.size - 1)
        hit = self.pair_keys[idx_c] == keys
        th = np.where(hit, self.theta[idx_c], 0.0).reshape(m, n)
        scores = np.empty((m, n + 1))
        scores[:, 0] = self.p0 * self.theta_null[gen]
        scores[:, 1:] = th * _prior_matrix(m, n, self.lam, self.p0)
        best = np.argmax(scores, axis=1)
        links = frozenset((int(b - 1), i) for i, b in enumerate(best) if b > 0)
        return SentenceAlignment(links)

    def save(self, path: Union[str, Path]) -> None:
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<ddB", self.lam, self.p0,
                                 0 if self.direction == DIR_FWD else 1))
            fh.write(struct.pack("<QQQQ", self.v_cond, self.v_gen,
                                 self.pair_keys.size, len(self.log_likelihoods)))
            self.pair_keys.astype(np.int64).tofile(fh)
            self.theta.astype(np.float64).tofile(fh)
            self.theta_null.astype(np.float64).tofile(fh)
            np.asarray(self.log_likelihoods, dtype=np.float64).tofile(fh)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "AlignmentModel":
        with open(path, "rb") as fh:
            magic = fh.read(len(_MAGIC))
            if magic != _MAGIC:
                raise ValueError(f"{path}: not an alignment model file")
            lam, p0, dir_flag = struct.unpack("<ddB", fh.read(17))
            v_cond, v_gen, n_pairs, n_ll = struct.unpack("<QQQQ", fh.read(32))
            keys = np.fromfile(fh, dtype=np.int64, count=n_pairs)
            theta = np.fromfile(fh, dtype=np.float64, count=n_pairs)
            theta_null = np.fromfile(fh, dtype=np.float64, count=v_gen)
            lls = np.fromfile(fh, dtype=np.float64, count=n_ll)
        if keys.size != n_pairs or theta.size != n_pairs or theta_null.size != v_gen:
            raise ValueError(f"{path}: truncated alignment model file")
        return cls(pair_keys=keys, theta=theta, theta_null=theta_null,
                   lam=lam, p0=p0,
                   direction=DIR_FWD if dir_flag == 0 else DIR_REV,
                   v_cond=v_cond, v_gen=v_gen,
                   log_likelihoods=list(lls))


class _EmWorkspace:
    """Flattened per-corpus arrays reused across EM iterations."""

    def __init__(self, sents: list[tuple[np.ndarray, np.ndarray]],
                 v_gen: int, lam: float, p0: float):
        keys_parts = []
        prior_parts = []
        row_gen_parts = []    # generated-side id for every row (= tgt slot)
        row_of_entry_parts = []
        row_base = 0
        for cond, gen in sents:
            n, m = cond.size, gen.size
            keys_parts.append((cond[None, :] * v_gen + gen[:, None]).ravel())
            prior_parts.append(_prior_matrix(m, n, lam, p0).ravel())
            row_gen_parts.append(gen)
            row_of_entry_parts.append(
                np.repeat(np.arange(row_base, row_base + m, dtype=np.int64), n))
            row_base += m
        keys_flat = np.concatenate(keys_parts)
        del keys_parts
        self.pair_keys = np.unique(keys_flat)
        # int32/float32 entry arrays keep the workspace compact at corpus
        # scale; all accumulation still happens in float64.
        self.entry_pair = np.searchsorted(self.pair_keys, keys_flat).astype(np.int32)
        del keys_flat
        self.entry_prior = np.concatenate(prior_parts).astype(np.float32)
        self.entry_row = np.concatenate(row_of_entry_parts).astype(np.int32)
        self.row_gen = np.concatenate(row_gen_parts)
        self.n_rows = row_base
        # Fixed block boundaries on entry/row axes (sentence-aligned).
        self.blocks: list[tuple[int, int, int, int]] = []
        ent_lo = row_lo = 0
        ent = row = 0
        for si, (cond, gen) in enumerate(sents):
            ent += cond.size * gen.size
            row += gen.size
            if (si + 1) % _BLOCK_SENTS == 0 or si + 1 == len(sents):
                self.blocks.append((ent_lo, ent, row_lo, row))
                ent_lo, row_lo = ent, row

    def estep_block(self, block, theta, theta_null, p0):
        ent_lo, ent_hi, row_lo, row_hi = block
        pair_idx = self.entry_pair[ent_lo:ent_hi]
        w = theta[pair_idx] * self.entry_prior[ent_lo:ent_hi]
        rows = self.entry_row[ent_lo:ent_hi] - row_lo
        n_rows = row_hi - row_lo
        gen = self.row_gen[row_lo:row_hi]
        w0 = p0 * theta_null[gen]
        denom = np.bincount(rows, weights=w, minlength=n_rows) + w0
        denom = np.maximum(denom, 1e-300)
        ll = float(np.log(denom).sum())
        post = w / denom[rows]
        counts = np.bincount(pair_idx, weights=post,
                             minlength=self.pair_keys.size)
        null_counts = np.bincount(gen, weights=w0 / denom,
                                  minlength=theta_null.size)
        return counts, null_counts, ll


def _oriented(bitext: Bitext, direction: str):
    if direction == DIR_FWD:
        sents = [(np.asarray(p.src, dtype=np.int64),
                  np.asarray(p.tgt, dtype=np.int64)) for p in bitext.pairs]
        return sents, len(bitext.src_vocab), len(bitext.tgt_vocab)
    if direction == DIR_REV:
        sents = [(np.asarray(p.tgt, dtype=np.int64),
                  np.asarray(p.src, dtype=np.int64)) for p in bitext.pairs]
        return sents, len(bitext.tgt_vocab), len(bitext.src_vocab)
    raise ValueError(f"unknown direction: {direction!r}")


def train_em(bitext: Bitext, iterations: int = DEFAULT_ITERATIONS,
             lam: float = DEFAULT_LAMBDA, p0: float = DEFAULT_P0,
             direction: str = DIR_FWD, threads: int = 1) -> AlignmentModel:
    """Train theta(t|s) by EM with the diagonal prior held fixed.

    theta starts uniform over the pairs co-occurring in some sentence; the
    null distribution starts uniform over observed generated-side types.
    The reported log-likelihood list has one entry per iteration, each
    evaluated under the parameters that iteration started from.
    """
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    if not bitext.pairs:
        raise ValueError("empty bitext")
    sents, v_cond, v_gen = _oriented(bitext, direction)
    ws = _EmWorkspace(sents, v_gen, lam, p0)

    s_of_pair = ws.pair_keys // v_gen
    deg = np.bincount(s_of_pair, minlength=v_cond)
    theta = 1.0 / deg[s_of_pair]
    gen_types = np.unique(ws.pair_keys % v_gen)
    theta_null = np.zeros(v_gen)
    theta_null[gen_types] = 1.0 / gen_types.size

    lls: list[float] = []
    for it in range(iterations):
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(
                    lambda b: ws.estep_block(b, theta, theta_null, p0),
                    ws.blocks))
        else:
            results = [ws.estep_block(b, theta, theta_null, p0)
                       for b in ws.blocks]
        counts = np.zeros(ws.pair_keys.size)
        null_counts = np.zeros(v_gen)
        ll = 0.0
        for c, nc, part_ll in results:   # fixed block order
            counts += c
            null_counts += nc
            ll += part_ll
        src_tot = np.bincount(s_of_pair, weights=counts, minlength=v_cond)
        theta = counts / np.maximum(src_tot[s_of_pair], 1e-300)
        theta_null = null_counts / max(null_counts.sum(), 1e-300)
        lls.append(ll)
        logger.info("EM iteration %d/%d: log-likelihood %.4f",
                    it + 1, iterations, ll)
    return AlignmentModel(pair_keys=ws.pair_keys, theta=theta,
                          theta_null=theta_null, lam=lam, p0=p0,
                          direction=direction, v_cond=v_cond, v_gen=v_gen,
                          log_likelihoods=lls)


def viterbi_align(model: AlignmentModel, pair: SentencePair) -> SentenceAlignment:
    """Viterbi-align one pair given in corpus (src, tgt) orientation.

    For a reverse-direction model the returned links live in swapped
    coordinates, i.e. (target position, source position), matching what an
    external aligner run on the swapped corpus would produce.
    """
    if model.direction == DIR_FWD:
        return model.viterbi(pair.src, pair.tgt)
    return model.viterbi(pair.tgt, pair.src)


def viterbi_corpus(model: AlignmentModel, bitext: Bitext) -> list[SentenceAlignment]:
    return [viterbi_align(model, p) for p in bitext.pairs]


def symmetrize_gdfa(fwd: SentenceAlignment,
                    rev: SentenceAlignment) -> SentenceAlignment:
    """grow-diag-final-and of a forward and a swapped-coordinate reverse alignment.

    Starts from the intersection, grows into the union through the
    8-neighborhood wherever one endpoint is still unaligned, then adds the
    union links whose endpoints are both unaligned.  Candidates are visited
    in sorted order, so the output is deterministic.
    """
    rev_t = frozenset((j, i) for i, j in rev.links)
    inter = fwd.links & rev_t
    union = fwd.links | rev_t
    aligned = set(inter)
    src_al = {i for i, _ in aligned}
    tgt_al = {j for _, j in aligned}

    added = True
    while added:
        added = False
        for (i, j) in sorted(aligned):
            for di, dj in _NEIGHBORS8:
                p = (i + di, j + dj)
                if p in union and p not in aligned and (
                        p[0] not in src_al or p[1] not in tgt_al):
                    aligned.add(p)
                    src_al.add(p[0])
                    tgt_al.add(p[1])
                    added = True
    for (i, j) in sorted(union - aligned):
        if i not in src_al and j not in tgt_al:
            aligned.add((i, j))
            src_al.add(i)
            tgt_al.add(j)
    return SentenceAlignment(frozenset(aligned))


def count_links(bitext: Bitext, alignments: Sequence[SentenceAlignment]) -> CooccurTable:
    """Alignment-count table: one count per link, unk ids excluded."""
    if len(alignments) != len(bitext.pairs):
        raise ValueError(
            f"{len(alignments)} alignments for {len(bitext.pairs)} pairs")
    v_src = len(bitext.src_vocab)
    v_tgt = len(bitext.tgt_vocab)
    src_unk = bitext.src_vocab.unk_id
    tgt_unk = bitext.tgt_vocab.unk_id
    rows: list[int] = []
    cols: list[int] = []
    for pair, al in zip(bitext.pairs, alignments):
        for (i, j) in al.links:
            if not (0 <= i < len(pair.src) and 0 <= j < len(pair.tgt)):
                raise ValueError(
                    f"alignment link ({i},{j}) out of range for pair with "
                    f"lengths ({len(pair.src)},{len(pair.tgt)})")
            s = pair.src[i]
            t = pair.tgt[j]
            if s != src_unk and t != tgt_unk:
                rows.append(s)
                cols.append(t)
    coo = sp.coo_matrix(
        (np.ones(len(rows), dtype=np.int64),
         (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
        shape=(v_src, v_tgt))
    return CooccurTable.from_counts(coo.tocsr())


def topk_aligned(table: CooccurTable, k: int):
    """Shortlists ranked by P(t|s) estimated from alignment counts."""
    from .cooccur import topk, STAT_CONDITIONAL
    return topk(table, k, statistic=STAT_CONDITIONAL)


def write_pharaoh(alignments: Iterable[SentenceAlignment],
                  path: Union[str, Path]) -> None:
    """One line per pair of space-separated ``i-j`` links, sorted."""
    with open(path, "w", encoding="utf-8") as fh:
        for al in alignments:
            fh.write(" ".join(f"{i}-{j}" for i, j in sorted(al.links)))
            fh.write("\n")


def read_pharaoh(path: Union[str, Path]) -> list[SentenceAlignment]:
    out: list[SentenceAlignment] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            links = set()
            for tok in line.split():
                parts = tok.split("-")
                if len(parts) != 2:
                    raise ValueError(
                        f"{path}: malformed alignment token {tok!r} on line {lineno}")
                try:
                    i, j = int(parts[0]), int(parts[1])
                except ValueError:
                    raise ValueError(
                        f"{path}: malformed alignment token {tok!r} on line {lineno}")
                if i < 0 or j < 0:
                    raise ValueError(
                        f"{path}: negative position in {tok!r} on line {lineno}")
                links.add((i, j))
            out.append(SentenceAlignment(frozenset(links)))
    return out
