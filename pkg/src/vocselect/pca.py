"""Bilingual embeddings via Hellinger PCA of the conditional co-occurrence matrix.

The matrix H[t, s] = sqrt(P(t | s)) is factorized by a truncated singular
decomposition without centering, so the rank-d reconstruction stays
interpretable as a (smoothed) co-occurrence estimate.  Target words are
ranked for a source word either by that reconstructed value (default) or by
Euclidean distance between the shared-space embeddings.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
import scipy.sparse as sp

from .cooccur import CooccurTable

_MAGIC = b"VSEMBED1"

METRIC_RECONSTRUCTION = "reconstruction"
METRIC_EUCLIDEAN = "euclidean"

# Matrices whose smaller side is at most this use the exact Gram-matrix
# eigendecomposition; larger ones use seeded subspace iteration.
_EXACT_MAX_DIM = 600

# Relative tolerance for collapsing floating-point ranking ties: scores
# closer than this (relative to the largest magnitude) are ordered by id.
_TIE_REL_TOL = 1e-9


@dataclass
class HellingerMatrix:
    """Sparse H with H[t, s] = sqrt(c(s,t) / c(s)), shape (V_tgt, V_src)."""

    entries: sp.csr_matrix

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape


@dataclass
class BilingualEmbedding:
    """Rank-d factors of the Hellinger matrix.

    ``tgt_vecs`` holds the left singular vectors (one row per target word),
    ``src_vecs`` the right ones (one row per source word), so the
    reconstructed co-occurrence score is
    ``tgt_vecs[t] @ (singular_values * src_vecs[s])``.
    ``src_seen`` marks source words with a nonzero training marginal; words
    never seen get no neighbors.
    """

    src_vecs: np.ndarray
    tgt_vecs: np.ndarray
    singular_values: np.ndarray
    src_seen: np.ndarray

    @property
    def d(self) -> int:
        return self.singular_values.shape[0]

    def score_targets(self, s: int) -> np.ndarray:
        return self.tgt_vecs @ (self.singular_values * self.src_vecs[s])

    def save(self, path: Union[str, Path]) -> None:
        v_src, d = self.src_vecs.shape
        v_tgt = self.tgt_vecs.shape[0]
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<QQQ", v_src, v_tgt, d))
            self.singular_values.astype(np.float64).tofile(fh)
            self.src_vecs.astype(np.float64).tofile(fh)
            self.tgt_vecs.astype(np.float64).tofile(fh)
            self.src_seen.astype(np.uint8).tofile(fh)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "BilingualEmbedding":
        with open(path, "rb") as fh:
            magic = fh.read(len(_MAGIC))
            if magic != _MAGIC:
                raise ValueError(f"{path}: not an embedding file")
            v_src, v_tgt, d = struct.unpack("<QQQ", fh.read(24))
            sing = np.fromfile(fh, dtype=np.float64, count=d)
            src = np.fromfile(fh, dtype=np.float64, count=v_src * d)
            tgt = np.fromfile(fh, dtype=np.float64, count=v_tgt * d)
            seen = np.fromfile(fh, dtype=np.uint8, count=v_src)
        if src.size != v_src * d or tgt.size != v_tgt * d or seen.size != v_src:
            raise ValueError(f"{path}: truncated embedding file")
        return cls(src_vecs=src.reshape(v_src, d),
                   tgt_vecs=tgt.reshape(v_tgt, d),
                   singular_values=sing, src_seen=seen.astype(bool))

    def export_tsv(self, path: Union[str, Path], tokens: list[str],
                   side: str = "src") -> None:
        vecs = self.src_vecs if side == "src" else self.tgt_vecs
        with open(path, "w", encoding="utf-8") as fh:
            for tok, row in zip(tokens, vecs):
                fh.write(tok + "\t" + " ".join(f"{x:.6g}" for x in row) + "\n")


def hellinger_transform(table: CooccurTable) -> HellingerMatrix:
    """Build H[t, s] = sqrt(c(s,t) / c(s)); zero-marginal columns stay zero."""
    if table.grand_total <= 0:
        raise ValueError("empty co-occurrence table")
    counts = table.counts.tocoo()
    denom = table.src_marginal[counts.row].astype(np.float64)
    data = np.sqrt(counts.data.astype(np.float64) / denom)
    h = sp.coo_matrix((data, (counts.col, counts.row)),
                      shape=(table.shape[1], table.shape[0])).tocsr()
    return HellingerMatrix(entries=h)


def _fix_signs(u: np.ndarray, v: np.ndarray) -> None:
    # Deterministic orientation: the largest-magnitude entry of each left
    # singular vector is made positive (flipping u and v together).
    for col in range(u.shape[1]):
        idx = int(np.argmax(np.abs(u[:, col])))
        if u[idx, col] < 0:
            u[:, col] *= -1.0
            v[:, col] *= -1.0


def _svd_via_gram(h: sp.csr_matrix, d: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    v_tgt, v_src = h.shape
    dense = h.toarray()
    if v_src <= v_tgt:
        gram = dense.T @ dense
        evals, evecs = np.linalg.eigh(gram)
        order = np.argsort(evals)[::-1][:d]
        sig = np.sqrt(np.maximum(evals[order], 0.0))
        v = evecs[:, order]
        u = np.zeros((v_tgt, d))
        ok = sig > (sig[0] * 1e-12 if sig.size and sig[0] > 0 else 0)
        u[:, ok] = (dense @ v[:, ok]) / sig[ok]
    else:
        gram = dense @ dense.T
        evals, evecs = np.linalg.eigh(gram)
        order = np.argsort(evals)[::-1][:d]
        sig = np.sqrt(np.maximum(evals[order], 0.0))
        u = evecs[:, order]
        v = np.zeros((v_src, d))
        ok = sig > (sig[0] * 1e-12 if sig.size and sig[0] > 0 else 0)
        v[:, ok] = (dense.T @ u[:, ok]) / sig[ok]
    return u, sig, v


def _svd_subspace(h: sp.csr_matrix, d: int, max_iter: int, tol: float,
                  seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    v_tgt, v_src = h.shape
    r = min(d + 8, min(v_tgt, v_src))
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(h @ rng.standard_normal((v_src, r)))
    ht = h.T.tocsr()
    b = (ht @ q).T
    sig_prev = np.zeros(d)
    for _ in range(max_iter):
        w, _ = np.linalg.qr(ht @ q)
        q, _ = np.linalg.qr(h @ w)
        b = (ht @ q).T
        sig = np.linalg.svd(b, compute_uv=False)[:d]
        denom = sig[0] if sig.size and sig[0] > 0 else 1.0
        if np.max(np.abs(sig - sig_prev)) / denom < tol:
            break
        sig_prev = sig
    ub, sig, vt = np.linalg.svd(b, full_matrices=False)
    u = q @ ub
    return u[:, :d], sig[:d], vt[:d].T


def factorize(h: HellingerMatrix, d: int, method: str = "auto",
              max_iter: int = 100, tol: float = 1e-5,
              seed: int = 0) -> BilingualEmbedding:
    """Rank-d truncated singular decomposition of H, no centering.

    ``method`` is ``exact`` (eigendecomposition of the smaller Gram matrix),
    ``subspace`` (seeded subspace iteration, at most ``max_iter`` sweeps) or
    ``auto``.  Signs are fixed so repeated runs are bit-identical.
    """
    v_tgt, v_src = h.shape
    if not 1 <= d <= min(v_tgt, v_src):
        raise ValueError(f"d must be in [1, {min(v_tgt, v_src)}], got {d}")
    if method == "auto":
        method = "exact" if min(v_tgt, v_src) <= _EXACT_MAX_DIM else "subspace"
    if method == "exact":
        u, sig, v = _svd_via_gram(h.entries, d)
    elif method == "subspace":
        u, sig, v = _svd_subspace(h.entries, d, max_iter, tol, seed)
    else:
        raise ValueError(f"unknown factorization method: {method!r}")
    _fix_signs(u, v)
    seen = np.diff(h.entries.tocsc().indptr) > 0
    return BilingualEmbedding(src_vecs=np.ascontiguousarray(v),
                              tgt_vecs=np.ascontiguousarray(u),
                              singular_values=sig, src_seen=seen)


def reconstruction(emb: BilingualEmbedding) -> np.ndarray:
    """Materialize tgt_vecs @ diag(sigma) @ src_vecs.T (dense; test-scale only)."""
    return (emb.tgt_vecs * emb.singular_values) @ emb.src_vecs.T


def _rank_with_ties(scores: np.ndarray, k: int, ascending: bool = False) -> np.ndarray:
    # Order by score, then collapse near-ties (relative gap < _TIE_REL_TOL)
    # so ids, not floating-point noise, decide the order within a tie group.
    sign = 1.0 if ascending else -1.0
    order = np.lexsort((np.arange(scores.size), sign * scores))
    scale = float(np.max(np.abs(scores))) if scores.size else 0.0
    if scale == 0.0:
        return np.arange(min(k, scores.size), dtype=np.int64)
    atol = scale * _TIE_REL_TOL
    ranked: list[int] = []
    i = 0
    n = order.size
    while i < n and len(ranked) < k:
        j = i + 1
        while j < n and abs(scores[order[j]] - scores[order[i]]) <= atol:
            j += 1
        group = np.sort(order[i:j])
        ranked.extend(int(g) for g in group)
        i = j
    return np.asarray(ranked[:k], dtype=np.int64)


def nearest_targets(emb: BilingualEmbedding, s: int, k: int,
                    metric: str = METRIC_RECONSTRUCTION) -> np.ndarray:
    """Top-k target ids for source word s, ties broken by lower id.

    With the default metric targets are ranked by the reconstructed
    co-occurrence score; with ``euclidean`` by distance between the
    sqrt(sigma)-scaled embeddings.  Unseen source words get an empty list.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not 0 <= s < emb.src_vecs.shape[0]:
        raise ValueError(f"source id out of range: {s}")
    if not emb.src_seen[s]:
        return np.empty(0, dtype=np.int64)
    if metric == METRIC_RECONSTRUCTION:
        return _rank_with_ties(emb.score_targets(s), k, ascending=False)
    if metric == METRIC_EUCLIDEAN:
        root = np.sqrt(emb.singular_values)
        e_s = emb.src_vecs[s] * root
        diffs = emb.tgt_vecs * root - e_s
        return _rank_with_ties(np.linalg.norm(diffs, axis=1), k, ascending=True)
    raise ValueError(f"unknown metric: {metric!r}")
