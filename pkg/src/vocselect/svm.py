"""Per-target-word sparse linear classifiers over bag-of-words source features.

One L2-regularized hinge-loss model per target word, trained by SGD with the
learning-rate schedule eta_t = 1 / (reg * (t + t0)); t0 comes from a small
deterministic calibration pass on a data subsample.  Scores are evaluated
sparsely: only the features present in the sentence are touched, summed in
ascending feature order so sparse and dense evaluation agree bit for bit.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .corpus import Bitext, Vocab

logger = logging.getLogger(__name__)

_MAGIC = b"VSSVMEN1"

CAL_RECALL = "recall"
CAL_FREQUENCY = "frequency"

DEFAULT_EPOCHS = 10
DEFAULT_REG = 1e-4
DEFAULT_NEG_RATIO = 10
DEFAULT_MIN_POSITIVES = 5

Example = tuple[tuple[int, ...], int]   # (sorted feature ids, label +1/-1)


def featurize(src_sentence: Sequence[int], unk_id: int = -1) -> tuple[int, ...]:
    """Sorted distinct in-vocab source ids (presence, not counts)."""
    return tuple(sorted({i for i in src_sentence if i != unk_id}))


@dataclass
class SvmModel:
    """Sparse linear scorer for one target word."""

    target_id: int
    weights: dict[int, float]
    bias: float
    threshold: float = float("-inf")

    def score(self, features: Sequence[int]) -> float:
        # Ascending feature order keeps the float sum identical to a dense
        # index-order dot product.
        total = 0.0
        get = self.weights.get
        for f in features:
            w = get(f)
            if w is not None:
                total += w
        return total + self.bias

    def fires(self, features: Sequence[int]) -> bool:
        return self.score(features) >= self.threshold


@dataclass
class SvmEnsemble:
    """Calibrated per-target-word models plus training metadata."""

    models: dict[int, SvmModel]
    regularization: float
    epochs: int
    skipped: list[int] = field(default_factory=list)

    @property
    def trained_set(self) -> set[int]:
        return set(self.models)

    def save(self, path: Union[str, Path]) -> None:
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<dQQ", self.regularization, self.epochs,
                                 len(self.models)))
            for tid in sorted(self.models):
                m = self.models[tid]
                feats = sorted(m.weights)
                fh.write(struct.pack("<qddQ", tid, m.bias, m.threshold,
                                     len(feats)))
                np.asarray(feats, dtype=np.int64).tofile(fh)
                np.asarray([m.weights[f] for f in feats],
                           dtype=np.float64).tofile(fh)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "SvmEnsemble":
        with open(path, "rb") as fh:
            magic = fh.read(len(_MAGIC))
            if magic != _MAGIC:
                raise ValueError(f"{path}: not an SVM ensemble file")
            reg, epochs, n_models = struct.unpack("<dQQ", fh.read(24))
            models: dict[int, SvmModel] = {}
            for _ in range(n_models):
                tid, bias, threshold, n_feats = struct.unpack("<qddQ", fh.read(32))
                feats = np.fromfile(fh, dtype=np.int64, count=n_feats)
                vals = np.fromfile(fh, dtype=np.float64, count=n_feats)
                if feats.size != n_feats or vals.size != n_feats:
                    raise ValueError(f"{path}: truncated SVM ensemble file")
                models[tid] = SvmModel(
                    target_id=tid,
                    weights={int(f): float(v) for f, v in zip(feats, vals)},
                    bias=bias, threshold=threshold)
        return cls(models=models, regularization=reg, epochs=int(epochs))

    def export_tsv(self, path: Union[str, Path], tgt_vocab: Vocab) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tid in sorted(self.models):
                m = self.models[tid]
                ws = " ".join(f"{f}:{w:.8g}" for f, w in sorted(m.weights.items()))
                fh.write(f"{tgt_vocab.tokens[tid]}\t{m.bias:.8g}\t"
                         f"{m.threshold:.8g}\t{ws}\n")


def hinge_objective(examples: Sequence[Example], weights: dict[int, float],
                    bias: float, reg: float) -> float:
    """Averaged hinge loss plus (reg/2)||w||^2."""
    total = 0.0
    for feats, label in examples:
        s = sum(weights.get(f, 0.0) for f in feats) + bias
        total += max(0.0, 1.0 - label * s)
    sq = sum(w * w for w in weights.values())
    return total / max(len(examples), 1) + 0.5 * reg * sq


class _SparseSgd:
    """Scaled sparse weight vector for the SGD inner loop."""

    def __init__(self):
        self.values: dict[int, float] = {}
        self.scale = 1.0
        self.bias = 0.0

    def score(self, feats: Sequence[int]) -> float:
        v = self.values
        return self.scale * sum(v.get(f, 0.0) for f in feats) + self.bias

    def step(self, feats: Sequence[int], label: int, eta: float, reg: float) -> None:
        margin = label * self.score(feats)
        self.scale *= max(1.0 - eta * reg, 1e-12)
        if margin < 1.0:
            add = eta * label / self.scale
            v = self.values
            for f in feats:
                v[f] = v.get(f, 0.0) + add
            self.bias += eta * label
        if self.scale < 1e-9:
            self.values = {f: w * self.scale for f, w in self.values.items()}
            self.scale = 1.0

    def materialize(self) -> dict[int, float]:
        return {f: w * self.scale for f, w in self.values.items() if w != 0.0}


def _pass_objective(examples: Sequence[Example], eta0: float, reg: float) -> float:
    sgd = _SparseSgd()
    t = 0
    for feats, label in examples:
        sgd.step(feats, label, eta0 / (1.0 + eta0 * reg * t), reg)
        t += 1
    return hinge_objective(examples, sgd.materialize(), sgd.bias, reg)


def _calibrate_eta0(examples: Sequence[Example], reg: float) -> float:
    # Factor-2 search for the constant-rate one-pass objective minimum,
    # evaluated on a bounded deterministic sample.
    sample = list(examples[:min(len(examples), 1000)])
    eta = 1.0
    best = _pass_objective(sample, eta, reg)
    factor = 2.0
    lower = _pass_objective(sample, eta / factor, reg)
    if lower < best:
        while lower < best and eta > 1e-6:
            eta /= factor
            best = lower
            lower = _pass_objective(sample, eta / factor, reg)
    else:
        higher = _pass_objective(sample, eta * factor, reg)
        while higher < best and eta < 1e6:
            eta *= factor
            best = higher
            higher = _pass_objective(sample, eta * factor, reg)
    return eta


def train_one(examples: Sequence[Example], epochs: int = DEFAULT_EPOCHS,
              reg: float = DEFAULT_REG, seed: int = 0,
              target_id: int = -1, name: str = "") -> SvmModel:
    """SGD over L2-regularized hinge loss; deterministic given the seed."""
    labels = {label for _, label in examples}
    if labels != {1, -1}:
        word = name or f"target id {target_id}"
        raise ValueError(f"single-class training data for {word}: "
                         f"labels seen = {sorted(labels)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(examples))
    shuffled = [examples[i] for i in order]
    eta0 = _calibrate_eta0(shuffled, reg)
    t0 = 1.0 / (eta0 * reg)
    sgd = _SparseSgd()
    t = 0.0
    for _ in range(epochs):
        order = rng.permutation(len(examples))
        for i in order:
            feats, label = examples[i]
            sgd.step(feats, label, 1.0 / (reg * (t + t0)), reg)
            t += 1.0
    return SvmModel(target_id=target_id, weights=sgd.materialize(),
                    bias=sgd.bias)


def sentence_labels(bitext: Bitext, target_id: int) -> list[int]:
    return [1 if target_id in p.tgt else -1 for p in bitext.pairs]


def train_ensemble(bitext: Bitext, target_words: Iterable[int],
                   epochs: int = DEFAULT_EPOCHS, reg: float = DEFAULT_REG,
                   neg_ratio: int = DEFAULT_NEG_RATIO,
                   min_positives: int = DEFAULT_MIN_POSITIVES,
                   max_positives: int = 0, seed: int = 0) -> SvmEnsemble:
    """One model per eligible target word.

    A word needs at least ``min_positives`` positive sentences and at least
    one negative; negatives are subsampled to ``neg_ratio`` per positive and
    ``max_positives`` > 0 caps the positives, both deterministically from
    (seed, target id), so training any subset of words in any order yields
    identical models.
    """
    unk = bitext.src_vocab.unk_id
    feats_per_sent = [featurize(p.src, unk) for p in bitext.pairs]
    positives_of: dict[int, list[int]] = {}
    for si, p in enumerate(bitext.pairs):
        for t in set(p.tgt):
            positives_of.setdefault(t, []).append(si)
    n_sents = len(bitext.pairs)
    models: dict[int, SvmModel] = {}
    skipped: list[int] = []
    for tid in sorted(set(target_words)):
        all_pos = positives_of.get(tid, [])
        if len(all_pos) < min_positives or len(all_pos) == n_sents:
            skipped.append(tid)
            continue
        rng = np.random.default_rng([seed, tid])
        pos = all_pos
        if max_positives > 0 and len(pos) > max_positives:
            keep = sorted(rng.choice(len(pos), size=max_positives,
                                     replace=False).tolist())
            pos = [pos[i] for i in keep]
        mask = np.ones(n_sents, dtype=bool)
        mask[np.asarray(all_pos, dtype=np.int64)] = False
        neg_pool = np.flatnonzero(mask)
        n_neg = min(int(neg_pool.size), neg_ratio * len(pos))
        neg = sorted(rng.choice(neg_pool.size, size=n_neg,
                                replace=False).tolist())
        examples: list[Example] = (
            [(feats_per_sent[i], 1) for i in pos]
            + [(feats_per_sent[neg_pool[i]], -1) for i in neg])
        models[tid] = train_one(examples, epochs=epochs, reg=reg,
                                seed=int(rng.integers(2**31)), target_id=tid)
    if skipped:
        logger.info("SVM training skipped %d ineligible target words",
                    len(skipped))
    return SvmEnsemble(models=models, regularization=reg, epochs=epochs,
                       skipped=skipped)


def calibrate(model: SvmModel, validation: Bitext,
              mode: str = CAL_RECALL, value: float = 0.9) -> float:
    """Pick a decision threshold on a validation bitext.

    ``recall`` mode returns the largest threshold keeping recall on the
    validation positives at or above ``value`` (-inf when there are no
    positives, i.e. always fire).  ``frequency`` mode makes the model fire
    on round(value * positive count) validation sentences.
    """
    if not validation.pairs:
        raise ValueError("empty validation bitext")
    unk = validation.src_vocab.unk_id
    scores = np.asarray([model.score(featurize(p.src, unk))
                         for p in validation.pairs])
    labels = np.asarray(sentence_labels(validation, model.target_id))
    n_pos = int((labels == 1).sum())
    if mode == CAL_RECALL:
        if not 0.0 < value <= 1.0:
            raise ValueError(f"recall target must be in (0, 1], got {value}")
        if n_pos == 0:
            logger.warning("calibrate: no validation positives for target %d; "
                           "threshold set to always fire", model.target_id)
            return float("-inf")
        pos_scores = np.sort(scores[labels == 1])[::-1]
        need = int(np.ceil(value * n_pos))
        return float(pos_scores[need - 1])
    if mode == CAL_FREQUENCY:
        if value < 0.0:
            raise ValueError(f"frequency multiplier must be >= 0, got {value}")
        want = int(round(value * n_pos))
        if want <= 0:
            return float("inf")
        if want >= scores.size:
            return float("-inf")
        return float(np.sort(scores)[::-1][want - 1])
    raise ValueError(f"unknown calibration mode: {mode!r}")


def calibrate_ensemble(ensemble: SvmEnsemble, validation: Bitext,
                       mode: str = CAL_RECALL, value: float = 0.9) -> int:
    """Calibrate every model in place; returns how many were flagged always-fire."""
    flagged = 0
    for model in ensemble.models.values():
        model.threshold = calibrate(model, validation, mode=mode, value=value)
        if model.threshold == float("-inf"):
            flagged += 1
    return flagged


def select_svm(ensemble: SvmEnsemble, src_sentence: Sequence[int],
               unk_id: int = -1) -> set[int]:
    """Target ids whose calibrated model fires on the sentence's features."""
    feats = featurize(src_sentence, unk_id)
    return {tid for tid, m in ensemble.models.items() if m.fires(feats)}
