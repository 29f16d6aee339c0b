"""K+1-way candidate selection with a reject class.

A linear scorer over eight pair features gives each candidate a logit;
a learned ``none_bias`` is the logit of "none of these". Training is
softmax cross-entropy with plain mini-batch gradient descent.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from shelfmatch.corpus import DataFormatError
from shelfmatch.strdist import levenshtein_pairs
from shelfmatch.synth import SynthSample

N_FEATURES = 8
FEATURE_NAMES = ("edit_sim", "jaccard", "cosine", "len_ratio", "query_cover",
                 "cand_cover", "recip_rank", "bias")
RANK_FEATURE = 6
NONE = -1


def _token_features(query: str, cand: str) -> tuple[float, float, float, float]:
    q, c = set(query.split()), set(cand.split())
    inter = len(q & c)
    union = len(q | c)
    jaccard = inter / union if union else 1.0
    q_cover = inter / len(q) if q else 0.0
    c_cover = inter / len(c) if c else 0.0
    lq, lc = len(query), len(cand)
    ratio = min(lq, lc) / max(lq, lc) if max(lq, lc) else 1.0
    return jaccard, ratio, q_cover, c_cover


def extract_features(query: str, candidate: str, score: float, rank: int,
                     edit_sim: float | None = None) -> np.ndarray:
    """Feature vector for one (query, candidate) pair; every entry is in [0, 1]."""
    if edit_sim is None:
        from shelfmatch.strdist import normalized_similarity
        edit_sim = normalized_similarity(query, candidate)
    jaccard, ratio, q_cover, c_cover = _token_features(query, candidate)
    return np.array([
        edit_sim, jaccard, min(max(score, 0.0), 1.0), ratio,
        q_cover, c_cover, 1.0 / (1 + rank), 1.0,
    ])


def feature_tensor(queries: Sequence[str], candidate_texts: Sequence[Sequence[str]],
                   scores: Sequence[Sequence[float]], k: int) -> tuple[np.ndarray, np.ndarray]:
    """``(n, k, 8)`` features and an ``(n, k)`` validity mask; short lists are padded."""
    n = len(queries)
    feats = np.zeros((n, k, N_FEATURES))
    mask = np.zeros((n, k), dtype=bool)
    left, right, where = [], [], []
    for i, (q, cands) in enumerate(zip(queries, candidate_texts)):
        if len(cands) > k:
            raise ValueError(f"query {i} has {len(cands)} candidates, more than K={k}")
        for r, c in enumerate(cands):
            left.append(q)
            right.append(c)
            where.append((i, r))
    dist = levenshtein_pairs(left, right) if left else np.zeros(0, dtype=np.int64)
    for (i, r), q, c, d in zip(where, left, right, dist):
        longest = max(len(q), len(c))
        sim = 1.0 - int(d) / longest if longest else 1.0
        feats[i, r] = extract_features(q, c, scores[i][r], r, edit_sim=sim)
        mask[i, r] = True
    return feats, mask


@dataclass
class RerankModel:
    k: int
    weights: np.ndarray = field(default_factory=lambda: np.zeros(N_FEATURES))
    none_bias: float = 0.0
    seed: int = 0
    epochs: int = 0
    learning_rate: float = 0.1
    batch_size: int = 64
    loss_curve: list[float] = field(default_factory=list)
    train_accuracy: float | None = None

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.k < 1:
            raise ValueError("K must be >= 1")
        if self.weights.shape != (N_FEATURES,) or not np.all(np.isfinite(self.weights)):
            raise ValueError(f"weights must be {N_FEATURES} finite numbers")
        if not math.isfinite(self.none_bias):
            raise ValueError("none_bias must be finite")

    def logits(self, feats: np.ndarray, mask: np.ndarray) -> np.ndarray:
        """``(n, k + 1)`` logits; the last column is the reject class."""
        cand = (feats * self.weights).sum(axis=-1)
        cand = np.where(mask, cand, -np.inf)
        none = np.full(cand.shape[:-1] + (1,), self.none_bias)
        return np.concatenate([cand, none], axis=-1)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "weights": [float(w) for w in self.weights],
            "none_bias": float(self.none_bias),
            "seed": self.seed,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "loss_curve": [float(x) for x in self.loss_curve],
            "train_accuracy": self.train_accuracy,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "RerankModel":
        path = Path(path)
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
            return cls(
                k=int(obj["k"]), weights=np.array(obj["weights"], dtype=np.float64),
                none_bias=float(obj["none_bias"]), seed=int(obj.get("seed", 0)),
                epochs=int(obj.get("epochs", 0)),
                learning_rate=float(obj.get("learning_rate", 0.1)),
                batch_size=int(obj.get("batch_size", 64)),
                loss_curve=list(obj.get("loss_curve", [])),
                train_accuracy=obj.get("train_accuracy"),
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(f"{path}: malformed model file: {exc}") from None


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def select_index(logits: np.ndarray) -> int:
    """Argmax over ``[s_0 .. s_{K-1}, none]``; the first maximum wins, so the
    reject class loses every tie."""
    k = len(logits) - 1
    best = int(np.argmax(logits))
    return NONE if best == k else best


def _labels_onehot(samples: Sequence[SynthSample], k: int) -> np.ndarray:
    y = np.zeros((len(samples), k + 1))
    for i, s in enumerate(samples):
        y[i, k if s.is_none else s.label] = 1.0
    return y


def samples_to_arrays(samples: Sequence[SynthSample], k: int
                      ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    feats, mask = feature_tensor([s.corrupted_text for s in samples],
                                 [s.candidate_texts for s in samples],
                                 [s.scores for s in samples], k)
    return feats, mask, _labels_onehot(samples, k)


def cross_entropy(model: RerankModel, feats: np.ndarray, mask: np.ndarray, y: np.ndarray) -> float:
    logits = model.logits(feats, mask)
    shift = logits.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(logits - shift).sum(axis=-1)) + shift[:, 0]
    picked = np.where(y > 0, logits, 0.0).sum(axis=-1)
    return float(np.mean(log_z - picked))


def predict(model: RerankModel, feats: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Selected index per row; ``K`` (not :data:`NONE`) marks the reject class here."""
    logits = model.logits(feats, mask)
    return np.argmax(logits, axis=-1)


def train_reranker(samples: Sequence[SynthSample], epochs: int = 20, learning_rate: float = 0.1,
                   batch_size: int = 64, seed: int = 0, k: int | None = None) -> RerankModel:
    """Fit weights and the reject bias from zero by mini-batch gradient descent."""
    if not samples:
        raise ValueError("cannot train on an empty sample list")
    if epochs < 0 or batch_size < 1 or not learning_rate > 0:
        raise ValueError("need epochs >= 0, batch_size >= 1 and a positive learning rate")
    k = k or max(s.k for s in samples)
    feats, mask, y = samples_to_arrays(samples, k)
    model = RerankModel(k=k, seed=seed, epochs=epochs, learning_rate=learning_rate,
                        batch_size=batch_size)
    rng = np.random.default_rng(seed)
    n = len(samples)
    for epoch in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            p = _softmax(model.logits(feats[idx], mask[idx]))
            err = p - y[idx]
            grad_w = (err[:, :k, None] * feats[idx]).sum(axis=(0, 1)) / len(idx)
            grad_none = err[:, k].sum() / len(idx)
            model.weights = model.weights - learning_rate * grad_w
            model.none_bias = model.none_bias - learning_rate * grad_none
        loss = cross_entropy(model, feats, mask, y)
        if not math.isfinite(loss):
            raise FloatingPointError(
                f"non-finite training loss at epoch {epoch + 1}; weights={model.weights.tolist()}, "
                f"none_bias={model.none_bias}"
            )
        model.loss_curve.append(loss)
    model.train_accuracy = float(np.mean(predict(model, feats, mask) == y.argmax(axis=-1)))
    return model


@dataclass(frozen=True)
class HeldOutScore:
    accuracy: float
    none_recall: float
    n: int


def evaluate_reranker(model: RerankModel, samples: Sequence[SynthSample]) -> HeldOutScore:
    """K+1-way accuracy and recall of the reject class on labelled samples."""
    if not samples:
        raise ValueError("no samples to evaluate")
    feats, mask, y = samples_to_arrays(samples, model.k)
    pred = predict(model, feats, mask)
    truth = y.argmax(axis=-1)
    none = truth == model.k
    recall = float(np.mean(pred[none] == model.k)) if none.any() else float("nan")
    return HeldOutScore(float(np.mean(pred == truth)), recall, len(samples))


def rerank_select(model: RerankModel, query: str, candidate_texts: Sequence[str],
                  scores: Sequence[float]) -> tuple[int, float]:
    """Chosen candidate index (or :data:`NONE`) and its softmax probability."""
    if not len(candidate_texts):
        return NONE, 1.0
    if len(candidate_texts) > model.k:
        raise ValueError(f"{len(candidate_texts)} candidates for a K={model.k} model")
    feats, mask = feature_tensor([query], [candidate_texts], [scores], model.k)
    logits = model.logits(feats, mask)[0]
    choice = select_index(logits)
    prob = _softmax(logits)[model.k if choice == NONE else choice]
    return choice, float(prob)


def select_from_scores(scores: Sequence[float], none_score: float) -> int:
    """Same decision rule for externally computed candidate scores."""
    return select_index(np.append(np.asarray(scores, dtype=np.float64), none_score))
