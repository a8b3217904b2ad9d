"""Single-pass uncertainty baselines over feature records: mean token entropy,
mean token negative log-likelihood, and a standardized logistic regression on
summary statistics of the same signals."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .features import Dataset, FeatureRecord
from .nn import sigmoid

N_LOGISTIC_FEATURES = 5


def predictive_entropy(record: FeatureRecord, length_normalized: bool = True) -> float:
    """Mean next-token entropy over the real tokens (sum with the flag off)."""
    ent = record.entropies[:record.true_len].astype(np.float64)
    return float(ent.mean() if length_normalized else ent.sum())


def token_nll(record: FeatureRecord) -> float:
    """Mean negative log-likelihood over the real tokens."""
    ll = record.log_likelihoods[:record.true_len].astype(np.float64)
    return float(-ll.mean())


def logistic_features(record: FeatureRecord) -> np.ndarray:
    """Summary statistics feeding the logistic reference:
    [mean ll, min ll, mean entropy, max entropy, true_len / l_max]."""
    n = record.true_len
    ll = record.log_likelihoods[:n].astype(np.float64)
    ent = record.entropies[:n].astype(np.float64)
    return np.array([ll.mean(), ll.min(), ent.mean(), ent.max(), n / record.l_max])


def dataset_features(ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    X = np.stack([logistic_features(r) for r in ds.records])
    return X, ds.labels().astype(np.float64)


@dataclass
class LogisticModel:
    """Trained logistic reference; keeps the training standardization so test
    records are scored on the same scale."""

    weights: np.ndarray       # (6,): five feature weights then the bias
    feature_mean: np.ndarray  # (5,)
    feature_std: np.ndarray   # (5,)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        Xs = (X - self.feature_mean) / self.feature_std
        return sigmoid(Xs @ self.weights[:-1] + self.weights[-1])

    def score_record(self, record: FeatureRecord) -> float:
        return float(self.predict_proba(logistic_features(record)[None])[0])

    def score_dataset(self, ds: Dataset) -> np.ndarray:
        X, _ = dataset_features(ds)
        return self.predict_proba(X)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            json.dump({
                "weights": [float(v) for v in self.weights],
                "feature_mean": [float(v) for v in self.feature_mean],
                "feature_std": [float(v) for v in self.feature_std],
            }, f)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "LogisticModel":
        with open(path, "r", encoding="utf-8") as f:
            d = json.load(f)
        return cls(np.array(d["weights"]), np.array(d["feature_mean"]),
                   np.array(d["feature_std"]))


def logistic_loss_and_grad(w: np.ndarray, Xs: np.ndarray, y: np.ndarray,
                           l2: float) -> tuple[float, np.ndarray]:
    """Mean BCE plus l2 * ||w||^2 on the feature weights (bias unpenalized,
    so an all-zero-feature fit recovers the exact base-rate log odds)."""
    z = Xs @ w[:-1] + w[-1]
    p = sigmoid(z)
    eps = 1e-12
    loss = float(-(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps)).mean())
    loss += l2 * float(w[:-1] @ w[:-1])
    n = Xs.shape[0]
    err = p - y
    grad = np.empty_like(w)
    grad[:-1] = Xs.T @ err / n + 2 * l2 * w[:-1]
    grad[-1] = err.mean()
    return loss, grad


def logistic_train(ds: Dataset, seed: int = 0, l2: float = 1e-4, lr: float = 0.5,
                   iters: int = 2000, tol: float = 1e-9) -> LogisticModel:
    """Full-batch gradient descent from zero weights on standardized features.

    Deterministic regardless of seed (kept for interface symmetry with the
    other trainers). Raises on single-class data.
    """
    X, y = dataset_features(ds)
    if len(np.unique(y)) < 2:
        raise ValueError("logistic_train: both labels must be present")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    Xs = (X - mean) / std
    w = np.zeros(N_LOGISTIC_FEATURES + 1)
    for _ in range(iters):
        _, grad = logistic_loss_and_grad(w, Xs, y, l2)
        w -= lr * grad
        if float(np.abs(grad).max()) < tol:
            break
    return LogisticModel(weights=w, feature_mean=mean, feature_std=std)


def score_dataset(ds: Dataset, kind: str, logistic_model: LogisticModel | None = None,
                  pe_length_normalized: bool = True) -> np.ndarray:
    """Raw uncertainty scores for a whole dataset under one baseline."""
    if kind == "pe":
        return np.array([predictive_entropy(r, pe_length_normalized) for r in ds.records])
    if kind == "tnll":
        return np.array([token_nll(r) for r in ds.records])
    if kind == "logistic":
        if logistic_model is None:
            raise ValueError("logistic baseline needs a trained model")
        return logistic_model.score_dataset(ds)
    raise ValueError(f"unknown baseline {kind!r} (choose from pe, tnll, logistic)")
