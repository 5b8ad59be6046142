"""Self-supervised core: texton-histogram regression, scoring, and the
Naive Bayes + entropy machinery used to notice environment shifts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UndefinedMetricError

C_OBSTACLE = 1
C_CLEAR = 2
CLASSES = (C_OBSTACLE, C_CLEAR)


@dataclass(frozen=True)
class RegressionModel:
    """Affine map from a texton histogram to a roughness estimate."""

    rho: np.ndarray
    bias: float

    def __post_init__(self):
        object.__setattr__(self, "rho", np.asarray(self.rho, dtype=float))
        if not (np.all(np.isfinite(self.rho)) and np.isfinite(self.bias)):
            raise ValueError("model coefficients must be finite")

    @property
    def m(self) -> int:
        return len(self.rho)


@dataclass(frozen=True)
class NaiveBayesModel:
    """Multinomial two-class model over texton occurrences.

    Row 0 of ``likelihoods`` belongs to the obstacle class, row 1 to the
    clear class; each row sums to 1 and is strictly positive after smoothing.
    """

    priors: np.ndarray  # (2,)
    likelihoods: np.ndarray  # (2, m)
    threshold: float = 0.0  # roughness threshold the training labels used

    def __post_init__(self):
        object.__setattr__(self, "priors", np.asarray(self.priors, dtype=float))
        object.__setattr__(self, "likelihoods", np.asarray(self.likelihoods, dtype=float))
        if self.priors.shape != (2,) or not np.isclose(self.priors.sum(), 1.0):
            raise ValueError("priors must be a 2-vector summing to 1")
        if np.any(self.likelihoods <= 0.0):
            raise ValueError("likelihoods must be strictly positive (smoothed)")
        if not np.allclose(self.likelihoods.sum(axis=1), 1.0):
            raise ValueError("each likelihood row must sum to 1")

    @property
    def m(self) -> int:
        return self.likelihoods.shape[1]


def fit_regression(histograms, targets, ridge_lambda: float = 1e-8) -> RegressionModel:
    """Least-squares fit of targets = rho . q + bias.

    The tiny ridge term on rho (never on the bias) keeps the normal
    equations solvable for degenerate inputs without visibly moving the
    solution of well-posed problems.
    """
    Q = np.atleast_2d(np.asarray(histograms, dtype=float))
    y = np.asarray(targets, dtype=float)
    if len(Q) != len(y) or len(y) < 1:
        raise ValueError("need equally many histograms and targets, at least one")
    n, m = Q.shape
    A = np.column_stack([Q, np.ones(n)])
    M = A.T @ A
    M[:m, :m] += ridge_lambda * np.eye(m)
    b = A.T @ y
    try:
        beta = np.linalg.solve(M, b)
    except np.linalg.LinAlgError:
        beta = np.linalg.lstsq(M, b, rcond=None)[0]
    return RegressionModel(rho=beta[:m], bias=float(beta[m]))


def predict(model: RegressionModel, q) -> float | np.ndarray:
    """Roughness estimate rho . q + bias; accepts one histogram or a batch."""
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != model.m:
        raise ValueError(f"histogram length {q.shape[-1]} != model size {model.m}")
    out = q @ model.rho + model.bias
    return float(out) if out.ndim == 0 else out


def nrmse(predictions, targets) -> float:
    """Root-mean-square error normalized by the target range."""
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(targets, dtype=float)
    if p.shape != t.shape or p.size == 0:
        raise ValueError("predictions and targets must share a nonzero length")
    spread = t.max() - t.min()
    if spread <= 0.0:
        raise UndefinedMetricError("constant targets leave the normalization undefined")
    return float(np.sqrt(np.mean((p - t) ** 2)) / spread)


def label(eps_hat: float, threshold: float) -> int:
    """Class of a roughness estimate: obstacle above the threshold, clear otherwise."""
    return C_OBSTACLE if eps_hat > threshold else C_CLEAR


def fit_naive_bayes(histograms, labels, smoothing_alpha: float = 1.0,
                    threshold: float = 0.0) -> NaiveBayesModel:
    """Multinomial Naive Bayes over texton mass with Laplace smoothing.

    Priors are the class frequencies; each class likelihood row is the
    alpha-smoothed, normalized sum of its members' histogram mass per texton.
    """
    Q = np.atleast_2d(np.asarray(histograms, dtype=float))
    labels = np.asarray(labels)
    if len(Q) != len(labels):
        raise ValueError("need one label per histogram")
    masks = [labels == c for c in CLASSES]
    if not all(mask.any() for mask in masks):
        raise UndefinedMetricError("both classes must be present in the training labels")
    m = Q.shape[1]
    priors = np.array([mask.sum() for mask in masks], dtype=float)
    priors /= priors.sum()
    rows = []
    for mask in masks:
        mass = Q[mask].sum(axis=0)
        rows.append((mass + smoothing_alpha) / (mass.sum() + smoothing_alpha * m))
    return NaiveBayesModel(priors=priors, likelihoods=np.stack(rows), threshold=threshold)


def posterior(model: NaiveBayesModel, q, patch_count: int = 25) -> np.ndarray:
    """Class probabilities for a histogram, using q * patch_count as evidence."""
    counts = np.asarray(q, dtype=float) * patch_count
    logp = np.log(model.priors) + counts @ np.log(model.likelihoods).T
    logp -= logp.max()
    p = np.exp(logp)
    return p / p.sum()


def entropy(class_probabilities) -> float:
    """Shannon entropy in bits; 0 log 0 counts as 0."""
    p = np.asarray(class_probabilities, dtype=float)
    nz = p[p > 0.0]
    return float(-(nz * np.log2(nz)).sum())
