"""Three-state readout: confusion matrices, synthetic shots, LDA and heralding."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import fsolve
from scipy.special import logsumexp
from scipy.stats import multivariate_normal

from .errors import NegativePopulationWarning, SingularCovariance, SingularMatrix
from .io import write_csv

__all__ = [
    "ConfusionMatrix",
    "CloudSpec",
    "ShotCloud",
    "LinearDiscriminant",
    "HeraldRule",
    "apply_confusion",
    "invert_confusion",
    "assignment_fidelity",
    "synthesize_shots",
    "linear_discriminant",
    "estimate_confusion",
    "herald_threshold",
    "reference_clouds",
    "STATE_LABELS",
]

STATE_LABELS = ("g", "e", "f")


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """``m[i, j] = P(assign i | prepared j)``; columns are probability vectors."""

    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float)
        if m.shape != (3, 3):
            raise ValueError("confusion matrix must be 3x3")
        if np.any(m < -1e-12) or np.any(m > 1 + 1e-12):
            raise ValueError("entries must lie in [0, 1]")
        if not np.allclose(m.sum(axis=0), 1.0, atol=1e-9):
            raise ValueError("columns must sum to 1")
        object.__setattr__(self, "m", m)

    @property
    def condition_number(self) -> float:
        return float(np.linalg.cond(self.m))

    def to_csv(self, path: str | Path) -> Path:
        rows = [(STATE_LABELS[i], *self.m[i]) for i in range(3)]
        return write_csv(path, ["assigned", "prep_g", "prep_e", "prep_f"], rows)


def _as_matrix(m) -> np.ndarray:
    return m.m if isinstance(m, ConfusionMatrix) else np.asarray(m, dtype=float)


def apply_confusion(m, p_true: Sequence[float]) -> np.ndarray:
    return _as_matrix(m) @ np.asarray(p_true, dtype=float)


def invert_confusion(m, p_assigned: Sequence[float]) -> np.ndarray:
    """Solve ``M p = p_assigned`` exactly.

    Negative components are returned unchanged and reported with a
    :class:`NegativePopulationWarning`; they usually point at preparation
    errors rather than readout.
    """
    mat = _as_matrix(m)
    if not np.isfinite(np.linalg.cond(mat)) or np.linalg.cond(mat) > 1e12:
        raise SingularMatrix("confusion matrix is not invertible")
    p = np.linalg.solve(mat, np.asarray(p_assigned, dtype=float))
    if np.any(p < -1e-12):
        warnings.warn(f"corrected populations contain negative entries: {p}",
                      NegativePopulationWarning, stacklevel=2)
    return p


def assignment_fidelity(m) -> float:
    return float(np.trace(_as_matrix(m)) / 3.0)


@dataclass(frozen=True, eq=False)
class CloudSpec:
    """Per-state means (3 x 4) and shared covariance (4 x 4) of the
    integrated (I_R, Q_R, I_T, Q_T) signal."""

    means: np.ndarray
    covariance: np.ndarray


@dataclass(frozen=True, eq=False)
class ShotCloud:
    points: np.ndarray      # (n, 4)
    labels: np.ndarray      # (n,) integer state index
    class_means: np.ndarray
    class_covariance: np.ndarray

    def to_csv(self, path: str | Path) -> Path:
        rows = ((STATE_LABELS[l], *p) for l, p in zip(self.labels, self.points))
        return write_csv(path, ["label", "i_r", "q_r", "i_t", "q_t"], rows)


def _cholesky(cov: np.ndarray) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    if not np.allclose(cov, cov.T, atol=1e-12):
        raise SingularCovariance("covariance must be symmetric")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance("covariance is not positive definite") from exc


def synthesize_shots(spec: CloudSpec, counts: Sequence[int] | int, seed: int) -> ShotCloud:
    """Gaussian shots per prepared state; one RNG stream per state."""
    means = np.asarray(spec.means, dtype=float)
    chol = _cholesky(spec.covariance)
    if np.isscalar(counts):
        counts = [int(counts)] * len(means)
    streams = np.random.SeedSequence(seed).spawn(len(means))
    pts, labels = [], []
    for k, (mu, n, ss) in enumerate(zip(means, counts, streams)):
        z = np.random.default_rng(ss).standard_normal((n, means.shape[1]))
        pts.append(mu + z @ chol.T)
        labels.append(np.full(n, k))
    return ShotCloud(np.vstack(pts), np.concatenate(labels), means, np.asarray(spec.covariance, float))


@dataclass(frozen=True, eq=False)
class LinearDiscriminant:
    """Shared-covariance Gaussian classifier with affine scores."""

    means: np.ndarray
    covariance: np.ndarray
    priors: np.ndarray

    def __post_init__(self):
        _cholesky(self.covariance)
        prec = np.linalg.inv(self.covariance)
        w = self.means @ prec
        b = -0.5 * np.einsum("ij,ij->i", w, self.means) + np.log(self.priors)
        object.__setattr__(self, "_w", w)
        object.__setattr__(self, "_b", b)

    def scores(self, u: np.ndarray) -> np.ndarray:
        return np.atleast_2d(u) @ self._w.T + self._b

    def predict(self, u: np.ndarray) -> np.ndarray:
        return np.argmax(self.scores(u), axis=1)

    def posterior(self, u: np.ndarray) -> np.ndarray:
        s = self.scores(u)
        return np.exp(s - logsumexp(s, axis=1, keepdims=True))


def linear_discriminant(cloud: ShotCloud, priors: Sequence[float] | None = None) -> LinearDiscriminant:
    """Fit class means and the pooled covariance of a labelled cloud."""
    k = int(cloud.labels.max()) + 1
    means = np.array([cloud.points[cloud.labels == j].mean(axis=0) for j in range(k)])
    centred = cloud.points - means[cloud.labels]
    cov = centred.T @ centred / (len(cloud.points) - k)
    pri = np.full(k, 1.0 / k) if priors is None else np.asarray(priors, dtype=float)
    if np.any(pri <= 0) or not math.isclose(pri.sum(), 1.0, abs_tol=1e-9):
        raise ValueError("priors must be positive and sum to 1")
    return LinearDiscriminant(means, cov, pri)


def estimate_confusion(cloud: ShotCloud, classifier) -> ConfusionMatrix:
    """Empirical ``P(assign i | prepared j)`` of ``classifier`` on a labelled cloud."""
    pred = classifier.predict(cloud.points) if hasattr(classifier, "predict") else classifier(cloud.points)
    m = np.zeros((3, 3))
    for j in range(3):
        sel = cloud.labels == j
        if sel.any():
            m[:, j] = np.bincount(pred[sel], minlength=3)[:3] / sel.sum()
        else:
            m[j, j] = 1.0
    return ConfusionMatrix(m)


@dataclass(frozen=True, eq=False)
class HeraldRule:
    """Accept a shot as ``g`` only if its posterior of ``g`` reaches ``target``."""

    classifier: LinearDiscriminant
    target: float

    def accept(self, u: np.ndarray) -> np.ndarray:
        post = self.classifier.posterior(u)
        return (np.argmax(post, axis=1) == 0) & (post[:, 0] >= self.target)

    def evaluate(self, cloud: ShotCloud) -> tuple[float, float]:
        """(acceptance fraction, fraction of accepted shots not prepared in g)."""
        acc = self.accept(cloud.points)
        n_acc = int(acc.sum())
        if n_acc == 0:
            return 0.0, 0.0
        return n_acc / len(acc), float(np.mean(cloud.labels[acc] != 0))

    def acceptance(self, cloud: ShotCloud) -> float:
        return self.evaluate(cloud)[0]

    def post_selection_error(self, cloud: ShotCloud) -> float:
        return self.evaluate(cloud)[1]


def herald_threshold(classifier: LinearDiscriminant, target_confidence: float) -> HeraldRule:
    if not 0.5 < target_confidence < 1:
        raise ValueError("target_confidence must lie in (0.5, 1)")
    return HeraldRule(classifier, float(target_confidence))


def _cell_probability(d1: float, d2: float, cos_angle: float) -> float:
    """P(correct) for a unit Gaussian in a wedge bounded by two bisectors."""
    cov = np.array([[1.0, cos_angle], [cos_angle, 1.0]])
    return float(multivariate_normal(mean=[0, 0], cov=cov).cdf([d1 / 2, d2 / 2]))


def _triangle(sides):
    a, b, c = sides  # |g-e|, |g-f|, |e-f|
    x = (a * a + b * b - c * c) / (2 * a)
    y = math.sqrt(max(b * b - x * x, 1e-12))
    return np.array([[0.0, 0.0], [a, 0.0], [x, y]])


def _diagonal(sides) -> np.ndarray:
    pts = _triangle(sides)
    out = []
    for j in range(3):
        others = [k for k in range(3) if k != j]
        vecs = [pts[j] - pts[k] for k in others]
        dist = [np.linalg.norm(v) for v in vecs]
        cos = float(np.dot(vecs[0], vecs[1]) / (dist[0] * dist[1]))
        out.append(_cell_probability(dist[0], dist[1], cos))
    return np.array(out)


def reference_clouds(diagonal: Sequence[float] = (0.97, 0.94, 0.92), sigma: float = 1.0) -> CloudSpec:
    """Isotropic clouds whose LDA confusion diagonal equals ``diagonal``.

    The three means form a triangle in the (I_R, Q_R) plane; its side
    lengths are solved so that each Voronoi cell holds the requested mass.
    """
    target = np.asarray(diagonal, dtype=float)
    sides, info, ok, msg = fsolve(lambda s: _diagonal(np.abs(s)) - target, [4.0, 4.5, 3.5],
                                  full_output=True, xtol=1e-12)
    if ok != 1:
        raise RuntimeError(f"cloud construction failed: {msg}")
    pts = _triangle(np.abs(sides)) * sigma
    means = np.zeros((3, 4))
    means[:, :2] = pts
    return CloudSpec(means, sigma**2 * np.eye(4))
