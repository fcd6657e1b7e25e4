"""Synthetic distributions with exact posteriors and simulated expert pools."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import softmax

from .errors import ValidationError

DEFAULT_EXPERT_BETA = (0.05, 0.045, 0.040, 0.035, 0.03, 0.03)


class GaussianMixture:
    """Equal-prior isotropic Gaussians (unit variance) centred on a scaled simplex.

    Class means are the vertices of a regular simplex with pairwise distance
    ``separation``, embedded in the first ``n_classes - 1`` coordinates.
    """

    def __init__(self, n_classes: int, dim: int, separation: float, seed: int = 0):
        if n_classes < 2:
            raise ValidationError("need at least two classes")
        if dim < max(1, n_classes - 1):
            raise ValidationError(f"dim must be >= n_classes - 1 = {n_classes - 1}")
        if not (np.isfinite(separation) and separation >= 0):
            raise ValidationError("separation must be finite and non-negative")
        self.n_classes = n_classes
        self.dim = dim
        self.separation = float(separation)
        self.seed = seed
        self.means = _simplex_vertices(n_classes, dim) * self.separation

    def posterior(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        sq = ((X[:, None, :] - self.means[None, :, :]) ** 2).sum(axis=-1)
        return softmax(-0.5 * sq, axis=1)

    def sample(self, size: int, rng: np.random.Generator | None = None):
        """Draw ``(X, y)``; labels are 0-based."""
        rng = np.random.default_rng(self.seed) if rng is None else rng
        y = rng.integers(0, self.n_classes, size=size)
        X = self.means[y] + rng.standard_normal((size, self.dim))
        return X, y


def _simplex_vertices(n: int, dim: int) -> np.ndarray:
    centred = np.eye(n) - 1.0 / n
    # orthonormal basis of the (n-1)-dimensional span of the centred vertices
    u, s, _ = np.linalg.svd(centred.T)
    coords = centred @ u[:, : n - 1]
    coords /= np.sqrt(2.0)  # unit-vector differences have length sqrt(2)
    out = np.zeros((n, dim))
    out[:, : n - 1] = coords
    return out


def make_gaussian_mixture(n_classes: int, dim: int, separation: float, seed: int = 0) -> GaussianMixture:
    return GaussianMixture(n_classes, dim, separation, seed)


class TabularDistribution:
    """Finite input space ``{0..I-1}`` (uniform) with explicit class posteriors."""

    def __init__(self, posteriors):
        posteriors = np.asarray(posteriors, dtype=np.float64)
        if posteriors.ndim != 2 or np.any(posteriors < 0) or not np.allclose(
                posteriors.sum(axis=1), 1.0, rtol=0, atol=1e-9):
            raise ValidationError("posteriors must be rows of probability vectors")
        self.posteriors = posteriors
        self.n_inputs, self.n_classes = posteriors.shape

    @classmethod
    def random(cls, n_inputs: int, n_classes: int, seed: int = 0,
               concentration: float = 1.0) -> "TabularDistribution":
        rng = np.random.default_rng(seed)
        return cls(rng.dirichlet(np.full(n_classes, concentration), size=n_inputs))

    def posterior(self, ids) -> np.ndarray:
        return self.posteriors[np.asarray(ids, dtype=np.int64)]

    def sample(self, size: int, rng: np.random.Generator | None = None):
        rng = np.random.default_rng(0) if rng is None else rng
        ids = rng.integers(0, self.n_inputs, size=size)
        cdf = np.cumsum(self.posteriors[ids], axis=1)
        y = (rng.random(size)[:, None] > cdf).sum(axis=1)
        return ids, np.minimum(y, self.n_classes - 1)


# --- experts -----------------------------------------------------------------

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = (x + np.uint64(0x9E3779B97F4A7C15)) & _MASK64
    x = ((x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _MASK64
    x = ((x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _MASK64
    return x ^ (x >> np.uint64(31))


def _keyed_uniforms(seed: int, expert: int, sample_ids, stream: int) -> np.ndarray:
    """Uniform [0, 1) draws that depend only on (seed, expert, sample id, stream)."""
    ids = np.asarray(sample_ids, dtype=np.int64).astype(np.uint64)
    with np.errstate(over="ignore"):
        key = _splitmix64(np.uint64(seed & 0xFFFFFFFF) * np.uint64(1_000_003) + np.uint64(expert))
        key = _splitmix64(key ^ np.uint64(stream))
        bits = _splitmix64(ids ^ key)
    return (bits >> np.uint64(11)).astype(np.float64) * (1.0 / 2.0 ** 53)


@dataclass(frozen=True)
class ExpertProfile:
    assigned: frozenset
    p: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValidationError(f"expert accuracy p={self.p} outside [0, 1]")
        object.__setattr__(self, "assigned", frozenset(int(c) for c in self.assigned))


class ExpertPool:
    """Experts that answer correctly with probability ``p`` on their assigned classes.

    Off their assigned classes they guess uniformly over all labels. A wrong answer
    on an assigned class is uniform over the other ``n - 1`` labels. Answers are a
    deterministic function of ``(seed, expert, sample id, true label)``.
    """

    def __init__(self, experts: Sequence[ExpertProfile], n_classes: int, seed: int = 0):
        self.experts = tuple(experts)
        self.n_classes = n_classes
        self.seed = int(seed)
        for e in self.experts:
            if not e.assigned <= set(range(n_classes)):
                raise ValidationError(f"assigned classes {sorted(e.assigned)} outside 0..{n_classes - 1}")

    @classmethod
    def overlapping(cls, n_classes: int = 10, n_experts: int = 6, classes_per_expert: int = 5,
                    p: float = 0.94, seed: int = 0) -> "ExpertPool":
        """Contiguous (cyclic) blocks of classes with evenly spread starting points."""
        experts = []
        for j in range(n_experts):
            start = int(round(j * n_classes / n_experts))
            assigned = {(start + i) % n_classes for i in range(classes_per_expert)}
            experts.append(ExpertProfile(frozenset(assigned), p))
        return cls(experts, n_classes, seed)

    @property
    def n_experts(self) -> int:
        return len(self.experts)

    def _assigned_mask(self, j: int) -> np.ndarray:
        mask = np.zeros(self.n_classes, dtype=bool)
        mask[list(self.experts[j].assigned)] = True
        return mask

    def predict(self, j: int, sample_ids, y_true) -> np.ndarray:
        """Expert ``j`` (0-based) answers for a batch of samples."""
        if not 0 <= j < self.n_experts:
            raise IndexError(f"expert index {j} out of range for {self.n_experts} experts")
        y_true = np.asarray(y_true, dtype=np.int64)
        n = self.n_classes
        u_correct = _keyed_uniforms(self.seed, j, sample_ids, 0)
        u_label = _keyed_uniforms(self.seed, j, sample_ids, 1)
        assigned = self._assigned_mask(j)[y_true]
        uniform_guess = np.minimum((u_label * n).astype(np.int64), n - 1)
        offset = np.minimum((u_label * (n - 1)).astype(np.int64), n - 2) + 1
        wrong_guess = (y_true + offset) % n
        in_comp = np.where(u_correct < self.experts[j].p, y_true, wrong_guess)
        return np.where(assigned, in_comp, uniform_guess)

    def predict_all(self, sample_ids, y_true) -> np.ndarray:
        cols = [self.predict(j, sample_ids, y_true) for j in range(self.n_experts)]
        return np.stack(cols, axis=-1) if cols else np.zeros((len(y_true), 0), dtype=np.int64)

    def error_probability(self, j: int, posterior) -> np.ndarray:
        """``P(m_j(x) != Y | x)`` for each row of ``posterior``."""
        posterior = np.asarray(posterior, dtype=np.float64)
        per_class = np.where(self._assigned_mask(j), 1.0 - self.experts[j].p,
                             1.0 - 1.0 / self.n_classes)
        return posterior @ per_class

    def error_probabilities(self, posterior) -> np.ndarray:
        posterior = np.atleast_2d(np.asarray(posterior, dtype=np.float64))
        return np.stack([self.error_probability(j, posterior) for j in range(self.n_experts)],
                        axis=-1) if self.n_experts else np.zeros((posterior.shape[0], 0))

    def marginal_accuracy(self, j: int, class_prior=None) -> float:
        prior = (np.full(self.n_classes, 1.0 / self.n_classes) if class_prior is None
                 else np.asarray(class_prior, dtype=np.float64))
        return float(1.0 - self.error_probability(j, prior[None, :])[0])


def expert_predict(pool: ExpertPool, j: int, sample_ids, y_true) -> np.ndarray:
    return pool.predict(j, sample_ids, y_true)


def expert_error_probability(pool: ExpertPool, j: int, posterior) -> np.ndarray:
    return pool.error_probability(j, posterior)


# --- datasets ------------------------------------------------------------------

@dataclass(eq=False)
class Dataset:
    """Samples with precomputed expert answers. Labels are 0-based in memory."""

    sample_id: np.ndarray
    features: np.ndarray
    y: np.ndarray
    expert_preds: np.ndarray

    def __post_init__(self):
        self.sample_id = np.asarray(self.sample_id, dtype=np.int64)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim == 1:
            self.features = self.features[:, None]
        self.y = np.asarray(self.y, dtype=np.int64)
        self.expert_preds = np.asarray(self.expert_preds, dtype=np.int64)
        n = self.sample_id.shape[0]
        if not (self.features.shape[0] == self.y.shape[0] == self.expert_preds.shape[0] == n):
            raise ValidationError("dataset columns have different lengths")
        if len(np.unique(self.sample_id)) != n:
            raise ValidationError("sample ids must be unique")

    def __len__(self):
        return self.sample_id.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.sample_id[idx], self.features[idx], self.y[idx], self.expert_preds[idx])

    def to_csv(self, path) -> None:
        """Write ``sample_id,x_1..x_d,label,expert_1..expert_J`` with 1-based labels."""
        d = self.features.shape[1]
        J = self.expert_preds.shape[1]
        header = (["sample_id"] + [f"x_{i + 1}" for i in range(d)] + ["label"]
                  + [f"expert_{j + 1}" for j in range(J)])
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for i in range(len(self)):
                writer.writerow([int(self.sample_id[i])]
                                + [repr(float(v)) for v in self.features[i]]
                                + [int(self.y[i]) + 1]
                                + [int(v) + 1 for v in self.expert_preds[i]])

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with Path(path).open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or header[0] != "sample_id" or "label" not in header:
                raise ValidationError(f"{path}: not a dataset CSV")
            li = header.index("label")
            feature_cols = header[1:li]
            expert_cols = header[li + 1:]
            if any(not c.startswith("x_") for c in feature_cols) or any(
                    not c.startswith("expert_") for c in expert_cols):
                raise ValidationError(f"{path}: unexpected columns {header}")
            rows = [r for r in reader if r]
        if not rows:
            raise ValidationError(f"{path}: no samples")
        ids = np.array([int(r[0]) for r in rows])
        X = np.array([[float(v) for v in r[1:li]] for r in rows]).reshape(len(rows), len(feature_cols))
        y = np.array([int(r[li]) - 1 for r in rows])
        E = np.array([[int(v) - 1 for v in r[li + 1:]] for r in rows],
                     dtype=np.int64).reshape(len(rows), len(expert_cols))
        return cls(ids, X, y, E)


def generate_dataset(dist: GaussianMixture, pool: ExpertPool, size: int,
                     rng: np.random.Generator, id_offset: int = 0) -> Dataset:
    X, y = dist.sample(size, rng)
    ids = np.arange(id_offset, id_offset + size)
    return Dataset(ids, X, y, pool.predict_all(ids, y))
