"""Synthetic Gaussian-mixture tasks with an exact posterior, CSV ingestion,
and deterministic stratified splitting.

The mixture generator is the stand-in for real image benchmarks: class-
conditional isotropic Gaussians with optional uniform label noise, so the
Bayes-optimal classifier is known in closed form and every selective
method can be judged against it.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ParseError
from .util import rng_for, sha256_hex


@dataclass
class MixtureSpec:
    """Generative model: x | y=c ~ N(mean_c, var_c I), then with
    probability ``label_noise`` the label is resampled uniformly over the
    other classes."""

    n_classes: int
    dim: int
    means: np.ndarray          # (C, d)
    variances: np.ndarray      # (C,)
    priors: np.ndarray         # (C,)
    label_noise: float = 0.0
    n_train: int = 1000
    n_val: int = 200
    n_test: int = 500
    seed: int = 0

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        self.variances = np.asarray(self.variances, dtype=np.float64)
        self.priors = np.asarray(self.priors, dtype=np.float64)

    def validate(self) -> None:
        C, d = self.n_classes, self.dim
        if C < 2 or d < 1:
            raise ConfigurationError("need n_classes >= 2 and dim >= 1")
        if self.means.shape != (C, d) or not np.all(np.isfinite(self.means)):
            raise ConfigurationError(f"means must be finite with shape ({C}, {d})")
        if self.variances.shape != (C,) or np.any(self.variances <= 0):
            raise ConfigurationError("variances must be positive, one per class")
        if self.priors.shape != (C,) or np.any(self.priors < 0) or \
                abs(self.priors.sum() - 1.0) > 1e-9:
            raise ConfigurationError("priors must be non-negative and sum to 1")
        if not 0 <= self.label_noise < 0.5:
            raise ConfigurationError("label_noise must lie in [0, 0.5)")
        if min(self.n_train, self.n_val, self.n_test) < 1:
            raise ConfigurationError("every split needs at least one sample")

    def to_dict(self) -> dict:
        return {
            "n_classes": self.n_classes, "dim": self.dim,
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
            "priors": self.priors.tolist(),
            "label_noise": self.label_noise,
            "n_train": self.n_train, "n_val": self.n_val,
            "n_test": self.n_test, "seed": self.seed,
        }


def circle_mixture(n_classes: int, radius: float, sigma: float = 1.0,
                   label_noise: float = 0.0, n_train: int = 1000,
                   n_val: int = 200, n_test: int = 500, seed: int = 0) -> MixtureSpec:
    """Equal-prior classes with means spaced evenly on a 2-d circle."""
    angles = 2 * np.pi * np.arange(n_classes) / n_classes
    means = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return MixtureSpec(
        n_classes=n_classes, dim=2, means=means,
        variances=np.full(n_classes, sigma ** 2),
        priors=np.full(n_classes, 1.0 / n_classes),
        label_noise=label_noise, n_train=n_train, n_val=n_val,
        n_test=n_test, seed=seed)


def blobs8(seed: int = 0) -> MixtureSpec:
    """The shipped benchmark: 8 overlapping classes on a circle of radius
    2.2 with unit variance and 10% label noise, 8000/2000/4000 samples."""
    return circle_mixture(n_classes=8, radius=2.2, sigma=1.0, label_noise=0.1,
                          n_train=8000, n_val=2000, n_test=4000, seed=seed)


def dataset_fingerprint(features: np.ndarray, labels: np.ndarray) -> str:
    h = sha256_hex(
        np.asarray(features.shape, dtype=np.int64).tobytes()
        + np.ascontiguousarray(features, dtype=np.float64).tobytes()
        + np.ascontiguousarray(labels, dtype=np.int64).tobytes())
    return h[:16]


@dataclass
class Dataset:
    features: np.ndarray       # (n, d) float64
    labels: np.ndarray         # (n,) int64
    tag: str = ""
    fingerprint: str = field(default="")

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.ndim != 1 or \
                self.features.shape[0] != self.labels.shape[0]:
            raise ConfigurationError("features (n, d) and labels (n,) must align")
        if not self.fingerprint:
            self.fingerprint = dataset_fingerprint(self.features, self.labels)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def _sample_split(spec: MixtureSpec, n: int, tag: str) -> Dataset:
    rng = rng_for(spec.seed, f"mixture:{tag}")
    labels = rng.choice(spec.n_classes, size=n, p=spec.priors)
    x = spec.means[labels] + rng.standard_normal((n, spec.dim)) * \
        np.sqrt(spec.variances[labels])[:, None]
    if spec.label_noise > 0:
        flip = rng.random(n) < spec.label_noise
        # uniform over the other C-1 classes
        other = rng.integers(0, spec.n_classes - 1, size=int(flip.sum()))
        other = other + (other >= labels[flip])
        labels = labels.copy()
        labels[flip] = other
    return Dataset(features=x, labels=labels, tag=tag)


def generate_mixture(spec: MixtureSpec):
    """Draw the (train, val, test) splits, fully determined by spec.seed."""
    spec.validate()
    return (_sample_split(spec, spec.n_train, "train"),
            _sample_split(spec, spec.n_val, "val"),
            _sample_split(spec, spec.n_test, "test"))


def bayes_posterior(spec: MixtureSpec, x) -> np.ndarray:
    """Exact class posterior under the generative model, noise included.

    The clean Gaussian posterior q is mixed analytically with the label
    noise: p(y=c | x) = (1 - eta) q_c + eta (1 - q_c) / (C - 1).
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[1] != spec.dim:
        raise ConfigurationError(f"points must have dim {spec.dim}")
    d = spec.dim
    diff = x[:, None, :] - spec.means[None, :, :]          # (m, C, d)
    sq = (diff ** 2).sum(axis=2)                           # (m, C)
    log_lik = -0.5 * sq / spec.variances[None, :] \
        - 0.5 * d * np.log(2 * np.pi * spec.variances)[None, :]
    log_post = np.log(spec.priors)[None, :] + log_lik
    log_post -= log_post.max(axis=1, keepdims=True)
    q = np.exp(log_post)
    q /= q.sum(axis=1, keepdims=True)
    eta = spec.label_noise
    if eta > 0:
        q = (1 - eta) * q + eta * (1 - q) / (spec.n_classes - 1)
    return q[0] if squeeze else q


def save_csv_dataset(path, ds: Dataset) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([f"f{i}" for i in range(ds.dim)] + ["label"])
        for row, label in zip(ds.features, ds.labels):
            w.writerow([repr(float(v)) for v in row] + [int(label)])


def load_csv_dataset(path, n_classes: int | None = None,
                     standardize: bool = False, tag: str = "") -> Dataset:
    """Parse ``f0,...,f{d-1},label`` rows; errors carry the line number."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        d = len(header) - 1
        if d < 1 or header[-1] != "label" or \
                header[:-1] != [f"f{i}" for i in range(d)]:
            raise ParseError(
                f"{path}:1: header must be f0,...,f{{d-1}},label")
        feats, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != d + 1:
                raise ParseError(
                    f"{path}:{lineno}: expected {d + 1} cells, got {len(row)}")
            try:
                feats.append([float(v) for v in row[:-1]])
            except ValueError:
                raise ParseError(
                    f"{path}:{lineno}: non-numeric feature cell") from None
            try:
                label = int(row[-1])
            except ValueError:
                raise ParseError(
                    f"{path}:{lineno}: non-integer label") from None
            if label < 0 or (n_classes is not None and label >= n_classes):
                raise ParseError(
                    f"{path}:{lineno}: label {label} outside [0, "
                    f"{n_classes if n_classes is not None else '...'})")
            labels.append(label)
    if not labels:
        raise ParseError(f"{path}: no data rows")
    features = np.asarray(feats, dtype=np.float64)
    if standardize:
        mu = features.mean(axis=0)
        sd = features.std(axis=0)
        sd[sd == 0] = 1.0
        features = (features - mu) / sd
    return Dataset(features=features, labels=np.asarray(labels), tag=tag)


def split_dataset(data: Dataset, fractions, seed: int, tags=None):
    """Stratified, seeded, disjoint splits.

    Per class, split sizes use largest-remainder rounding, so each class
    count deviates from the exact fraction by at most one sample.
    """
    fractions = [float(f) for f in fractions]
    if not fractions or any(f <= 0 for f in fractions) or sum(fractions) > 1 + 1e-9:
        raise ConfigurationError("fractions must be positive and sum to <= 1")
    if tags is None:
        tags = [f"{data.tag}/split{i}" if data.tag else f"split{i}"
                for i in range(len(fractions))]
    if len(tags) != len(fractions):
        raise ConfigurationError("one tag per fraction")

    classes = np.unique(data.labels)
    per_split_indices = [[] for _ in fractions]
    for c in classes:
        idx = np.flatnonzero(data.labels == c)
        if idx.size < len(fractions):
            raise ConfigurationError(
                f"class {c} has {idx.size} samples, fewer than the "
                f"{len(fractions)} requested splits")
        rng = rng_for(seed, f"split:class{c}")
        idx = rng.permutation(idx)
        targets = [idx.size * f for f in fractions]
        base = [int(np.floor(t + 1e-9)) for t in targets]
        total = int(np.floor(sum(targets) + 1e-9))
        remainders = [t - b for t, b in zip(targets, base)]
        extra = total - sum(base)
        for j in np.argsort([-r for r in remainders])[:extra]:
            base[j] += 1
        start = 0
        for j, count in enumerate(base):
            per_split_indices[j].append(idx[start:start + count])
            start += count

    out = []
    for j, tag in enumerate(tags):
        ids = np.sort(np.concatenate(per_split_indices[j]))
        out.append(Dataset(features=data.features[ids],
                           labels=data.labels[ids], tag=tag))
    return out
