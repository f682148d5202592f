"""Two-domain synthetic benchmark with controllable class imbalance and domain shift.

Each class has a mean direction on the unit sphere of domain A. Domain B
uses the same class means after a fixed random rotation plus a per-class
offset. Samples are ``mean + noise`` projected back onto the sphere.
Labels are returned for evaluation only.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .exceptions import RejectionExhaustedError
from .tensor import l2_normalize_rows, make_rng


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the generator.

    ``noise`` is the expected Euclidean norm of the per-sample perturbation
    before renormalization; ``rotation`` is the angle (radians) of the
    largest plane rotation between domains; ``offset`` is the expected norm
    of each class's extra shift in domain B. ``class_similarity`` is the
    expected cosine between two class means (a shared direction mixed into
    every mean). ``class_counts`` overrides the Zipf profile when given.
    """

    classes: int = 5
    dim: int = 32
    n_per_domain: int = 3100
    zipf: float = 1.0
    noise: float = 0.8
    rotation: float = 2.5
    offset: float = 1.5
    class_similarity: float = 0.5
    min_angle_deg: float = 30.0
    seed: int = 7
    class_counts: tuple = None

    def counts(self):
        if self.class_counts is not None:
            counts = np.asarray(self.class_counts, dtype=np.int64)
            if len(counts) != self.classes or counts.min() < 1:
                raise ValueError("class_counts must give >= 1 sample for every class")
            return counts
        return zipf_counts(self.n_per_domain, self.classes, self.zipf)


def zipf_counts(n, k, exponent):
    """Split ``n`` samples over ``k`` classes proportional to ``rank**-exponent``.

    Rounds with the largest-remainder method; every class gets at least one
    sample.
    """
    if n < k:
        raise ValueError(f"cannot give {k} classes at least one of {n} samples")
    weights = np.arange(1, k + 1, dtype=np.float64) ** -float(exponent)
    quota = n * weights / weights.sum()
    counts = np.floor(quota).astype(np.int64)
    remainder = quota - counts
    # stable sort keeps lower ranks first among equal remainders
    for j in np.argsort(-remainder, kind="stable")[: n - counts.sum()]:
        counts[j] += 1
    while counts.min() < 1:
        counts[np.argmax(counts)] -= 1
        counts[np.argmin(counts)] += 1
    return counts


def _class_means(k, d, min_angle_deg, rng, similarity=0.0, max_tries=100_000):
    if not 0.0 <= similarity < 1.0:
        raise ValueError("class_similarity must lie in [0, 1)")
    cos_max = np.cos(np.deg2rad(min_angle_deg))
    shared = rng.normal(size=d)
    shared /= np.linalg.norm(shared)
    means = []
    tries = 0
    while len(means) < k:
        tries += 1
        if tries > max_tries:
            raise RejectionExhaustedError(
                f"placed only {len(means)} of {k} means with {min_angle_deg} deg separation")
        v = rng.normal(size=d)
        v = np.sqrt(similarity) * shared + np.sqrt(1.0 - similarity) * v / np.linalg.norm(v)
        v /= np.linalg.norm(v)
        if all(v @ m <= cos_max for m in means):
            means.append(v)
    return np.array(means)


def random_rotation(d, angle, rng):
    """Orthogonal ``expm(angle * A)`` for a random skew-symmetric ``A`` of unit spectral norm."""
    g = rng.normal(size=(d, d))
    skew = (g - g.T) / 2.0
    skew /= np.linalg.norm(skew, 2)
    return expm(angle * skew)


def _geometry(spec, rng):
    means_a = _class_means(spec.classes, spec.dim, spec.min_angle_deg, rng,
                           spec.class_similarity)
    rot = random_rotation(spec.dim, spec.rotation, rng)
    offsets = rng.normal(size=(spec.classes, spec.dim)) * spec.offset / np.sqrt(spec.dim)
    return means_a, l2_normalize_rows(means_a @ rot.T + offsets), rot


def class_means(spec):
    """Domain-A means, domain-B means and the rotation used for ``spec``."""
    return _geometry(spec, make_rng(spec.seed))


def generate_synthetic_domains(spec=None):
    """Return ``((x_a, labels_a), (x_b, labels_b))`` with unit-norm feature rows."""
    spec = spec or SyntheticSpec()
    rng = make_rng(spec.seed)
    means_a, means_b, _ = _geometry(spec, rng)
    counts = spec.counts()
    k, d = spec.classes, spec.dim

    def sample(means):
        labels = np.repeat(np.arange(k), counts)
        x = means[labels] + rng.normal(size=(len(labels), d)) * spec.noise / np.sqrt(d)
        order = rng.permutation(len(labels))
        return l2_normalize_rows(x[order]), labels[order]

    return sample(means_a), sample(means_b)
