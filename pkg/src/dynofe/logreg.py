"""Logistic regression gradient steps written as inner products.

With the cubic sigmoid surrogate g, one coordinate of the gradient step,
(alpha/n) * (y - g(z)) * x[j] with z = <theta, x>, is a polynomial of degree
four in the record. Clients publish every feature monomial of degree at most
four plus the label terms y*x[0..m]; the analyst turns theta into one
coefficient vector per coordinate.

Datasets are float arrays of shape (n, m + 2): column 0 is the constant 1,
columns 1..m hold features in [0, 1] and the last column is the 0/1 label.
"""

from __future__ import annotations

import csv
import logging
import math
from fractions import Fraction
from functools import lru_cache
from itertools import combinations_with_replacement
from math import comb, factorial
from pathlib import Path

import numpy as np
from scipy.special import expit

from .dp import PrivacyParams, gm_calibrate

log = logging.getLogger(__name__)

A1 = 0.81562 / 8**3
A2 = 1.20096 / 8
COEFFICIENT_LIMIT = 5.0


def sigmoid_approx(z):
    """Least-squares cubic fit of the sigmoid on [-8, 8]."""
    return -A1 * z**3 + A2 * z + 0.5


def expansion_size(m: int) -> int:
    """Length of an expanded record for m features."""
    if m < 1:
        raise ValueError("m must be positive")
    value = (Fraction(m**4, 24) + Fraction(5 * m**3, 12) + Fraction(35 * m**2, 24)
             + Fraction(37 * m, 12) + 2)
    assert value.denominator == 1 and value == comb(m + 4, 4) + m + 1
    return int(value)


@lru_cache(maxsize=None)
def feature_monomials(m: int) -> tuple[tuple[int, ...], ...]:
    """Canonical order of feature monomials: by degree, then lexicographic."""
    out = []
    for degree in range(5):
        out.extend(combinations_with_replacement(range(1, m + 1), degree))
    return tuple(out)


@lru_cache(maxsize=None)
def _monomial_index(m: int) -> dict[tuple[int, ...], int]:
    return {mono: k for k, mono in enumerate(feature_monomials(m))}


@lru_cache(maxsize=None)
def _gather_index(m: int) -> np.ndarray:
    # Pad each monomial to four column indices; column 0 is the constant 1.
    idx = np.zeros((len(feature_monomials(m)), 4), dtype=np.intp)
    for k, mono in enumerate(feature_monomials(m)):
        idx[k, 4 - len(mono):] = mono
    return idx


def expand_dataset(data: np.ndarray) -> np.ndarray:
    """Expand every record; returns shape (n, expansion_size(m))."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    m = data.shape[1] - 2
    features = data[:, _gather_index(m)].prod(axis=-1)
    label_terms = data[:, [m + 1]] * data[:, :m + 1]
    return np.hstack([features, label_terms])


def monomial_expand(record, m: int) -> np.ndarray:
    record = np.asarray(record, dtype=float)
    if record.shape != (m + 2,):
        raise ValueError(f"record must have length {m + 2}")
    return expand_dataset(record[None, :])[0]


@lru_cache(maxsize=None)
def _update_structure(m: int):
    index = _monomial_index(m)
    n_features = len(index)

    def slot(*ks):
        return index[tuple(sorted(k for k in ks if k))]

    triples = list(combinations_with_replacement(range(m + 1), 3))
    counts = np.array([6 // math.prod(factorial(t.count(k)) for k in set(t)) for t in triples],
                      dtype=float)
    cubic = np.array([[slot(*t, j) for t in triples] for j in range(m + 1)], dtype=np.intp)
    linear = np.array([[slot(k, j) for k in range(m + 1)] for j in range(m + 1)], dtype=np.intp)
    single = np.array([slot(j) for j in range(m + 1)], dtype=np.intp)
    return n_features, np.array(triples, dtype=np.intp), counts, cubic, linear, single


def update_coefficient_matrix(theta, n: int, alpha: float) -> np.ndarray:
    """Row j satisfies <row_j, expand(x)> = (alpha/n) * (y - g(z)) * x[j].

    Expanding (y - g(z)) x[j] = y x[j] - x[j]/2 - a2 z x[j] + a1 z^3 x[j]
    with z = sum_k theta[k] x[k] and x[0] = 1 gives a multinomial sum over
    index triples for the cubic term.
    """
    theta = np.asarray(theta, dtype=float)
    m = len(theta) - 1
    n_features, triples, counts, cubic, linear, single = _update_structure(m)
    rows = np.zeros((m + 1, n_features + m + 1))
    cubic_weights = A1 * counts * theta[triples].prod(axis=1)
    for j in range(m + 1):
        row = rows[j]
        np.add.at(row, cubic[j], cubic_weights)
        np.add.at(row, linear[j], -A2 * theta)
        row[single[j]] -= 0.5
        row[n_features + j] += 1.0
    return rows * (alpha / n)


def update_coefficients(theta, j: int, n: int, alpha: float) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if not 0 <= j < len(theta):
        raise IndexError(f"coordinate {j} outside [0, {len(theta) - 1}]")
    return update_coefficient_matrix(theta, n, alpha)[j]


def check_coefficient_range(coeffs: np.ndarray) -> bool:
    """Log, but tolerate, coefficients outside the expected [-5, 5] band."""
    worst = float(np.max(np.abs(coeffs))) if np.size(coeffs) else 0.0
    if worst > COEFFICIENT_LIMIT:
        log.warning("function coefficient magnitude %.3g exceeds %.0f", worst, COEFFICIENT_LIMIT)
        return False
    return True


def sensitivity_bound(theta, alpha: float, n: int, m: int) -> float:
    """l2-sensitivity bound of one full update for records in [0, 1]^(m+2)."""
    if n < 1:
        raise ValueError("n must be positive")
    big_theta = float(np.sum(np.abs(theta)))
    return math.sqrt(m + 1) * (alpha / n) * (1 + abs(A1 * big_theta**3 - A2 * big_theta))


def gradient_step(theta, data: np.ndarray, alpha: float) -> np.ndarray:
    """The update (alpha/n) * sum_i (y_i - g(z_i)) x_i in plain floats."""
    data = np.asarray(data, dtype=float)
    n = len(data)
    if n == 0:
        raise ValueError("empty dataset")
    x = data[:, :-1]
    residual = data[:, -1] - sigmoid_approx(x @ np.asarray(theta, dtype=float))
    return (alpha / n) * (residual @ x)


def reference_gd_step(theta, data: np.ndarray, alpha: float) -> np.ndarray:
    """One plaintext gradient step with the cubic sigmoid."""
    return np.asarray(theta, dtype=float) + gradient_step(theta, data, alpha)


def reference_training(theta0, data: np.ndarray, alpha: float, iterations: int) -> np.ndarray:
    theta = np.asarray(theta0, dtype=float)
    for _ in range(iterations):
        theta = reference_gd_step(theta, data, alpha)
    return theta


def predict_accuracy(theta, data: np.ndarray) -> float:
    """Fraction of records where round(sigmoid(z)) equals the label; round(0.5) = 1."""
    data = np.asarray(data, dtype=float)
    if len(data) == 0:
        raise ValueError("empty dataset")
    prob = expit(data[:, :-1] @ np.asarray(theta, dtype=float))
    return float(np.mean((prob >= 0.5) == (data[:, -1] == 1)))


def ldp_perturb(data: np.ndarray, p: PrivacyParams, rng: np.random.Generator) -> np.ndarray:
    """Local-DP baseline: Gaussian noise on features, randomized response on labels."""
    data = np.array(data, dtype=float)
    m = data.shape[1] - 2
    sigma = gm_calibrate(p, math.sqrt(m))
    data[:, 1:m + 1] = np.clip(data[:, 1:m + 1] + rng.normal(0.0, sigma, (len(data), m)), 0, 1)
    flip = rng.random(len(data)) < flip_probability(p.epsilon)
    data[flip, -1] = 1 - data[flip, -1]
    return data


def flip_probability(epsilon: float) -> float:
    return float(expit(-epsilon))


# --- datasets --------------------------------------------------------------------


def load_csv(path: str | Path) -> np.ndarray:
    """Read a header + rows CSV whose last column is a 0/1 label.

    Features are clamped to [0, 1]; the constant column is prepended here.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValueError(f"{path}: need a header and at least one record")
    body = np.array([[float(v) for v in row] for row in rows[1:] if row], dtype=float)
    if body.ndim != 2 or body.shape[1] < 2:
        raise ValueError(f"{path}: need at least one feature and a label column")
    labels = body[:, -1]
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError(f"{path}: labels must be 0 or 1")
    features = np.clip(body[:, :-1], 0.0, 1.0)
    return np.hstack([np.ones((len(body), 1)), features, labels[:, None]])


def save_csv(data: np.ndarray, path: str | Path):
    m = data.shape[1] - 2
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{k}" for k in range(1, m + 1)] + ["y"])
        for row in data:
            writer.writerow([repr(float(v)) for v in row[1:m + 1]] + [int(row[-1])])


def synthetic_dataset(n: int, m: int, seed: int = 0, separation: float = 5.0) -> np.ndarray:
    """Records shaped like small clinical studies.

    The first m // 2 features are 0/1 indicators with random prevalence, the
    rest are Beta(2, 2) values; labels come from a planted logistic model
    whose weight vector has norm ``separation``.
    """
    rng = np.random.default_rng(seed)
    n_binary = m // 2
    features = np.empty((n, m))
    prevalence = rng.uniform(0.2, 0.8, n_binary)
    features[:, :n_binary] = (rng.random((n, n_binary)) < prevalence).astype(float)
    features[:, n_binary:] = rng.beta(2.0, 2.0, (n, m - n_binary))
    weights = rng.normal(0.0, 1.0, m)
    weights *= separation / np.linalg.norm(weights)
    z = (features - features.mean(axis=0)) @ weights
    labels = (rng.random(n) < expit(z)).astype(float)
    return np.hstack([np.ones((n, 1)), features, labels[:, None]])
