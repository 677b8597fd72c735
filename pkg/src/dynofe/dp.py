"""Analytic Gaussian calibration, integer noise, budget ledger and schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
from scipy.special import log_ndtr, ndtr

from .errors import BudgetRefused, LedgerError, NoiseOverflowError
from .ring import Modulus


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float
    delta: float

    def __post_init__(self):
        if not self.epsilon >= 0 or math.isnan(self.epsilon):
            raise ValueError(f"epsilon must be non-negative, got {self.epsilon}")
        if not 0 <= self.delta < 1:
            raise ValueError(f"delta must lie in [0, 1), got {self.delta}")


# --- analytic Gaussian mechanism -------------------------------------------


def gm_delta(u: float, epsilon: float) -> float:
    """Left-hand side of the analytic Gaussian condition at u = sensitivity / sigma.

    The second term is formed in log space so that exp(epsilon) never
    overflows and never multiplies an underflowed CDF.
    """
    a = u / 2 - epsilon / u
    b = -u / 2 - epsilon / u
    return float(ndtr(a) - math.exp(epsilon + log_ndtr(b)))


# Float evaluation of gm_delta is off by ~1e-12 relative at worst; calibrating
# against a slightly smaller delta keeps the exact condition satisfied.
CALIBRATION_MARGIN = 1e-9


def gm_holds(sigma: float, sensitivity: float, p: PrivacyParams) -> bool:
    return gm_delta(sensitivity / sigma, p.epsilon) <= p.delta


def gm_calibrate(p: PrivacyParams, sensitivity: float) -> float:
    """Smallest sigma for which Gaussian noise gives (epsilon, delta)-DP.

    gm_delta is increasing in u, so bisect for the largest admissible u and
    return ``sensitivity / u`` from the admissible side of the bracket.
    """
    if not sensitivity > 0:
        raise ValueError(f"sensitivity must be positive, got {sensitivity}")
    if not p.delta > 0:
        raise ValueError("calibration needs delta > 0")
    target = p.delta * (1 - CALIBRATION_MARGIN)
    lo = 1e-9
    if gm_delta(lo, p.epsilon) > target:
        return sensitivity / lo
    hi = 1.0
    while gm_delta(hi, p.epsilon) <= target:
        lo, hi = hi, hi * 2
    for _ in range(400):
        mid = (lo + hi) / 2
        if mid <= lo or mid >= hi:
            break
        if gm_delta(mid, p.epsilon) <= target:
            lo = mid
        else:
            hi = mid
    return sensitivity / lo


def classical_sigma(p: PrivacyParams, sensitivity: float) -> float:
    """The textbook Gaussian-mechanism scale, valid for epsilon < 1."""
    return sensitivity * math.sqrt(2 * math.log(1.25 / p.delta)) / p.epsilon


# --- noise -------------------------------------------------------------------


def _round_half_away(v: float) -> int:
    n = math.floor(abs(v) + 0.5)
    return -n if v < 0 else n


def sample_noise(sigma: float, out_scale: int, modulus: Modulus,
                 rng: np.random.Generator) -> int:
    """Draw round(g * out_scale) with g ~ N(0, sigma^2), lifted into Z_q."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return 0
    k = _round_half_away(rng.normal(0.0, sigma) * out_scale)
    if 2 * abs(k) >= modulus.q:
        raise NoiseOverflowError(f"noise {k} does not fit q = 2^{modulus.bits}")
    return k & modulus.mask


@dataclass(frozen=True)
class PointMass:
    """Deterministic noise, used for tests and noiseless runs."""

    value: int = 0

    def sample(self, modulus: Modulus, rng=None) -> int:
        return modulus.from_signed(self.value)


@dataclass(frozen=True)
class RoundedGaussian:
    sigma: float
    out_scale: int

    def __post_init__(self):
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise ValueError("sigma must be finite and non-negative")
        if self.out_scale <= 0:
            raise ValueError("out_scale must be positive")

    def sample(self, modulus: Modulus, rng: np.random.Generator) -> int:
        return sample_noise(self.sigma, self.out_scale, modulus, rng)


NoiseSpec = PointMass | RoundedGaussian


# --- budget ledger -----------------------------------------------------------


class BudgetLedger:
    """Per-client remaining (epsilon, delta) under sequential composition.

    Balances are kept as exact fractions of the float charges, so the
    remaining budget plus everything charged equals the initial budget
    exactly. A charge is all-or-nothing across the listed clients.
    Mutation is single-writer.
    """

    def __init__(self):
        self._initial: dict[int, tuple[Fraction, Fraction]] = {}
        self._remaining: dict[int, tuple[Fraction, Fraction]] = {}

    def register(self, client: int, budget: PrivacyParams):
        if client in self._remaining:
            raise ValueError(f"client {client} already has a budget")
        pair = (Fraction(budget.epsilon), Fraction(budget.delta))
        self._initial[client] = pair
        self._remaining[client] = pair

    def __contains__(self, client) -> bool:
        return client in self._remaining

    def __len__(self) -> int:
        return len(self._remaining)

    def clients(self) -> list[int]:
        return sorted(self._remaining)

    def _get(self, client: int) -> tuple[Fraction, Fraction]:
        try:
            return self._remaining[client]
        except KeyError:
            raise LedgerError(f"client {client} is not in the ledger") from None

    def remaining(self, client: int) -> PrivacyParams:
        eps, delta = self._get(client)
        return PrivacyParams(float(eps), float(delta))

    def remaining_exact(self, client: int) -> tuple[Fraction, Fraction]:
        return self._get(client)

    def spent_exact(self, client: int) -> tuple[Fraction, Fraction]:
        eps, delta = self._get(client)
        eps0, delta0 = self._initial[client]
        return eps0 - eps, delta0 - delta

    def charge(self, clients: Iterable[int], p: PrivacyParams):
        """Subtract ``p`` from every client, or from none.

        Raises BudgetRefused naming each client that cannot afford ``p``.
        """
        clients = sorted(set(clients))
        balances = [self._get(c) for c in clients]
        eps, delta = Fraction(p.epsilon), Fraction(p.delta)
        depleted = [c for c, (e, d) in zip(clients, balances) if e < eps or d < delta]
        if depleted:
            raise BudgetRefused(depleted)
        for c, (e, d) in zip(clients, balances):
            self._remaining[c] = (e - eps, d - delta)

    def dump(self, path: str | Path):
        """Write ``client epsilon_remaining delta_remaining`` lines."""
        lines = []
        for c in self.clients():
            eps, delta = self._remaining[c]
            lines.append(f"{c} {float(eps):.17g} {float(delta):.17g}\n")
        Path(path).write_text("".join(lines))

    @classmethod
    def load(cls, path: str | Path) -> "BudgetLedger":
        ledger = cls()
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            if not line.strip():
                continue
            try:
                client, eps, delta = line.split()
                ledger.register(int(client), PrivacyParams(float(eps), float(delta)))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
        return ledger


# --- per-iteration schedule --------------------------------------------------


@dataclass(frozen=True)
class Schedule:
    steps: tuple[PrivacyParams, ...]

    def __len__(self) -> int:
        return len(self.steps)

    def __getitem__(self, t: int) -> PrivacyParams:
        return self.steps[t]

    def __iter__(self) -> Iterator[PrivacyParams]:
        return iter(self.steps)

    @property
    def total(self) -> tuple[Fraction, Fraction]:
        return (sum((Fraction(s.epsilon) for s in self.steps), Fraction(0)),
                sum((Fraction(s.delta) for s in self.steps), Fraction(0)))


def _fit_cap(values: list[float], cap: float) -> list[float]:
    # Float rounding can push the exact sum a few ulps past the cap. Stepping
    # every share one ulp down keeps the order and converges in a few rounds.
    while sum(map(Fraction, values), Fraction(0)) > Fraction(cap):
        values = [math.nextafter(v, 0.0) for v in values]
    return values


def allocate_schedule(p_max: PrivacyParams, iterations: int, ratio: float = 1.05) -> Schedule:
    """Split the total budget geometrically, spending least in early iterations.

    epsilon_t = epsilon_max * ratio**t / sum_k ratio**k and delta_t = delta_max / T.
    The exact sum never exceeds the total.
    """
    if iterations < 1:
        raise ValueError("the schedule needs at least one iteration")
    if ratio < 1:
        raise ValueError("ratio must be at least 1")
    weights = [ratio ** t for t in range(iterations)]
    total = math.fsum(weights)
    eps = _fit_cap([p_max.epsilon * w / total for w in weights], p_max.epsilon)
    deltas = _fit_cap([p_max.delta / iterations] * iterations, p_max.delta)
    return Schedule(tuple(PrivacyParams(e, d) for e, d in zip(eps, deltas)))
