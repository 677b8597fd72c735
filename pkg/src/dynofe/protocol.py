"""In-process simulation of the authority, data holders and analyst.

Data gathering: the analyst asks for a study, the authority assigns a fresh
label, holders register on demand, expand and encode their record, and send
one ciphertext per label to the analyst's store.

Training: each iteration the analyst sends m+1 coefficient vectors plus the
budget share it wants to spend. The authority charges every participant
all-or-nothing, calibrates Gaussian noise to the sensitivity bound of the
current model and returns one decryption key per model coordinate. The
analyst decrypts each coordinate and adds it to theta.

The transmitted coefficients describe the unnormalized sum
sum_i (y_i - g(z_i)) x_i[j]; the analyst applies the alpha/n factor after
decryption. Kept at O(1) magnitude, the coefficients lose far less to
fixed-point rounding than pre-scaled ones would. Noise is calibrated to the
sensitivity of the unnormalized sum (n/alpha times the bound for the step),
so after scaling theta receives exactly the calibrated Gaussian.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .dp import (BudgetLedger, NoiseSpec, PointMass, PrivacyParams, RoundedGaussian, Schedule,
                 allocate_schedule, gm_calibrate)
from .dyno import (Ciphertext, DecryptionKey, ciphertext_header_size, dyno_dec, dyno_enc,
                   dyno_ekeygen, dyno_keygen_many, dyno_setup, serialize_key_payload)
from .errors import (BudgetRefused, CapacityError, NoiseOverflowError, RangeError,
                     ResubmissionError)
from .logreg import (check_coefficient_range, expand_dataset, expansion_size,
                     sensitivity_bound, update_coefficient_matrix)
from .prf import KEY_BYTES, PrfKey
from .ring import FixedPointCodec, Modulus, RingVector, encode_vector, round_half_away_array

log = logging.getLogger(__name__)

DEFAULT_SCALE = 10**6
COEFFICIENT_BOUND = 5


@dataclass(frozen=True)
class ProtocolConfig:
    modulus: Modulus = Modulus(64)
    data_scale: int = DEFAULT_SCALE
    coef_scale: int = DEFAULT_SCALE
    m_max: int = 4096
    n_max: int = 2**34

    @property
    def out_scale(self) -> int:
        return self.data_scale * self.coef_scale

    @property
    def coefficient_bits(self) -> int:
        """Bits per transmitted coefficient when |coefficient| <= 5."""
        return math.ceil(math.log2(2 * COEFFICIENT_BOUND * self.coef_scale))

    @property
    def coefficient_bytes(self) -> int:
        return (self.coefficient_bits + 7) // 8


@dataclass
class Study:
    label: bytes
    m: int
    feature_names: tuple[str, ...] = ()
    note: str = ""
    participants: set[int] = field(default_factory=set)

    @property
    def m_tilde(self) -> int:
        return expansion_size(self.m)


# --- messages and transcript -----------------------------------------------------


@dataclass(frozen=True)
class FunctionQuery:
    """Analyst -> authority: coefficient vectors for one iteration plus the budget share."""

    label: bytes
    iteration: int
    theta: tuple[float, ...]
    alpha: float
    n: int
    budget: PrivacyParams
    coefficients: tuple[RingVector, ...]

    def slot_width(self, minimum: int) -> int:
        """``minimum`` bytes per coefficient, widened if a coefficient needs more."""
        values = [abs(v) for vec in self.coefficients for v in vec.to_signed()]
        needed = (max(values, default=0).bit_length() + 1 + 7) // 8
        return max(minimum, needed)

    def payload(self, width: int) -> bytes:
        """Signed little-endian coefficients, ``width`` bytes each."""
        out = bytearray()
        for vec in self.coefficients:
            for v in vec.to_signed():
                out += v.to_bytes(width, "little", signed=True)
        return bytes(out)

    def header(self, width: int) -> bytes:
        m_tilde = len(self.coefficients[0]) if self.coefficients else 0
        return (struct.pack("<IddH", self.iteration, self.budget.epsilon, self.budget.delta,
                            len(self.label)) + self.label
                + struct.pack(f"<dI{len(self.theta)}d", self.alpha, self.n, *self.theta)
                + struct.pack("<IIB", len(self.coefficients), m_tilde, width))


@dataclass(frozen=True)
class KeyResponse:
    """Authority -> analyst. ``sigma`` is the noise scale on the unnormalized sum."""

    label: bytes
    iteration: int
    sigma: float
    sensitivity: float
    keys: tuple[DecryptionKey, ...]


@dataclass(frozen=True)
class Message:
    direction: str
    kind: str
    payload_bytes: int
    header_bytes: int
    iteration: int | None = None
    extra: tuple[tuple[str, str], ...] = ()

    def line(self) -> str:
        it = "-" if self.iteration is None else str(self.iteration)
        parts = [f"iter={it}", f"dir={self.direction}", f"type={self.kind}",
                 f"bytes={self.payload_bytes}", f"header={self.header_bytes}"]
        parts.extend(f"{k}={v}" for k, v in self.extra)
        return " ".join(parts)


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    epsilon: float
    delta: float
    sigma: float
    sensitivity: float
    clients: tuple[int, ...]
    bytes_up: int
    bytes_down: int
    refused: tuple[int, ...] = ()


@dataclass
class Transcript:
    messages: list[Message] = field(default_factory=list)
    iterations: list[IterationRecord] = field(default_factory=list)
    diverged: bool = False

    def add(self, msg: Message):
        self.messages.append(msg)

    def to_text(self) -> str:
        return "".join(msg.line() + "\n" for msg in self.messages)

    def charged(self) -> dict[int, tuple[float, float]]:
        """Replay the accepted iterations into per-client totals (math.fsum)."""
        eps: dict[int, list[float]] = {}
        delta: dict[int, list[float]] = {}
        for rec in self.iterations:
            if rec.refused:
                continue
            for c in rec.clients:
                eps.setdefault(c, []).append(rec.epsilon)
                delta.setdefault(c, []).append(rec.delta)
        return {c: (math.fsum(eps[c]), math.fsum(delta[c])) for c in eps}


# --- parties -------------------------------------------------------------------


@dataclass
class DataHolder:
    index: int
    ek: PrfKey
    submitted: set[bytes] = field(default_factory=set)


class Authority:
    """Holds the master secret, the budget ledger and the study registry."""

    def __init__(self, config: ProtocolConfig, client_budget: PrivacyParams,
                 rng: np.random.Generator | None = None):
        self.config = config
        self.client_budget = client_budget
        self.pp, self.msk = dyno_setup(256, config.m_max, config.n_max, config.modulus)
        self.ledger = BudgetLedger()
        self.studies: dict[bytes, Study] = {}
        self._next_label = 1
        self.rng = rng if rng is not None else np.random.default_rng()
        self.noise_override: NoiseSpec | None = None
        self.transcript = Transcript()

    def register(self, i: int) -> DataHolder:
        ek = dyno_ekeygen(self.msk, i)
        self.ledger.register(i, self.client_budget)
        self.transcript.add(Message("authority->holder", "encryption_key", KEY_BYTES, 0))
        return DataHolder(i, ek)

    def open_study(self, m: int, feature_names=(), note: str = "") -> Study:
        m_tilde = expansion_size(m)
        if m_tilde > self.pp.m_max:
            raise CapacityError(f"{m} features expand to {m_tilde} > m_max = {self.pp.m_max}")
        label = str(self._next_label).encode()
        self._next_label += 1
        study = Study(label, m, tuple(feature_names), note)
        self.studies[label] = study
        return study

    def join(self, i: int, study: Study):
        if i in study.participants:
            raise ResubmissionError(f"holder {i} already joined study {study.label!r}")
        study.participants.add(i)

    def issue_keys(self, study: Study, query: FunctionQuery) -> KeyResponse:
        """Charge the participants, calibrate noise and issue one key per coordinate."""
        clients = sorted(study.participants)
        self.ledger.charge(clients, query.budget)
        sensitivity = sensitivity_bound(query.theta, query.alpha, query.n, study.m)
        sum_sensitivity = sensitivity * query.n / query.alpha
        if self.noise_override is not None:
            sigma = 0.0
            noise: NoiseSpec = self.noise_override
        else:
            sigma = gm_calibrate(query.budget, sum_sensitivity)
            noise = RoundedGaussian(sigma, self.config.out_scale)
        check_correctness_bound(self.config, len(clients), study.m_tilde, sigma)
        keys = dyno_keygen_many(self.msk, clients, list(query.coefficients), study.label,
                                [noise] * len(query.coefficients), self.rng)
        return KeyResponse(study.label, query.iteration, sigma, sensitivity, tuple(keys))


class Analyst:
    def __init__(self, config: ProtocolConfig, theta0):
        self.config = config
        self.theta = np.asarray(theta0, dtype=float).copy()
        self.store: dict[tuple[int, bytes], Ciphertext] = {}
        self.keys: list[DecryptionKey] = []

    def receive(self, ct: Ciphertext):
        key = (ct.slot, ct.label)
        if key in self.store:
            raise ResubmissionError(f"slot {ct.slot} already submitted under {ct.label!r}")
        self.store[key] = ct

    def ciphertexts(self, study: Study) -> list[Ciphertext]:
        return [self.store[(i, study.label)] for i in sorted(study.participants)]

    def function_query(self, study: Study, t: int, budget: PrivacyParams,
                       alpha: float) -> FunctionQuery:
        n = len(study.participants)
        coeffs = update_coefficient_matrix(self.theta, 1, 1.0)
        check_coefficient_range(coeffs)
        encoded = tuple(encode_vector(row, FixedPointCodec(self.config.coef_scale,
                                                           self.config.modulus))
                        for row in coeffs)
        return FunctionQuery(study.label, t, tuple(float(v) for v in self.theta), alpha, n,
                             budget, encoded)

    def apply_keys(self, study: Study, response: KeyResponse, alpha: float) -> np.ndarray:
        cts = self.ciphertexts(study)
        scale = alpha / len(study.participants)
        update = scale * np.array([dyno_dec(dk, cts) / self.config.out_scale
                                   for dk in response.keys])
        self.keys.extend(response.keys)
        self.theta = self.theta + update
        return self.theta


# --- correctness guard ---------------------------------------------------------------


def correctness_margin(config: ProtocolConfig, n: int, m_tilde: int, sigma: float) -> float:
    """Worst-case |decrypted value| divided by q/2; below 1 means no wraparound."""
    worst = (n * m_tilde * config.data_scale * COEFFICIENT_BOUND * config.coef_scale
             + 6 * sigma * config.out_scale)
    return worst / config.modulus.half


def check_correctness_bound(config: ProtocolConfig, n: int, m_tilde: int, sigma: float) -> bool:
    margin = correctness_margin(config, n, m_tilde, sigma)
    if margin >= 1:
        log.warning("decryption may wrap: worst case is %.3g x q/2", margin)
        return False
    return True


# --- protocol steps ------------------------------------------------------------------


def open_study(authority: Authority, m: int, feature_names=(), note: str = "") -> Study:
    return authority.open_study(m, feature_names, note)


def submit_data(authority: Authority, analyst: Analyst, holder: DataHolder | int,
                study: Study, record) -> tuple[DataHolder, Ciphertext]:
    """Expand, encode and encrypt one record under the study label.

    An integer holder index registers a new holder first.
    """
    if isinstance(holder, int):
        holder = authority.register(holder)
    if study.label in holder.submitted or holder.index in study.participants:
        raise ResubmissionError(f"holder {holder.index} already submitted to {study.label!r}")
    record = np.asarray(record, dtype=float)
    if record.shape != (study.m + 2,):
        raise ValueError(f"record must have length {study.m + 2}")
    config = authority.config
    codec = FixedPointCodec(config.data_scale, config.modulus)
    x = encode_vector(expand_dataset(record[None, :])[0], codec)
    ct = dyno_enc(holder.ek, x, study.label, holder.index, authority.pp)
    analyst.receive(ct)
    authority.join(holder.index, study)
    holder.submitted.add(study.label)
    payload = len(ct.c) * config.modulus.nbytes
    authority.transcript.add(Message("holder->analyst", "ciphertext", payload,
                                     ciphertext_header_size(ct)))
    return holder, ct


def submit_dataset(authority: Authority, analyst: Analyst, study: Study, data,
                   first_index: int = 1) -> list[DataHolder]:
    """Register one holder per record and submit it."""
    return [submit_data(authority, analyst, first_index + k, study, row)[0]
            for k, row in enumerate(np.asarray(data, dtype=float))]


def train_iteration(authority: Authority, analyst: Analyst, study: Study, t: int,
                    schedule: Schedule, alpha: float, transcript: Transcript | None = None):
    """Run one key request / decryption round; raises BudgetRefused on overdraw."""
    transcript = transcript if transcript is not None else authority.transcript
    budget = schedule[t]
    query = analyst.function_query(study, t, budget, alpha)
    width = query.slot_width(authority.config.coefficient_bytes)
    up = len(query.payload(width))
    transcript.add(Message("analyst->authority", "function_query", up, len(query.header(width)),
                           t, (("eps", f"{budget.epsilon:.17g}"),
                               ("delta", f"{budget.delta:.17g}"))))
    clients = tuple(sorted(study.participants))
    try:
        response = authority.issue_keys(study, query)
    except BudgetRefused as refusal:
        transcript.add(Message("authority->analyst", "refusal", 4 * len(refusal.depleted), 0, t,
                               (("clients", str(len(refusal.depleted))),)))
        transcript.iterations.append(IterationRecord(t, budget.epsilon, budget.delta, math.nan,
                                                     math.nan, clients, up, 0,
                                                     tuple(refusal.depleted)))
        raise
    except NoiseOverflowError:
        # the budget was charged before sampling failed
        transcript.iterations.append(IterationRecord(t, budget.epsilon, budget.delta, math.inf,
                                                     math.inf, clients, up, 0))
        raise
    modulus = authority.config.modulus
    sigma = response.sigma * alpha / len(clients)
    down = sum(len(serialize_key_payload(dk, modulus)) for dk in response.keys)
    header = sum(2 + len(dk.label) for dk in response.keys)
    transcript.add(Message("authority->analyst", "decryption_keys", down, header, t,
                           (("sigma", f"{sigma:.17g}"),
                            ("clients", str(len(clients))))))
    transcript.iterations.append(IterationRecord(t, budget.epsilon, budget.delta, sigma,
                                                 response.sensitivity, clients, up, down))
    return analyst.apply_keys(study, response, alpha)


def run_training(authority: Authority, analyst: Analyst, study: Study, iterations: int,
                 p_max: PrivacyParams, alpha: float, seed: int | None = None,
                 ratio: float = 1.05, noise_off: bool = False,
                 schedule: Schedule | None = None) -> tuple[np.ndarray, Transcript]:
    """Train for ``iterations`` rounds or until the authority refuses.

    ``seed`` fixes the authority's noise generator, which makes theta and the
    transcript reproducible.
    """
    transcript = Transcript()
    if iterations == 0:
        return analyst.theta.copy(), transcript
    if seed is not None:
        authority.rng = np.random.default_rng(seed)
    authority.noise_override = PointMass(0) if noise_off else None
    if schedule is None:
        schedule = allocate_schedule(p_max, iterations, ratio)
    check_correctness_bound(authority.config, len(study.participants), study.m_tilde, 0.0)
    for t in range(iterations):
        try:
            train_iteration(authority, analyst, study, t, schedule, alpha, transcript)
        except BudgetRefused:
            break
        except (RangeError, NoiseOverflowError):
            # theta grew until the coefficients no longer fit the ring
            log.warning("training diverged at iteration %d", t)
            transcript.diverged = True
            break
    return analyst.theta.copy(), transcript


def fixed_point_training(data, theta0, alpha: float, iterations: int,
                         config: ProtocolConfig) -> np.ndarray:
    """Plaintext replay of the noiseless pipeline in exact integer arithmetic.

    Uses the same roundings as the encrypted path, so it must agree with a
    noiseless encrypted run bit for bit.
    """
    data = np.asarray(data, dtype=float)
    n = len(data)
    xs = round_half_away_array(expand_dataset(data) * config.data_scale)
    x_sum = [sum(int(v) for v in col) for col in xs.T]
    theta = np.asarray(theta0, dtype=float).copy()
    for _ in range(iterations):
        coeffs = update_coefficient_matrix(theta, 1, 1.0)
        ys = round_half_away_array(coeffs * config.coef_scale)
        sums = np.array([sum(int(c) * x for c, x in zip(row, x_sum)) / config.out_scale
                         for row in ys])
        theta = theta + (alpha / n) * sums
    return theta
