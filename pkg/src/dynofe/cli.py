"""Command-line front end: train, eval and bench.

Run settings come from a flat ``key=value`` file (``--config``) and are then
overridden by flags. Exit codes: 0 success, 1 configuration or input error,
2 budget refusal.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from dataclasses import dataclass, fields, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from .dp import PointMass, PrivacyParams, allocate_schedule
from .dyno import dyno_dec, dyno_ekeygen, dyno_enc, dyno_keygen, dyno_setup
from .errors import CapacityError, ConfigError, DynoError
from .logreg import (expansion_size, ldp_perturb, load_csv, predict_accuracy,
                     reference_training, synthetic_dataset)
from .protocol import (Analyst, Authority, ProtocolConfig, Transcript, run_training,
                       submit_dataset)
from .ring import FixedPointCodec, Modulus, encode_signed_ints

log = logging.getLogger("dynofe")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_REFUSED = 2

BENCH_CAP = 10**7
BENCH_X_MAX = 2**16
BENCH_Y_MAX = 2**7


@dataclass(frozen=True)
class RunConfig:
    bits: int = 64
    s_x: int = 10**6
    s_y: int = 10**6
    eps: float = 8.0
    delta: float | None = None  # None means 1/n
    iters: int = 50
    alpha: float = 0.1
    ratio: float = 1.05
    seed: int | None = None
    dataset: str | None = None
    noise: bool = True
    client_eps: float | None = None  # per-client budget, defaults to eps
    client_delta: float | None = None
    m_max: int = 4096

    def protocol_config(self) -> ProtocolConfig:
        return ProtocolConfig(Modulus(self.bits), self.s_x, self.s_y, m_max=self.m_max)


_ALIASES = {"scale": ("s_x", "s_y"), "epsilon": ("eps",), "iterations": ("iters",),
            "T": ("iters",)}


def _parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("on", "true", "yes", "1"):
        return True
    if value in ("off", "false", "no", "0"):
        return False
    raise ConfigError(f"expected on/off, got {text!r}")


def _convert(name: str, text: str):
    kinds = {f.name: f.type for f in fields(RunConfig)}
    kind = kinds[name]
    if text.strip().lower() in ("", "none") and "None" in kind:
        return None
    if name == "noise":
        return _parse_bool(text)
    if name == "dataset":
        return text.strip()
    try:
        if kind.startswith("int"):
            return int(float(text)) if "e" in text.lower() else int(text)
        return float(text)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {text!r}") from None


def apply_settings(config: RunConfig, settings: dict[str, str]) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    updates = {}
    for key, text in settings.items():
        for name in _ALIASES.get(key, (key,)):
            if name not in known:
                raise ConfigError(f"unknown setting {key!r}")
            updates[name] = _convert(name, str(text))
    return replace(config, **updates)


def read_config_file(path: str | Path) -> dict[str, str]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    settings = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        settings[key.strip()] = value.strip()
    return settings


def validate(config: RunConfig, n: int, m: int) -> ProtocolConfig:
    """Check every precondition a run depends on before any work starts."""
    try:
        modulus = Modulus(config.bits)
        FixedPointCodec(config.s_x, modulus)
        FixedPointCodec(config.s_y, modulus)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if 2 * config.s_x * config.s_y >= modulus.q:
        raise ConfigError("s_x * s_y must stay below q/2")
    if expansion_size(m) > config.m_max:
        raise ConfigError(f"{m} features expand to {expansion_size(m)} > m_max = {config.m_max}")
    if config.iters < 0:
        raise ConfigError("iters must be non-negative")
    if not config.alpha > 0:
        raise ConfigError("alpha must be positive")
    if config.ratio < 1:
        raise ConfigError("ratio must be at least 1")
    try:
        p_max = PrivacyParams(config.eps, config.delta if config.delta is not None else 1 / n)
        if config.iters:
            total_eps, total_delta = allocate_schedule(p_max, config.iters, config.ratio).total
            assert total_eps <= Fraction(p_max.epsilon) and total_delta <= Fraction(p_max.delta)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return config.protocol_config()


def load_dataset(source: str | None) -> np.ndarray:
    """A CSV path, or ``synthetic:N,M[,SEED]`` for generated records."""
    if not source:
        raise ConfigError("no dataset given (use --dataset)")
    if source.startswith("synthetic:"):
        try:
            parts = [int(v) for v in source.split(":", 1)[1].split(",")]
            n, m = parts[:2]
            seed = parts[2] if len(parts) > 2 else 0
        except ValueError:
            raise ConfigError(f"bad synthetic dataset {source!r}") from None
        return synthetic_dataset(n, m, seed=seed)
    path = Path(source)
    if not path.is_file():
        raise ConfigError(f"dataset {source} not found")
    try:
        return load_csv(path)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def write_model(theta: np.ndarray, path: Path):
    path.write_text("".join(f"{float(v):.17g}\n" for v in theta))


def read_model(path: str | Path) -> np.ndarray:
    try:
        lines = Path(path).read_text().split()
        return np.array([float(v) for v in lines])
    except OSError as exc:
        raise ConfigError(f"cannot read model {path}: {exc.strerror}") from None
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


# --- train ---------------------------------------------------------------------


@dataclass
class TrainResult:
    theta: np.ndarray
    transcript: Transcript
    gathering: Transcript
    accuracy: float
    ldp_accuracy: float | None
    gathering_seconds: float
    training_seconds: float
    refused: bool


def train(config: RunConfig, data: np.ndarray) -> TrainResult:
    n, m = len(data), data.shape[1] - 2
    protocol = validate(config, n, m)
    p_max = PrivacyParams(config.eps, config.delta if config.delta is not None else 1 / n)
    budget = PrivacyParams(config.client_eps if config.client_eps is not None else p_max.epsilon,
                           config.client_delta if config.client_delta is not None
                           else p_max.delta)
    rng = np.random.default_rng(config.seed)
    authority = Authority(protocol, budget, rng)
    analyst = Analyst(protocol, np.zeros(m + 1))

    start = time.perf_counter()
    try:
        study = authority.open_study(m)
    except CapacityError as exc:
        raise ConfigError(str(exc)) from None
    submit_dataset(authority, analyst, study, data)
    gathered = time.perf_counter()
    theta, transcript = run_training(authority, analyst, study, config.iters, p_max,
                                     config.alpha, seed=config.seed, ratio=config.ratio,
                                     noise_off=not config.noise)
    finished = time.perf_counter()

    refused = any(rec.refused for rec in transcript.iterations)
    usable = not transcript.diverged and bool(np.all(np.isfinite(theta)))
    accuracy = predict_accuracy(theta, data) if usable else 0.0
    ldp_accuracy = None
    if config.noise and p_max.delta > 0:
        noisy = ldp_perturb(data, p_max, np.random.default_rng(config.seed))
        ldp_theta = reference_training(np.zeros(m + 1), noisy, config.alpha, config.iters)
        ldp_accuracy = (predict_accuracy(ldp_theta, data)
                        if np.all(np.isfinite(ldp_theta)) else 0.0)
    return TrainResult(theta, transcript, authority.transcript, accuracy, ldp_accuracy,
                       gathered - start, finished - gathered, refused)


def _report(config: RunConfig, data: np.ndarray, result: TrainResult) -> str:
    n, m = len(data), data.shape[1] - 2
    done = sum(1 for rec in result.transcript.iterations if not rec.refused)
    lines = [
        f"records={n}",
        f"features={m}",
        f"expanded_length={expansion_size(m)}",
        f"iterations_requested={config.iters}",
        f"iterations_completed={done}",
        f"noise={'on' if config.noise else 'off'}",
        f"eps_max={config.eps:.17g}",
        f"delta_max={config.delta if config.delta is not None else 1 / n:.17g}",
        f"alpha={config.alpha:.17g}",
        f"diverged={'yes' if result.transcript.diverged else 'no'}",
        f"budget_refused={'yes' if result.refused else 'no'}",
        f"accuracy={result.accuracy:.6f}",
    ]
    if result.ldp_accuracy is not None:
        lines.append(f"ldp_baseline_accuracy={result.ldp_accuracy:.6f}")
    lines += [
        f"gathering_seconds={result.gathering_seconds:.3f}",
        f"training_seconds={result.training_seconds:.3f}",
        f"total_seconds={result.gathering_seconds + result.training_seconds:.3f}",
        f"total_minutes={(result.gathering_seconds + result.training_seconds) / 60:.4f}",
    ]
    return "\n".join(lines) + "\n"


def cmd_train(config: RunConfig, out: Path) -> int:
    data = load_dataset(config.dataset)
    result = train(config, data)
    out.mkdir(parents=True, exist_ok=True)
    write_model(result.theta, out / "model.txt")
    (out / "transcript.log").write_text(result.gathering.to_text() + result.transcript.to_text())
    report = _report(config, data, result)
    (out / "report.txt").write_text(report)
    sys.stdout.write(report)
    if result.refused:
        print("error: the authority refused a key request (budget exhausted)", file=sys.stderr)
        return EXIT_REFUSED
    return EXIT_OK


# --- eval ----------------------------------------------------------------------


def cmd_eval(model_path: str | Path, config: RunConfig) -> int:
    theta = read_model(model_path)
    data = load_dataset(config.dataset)
    if len(theta) != data.shape[1] - 1:
        raise ConfigError(f"model has {len(theta)} coordinates, dataset needs {data.shape[1] - 1}")
    print(f"accuracy={predict_accuracy(theta, data):.6f}")
    return EXIT_OK


# --- bench ---------------------------------------------------------------------


def run_bench(n: int, m: int, bits: int = 64, seed: int | None = None) -> dict[str, float]:
    """Time each algorithm on n clients with m-long integer vectors.

    Plaintexts are uniform in [0, 2^16] and coefficients in [0, 2^7].
    ``enc`` is the total over all clients and ``enc_per_client`` its mean.
    """
    if n < 1 or m < 1:
        raise ConfigError("n and m must be positive")
    if n * m > BENCH_CAP:
        raise ConfigError(f"n*m = {n * m} exceeds the cap of {BENCH_CAP}")
    rng = np.random.default_rng(seed)
    modulus = Modulus(bits)
    xs = rng.integers(0, BENCH_X_MAX, (n, m), endpoint=True)
    ys = rng.integers(0, BENCH_Y_MAX, (n, m), endpoint=True)
    x_vecs = [encode_signed_ints(row, modulus) for row in xs]
    y_vecs = [encode_signed_ints(row, modulus) for row in ys]
    label = b"bench"

    t0 = time.perf_counter()
    pp, msk = dyno_setup(256, m, n, modulus)
    keys = [dyno_ekeygen(msk, i) for i in range(1, n + 1)]
    t1 = time.perf_counter()
    cts = [dyno_enc(keys[i - 1], x_vecs[i - 1], label, i, pp) for i in range(1, n + 1)]
    t2 = time.perf_counter()
    dk = dyno_keygen(msk, range(1, n + 1), y_vecs, label, PointMass(0))
    t3 = time.perf_counter()
    value = dyno_dec(dk, cts)
    t4 = time.perf_counter()

    # products are below 2^23 and n*m <= 10^7, so int64 cannot overflow
    expected = int(np.einsum("ij,ij->", xs, ys))
    if value != expected:
        raise AssertionError("benchmark decryption disagrees with the plaintext inner product")
    return {"setup": t1 - t0, "enc": t2 - t1, "enc_per_client": (t2 - t1) / n,
            "keygen": t3 - t2, "dec": t4 - t3}


def cmd_bench(config: RunConfig, sizes: list[tuple[int, int]], out: Path, repeat: int = 1) -> int:
    rows = []
    for n, m in sizes:
        for r in range(repeat):
            seed = None if config.seed is None else config.seed + r
            timings = run_bench(n, m, config.bits, seed)
            for phase, seconds in timings.items():
                rows.append((n, m, config.bits, r, phase, seconds))
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "bench.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "m", "bits", "repeat", "phase", "seconds"])
        writer.writerows((n, m, b, r, p, f"{s:.6g}") for n, m, b, r, p, s in rows)
    for n, m, _, r, phase, seconds in rows:
        print(f"n={n} m={m} run={r} {phase}={seconds * 1e3:.3f} ms")
    return EXIT_OK


# --- argument parsing ----------------------------------------------------------


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value settings file")
    common.add_argument("--dataset", help="CSV file or synthetic:N,M[,SEED]")
    common.add_argument("--eps", type=float, help="total epsilon per client")
    common.add_argument("--delta", type=float, help="total delta per client (default 1/n)")
    common.add_argument("--iters", type=int, help="gradient descent iterations")
    common.add_argument("--alpha", type=float, help="learning rate")
    common.add_argument("--bits", type=int, help="modulus bits, q = 2^bits")
    common.add_argument("--scale", type=int, help="fixed-point scale for data and coefficients")
    common.add_argument("--seed", type=int, help="seed for noise sampling")
    common.add_argument("--noise", choices=["on", "off"], help="off runs with zero noise")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("-v", "--verbose", action="store_true")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(
        prog="dynofe",
        description="Private logistic regression over functionally encrypted records.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="gather a dataset and train a model")
    ev = sub.add_parser("eval", parents=[common], help="accuracy of a model on a dataset")
    ev.add_argument("model", help="model.txt written by train")
    bench = sub.add_parser("bench", parents=[common], help="time setup/enc/keygen/dec")
    bench.add_argument("--n", type=int, action="append", help="clients (repeatable)")
    bench.add_argument("--m", type=int, action="append", help="vector length (repeatable)")
    bench.add_argument("--repeat", type=int, default=1)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig()
    if args.config:
        config = apply_settings(config, read_config_file(args.config))
    flags = {key: getattr(args, key) for key in
             ("dataset", "eps", "delta", "iters", "alpha", "bits", "scale", "seed", "noise")}
    return apply_settings(config, {k: str(v) for k, v in flags.items() if v is not None})


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = resolve_config(args)
        out = Path(args.out)
        if args.command == "train":
            return cmd_train(config, out)
        if args.command == "eval":
            return cmd_eval(args.model, config)
        ns = args.n or [10]
        ms = args.m or [10]
        if len(ns) != len(ms):
            if len(ns) == 1:
                ns = ns * len(ms)
            elif len(ms) == 1:
                ms = ms * len(ns)
            else:
                raise ConfigError("give --n and --m the same number of times")
        return cmd_bench(config, list(zip(ns, ms)), out, args.repeat)
    except (ConfigError, DynoError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
