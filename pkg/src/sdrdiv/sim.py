"""Monte Carlo error-rate sweeps.

Each SNR point draws trials in chunks of 1024, 2048, ... up to 65536 and
counts vector errors (``s_hat != s``) per detector.  A detector stops after
the chunk in which it reaches ``target_errors``; a point stops when every
detector has stopped or ``max_trials`` is used up.

Randomness.  Trial ``t`` at SNR index ``i`` reads its words from the
Philox stream keyed ``(seed, mix64(i))`` starting at word
``t * words_per_instance``, so trial streams never overlap and a chunk can
be generated with one call.  Randomized rounding draws from the stream
keyed ``(seed, mix64(i, t, 1))``.  Chunks are processed in order whatever
the worker count, so a sweep is reproducible bit for bit.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from . import detectors as det
from . import sdp
from .detectors import DetectorKind
from .diversity import InsufficientData, fit_slope
from .model import ChannelConfig, apply_channel, db_to_rho, instances_from_words, _noise_std
from .numerics import RngStream, mix64, words_to_normal, words_to_sign

log = logging.getLogger(__name__)

FIRST_CHUNK = 1024
MAX_CHUNK = 65536
_Z95 = NormalDist().inv_cdf(0.975)
_ROUNDING_TAG = 1


@dataclass(frozen=True)
class SweepConfig:
    """One sweep.  ``fixed_channel`` (debugging only) replaces every drawn
    channel by the given real matrix."""

    channel: ChannelConfig
    detectors: tuple[DetectorKind, ...]
    snr_db: tuple[float, ...]
    max_trials: int = 10 ** 6
    target_errors: int = 200
    seed: int = 0
    sdp_tol: float = sdp.DEFAULT_TOL
    fixed_channel: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "detectors", tuple(self.detectors))
        object.__setattr__(self, "snr_db", tuple(float(x) for x in self.snr_db))
        if not self.detectors:
            raise ValueError("at least one detector is required")
        if len(set(map(str, self.detectors))) != len(self.detectors):
            raise ValueError("duplicate detectors")
        if not self.snr_db or any(b <= a for a, b in zip(self.snr_db, self.snr_db[1:])):
            raise ValueError("snr_db must be nonempty and strictly increasing")
        if self.max_trials < 1 or self.target_errors < 1:
            raise ValueError("max_trials and target_errors must be at least 1")
        if self.sdp_tol <= 0:
            raise ValueError("sdp_tol must be positive")
        if self.fixed_channel is not None:
            H = np.asarray(self.fixed_channel, dtype=float)
            if H.shape != (self.channel.real_n, self.channel.real_m):
                raise ValueError(f"fixed channel must be {self.channel.real_n}x{self.channel.real_m}")
            object.__setattr__(self, "fixed_channel", H)


@dataclass(frozen=True)
class BerPoint:
    snr_db: float
    detector: str
    trials: int
    errors: int
    bit_errors: int
    ber: float
    ci_low: float
    ci_high: float
    sdp_failures: int = 0
    excluded: int = 0

    @property
    def rho(self) -> float:
        return float(db_to_rho(self.snr_db))

    @property
    def bit_error_rate(self) -> float:
        return self.bit_errors / self.trials if self.trials else float("nan")


@dataclass
class BerCurve:
    config: SweepConfig
    points: list[BerPoint]

    def for_detector(self, detector) -> list[BerPoint]:
        name = str(detector)
        return [p for p in self.points if p.detector == name]

    def point(self, detector, snr_db: float) -> BerPoint:
        for p in self.for_detector(detector):
            if p.snr_db == snr_db:
                return p
        raise KeyError((str(detector), snr_db))


def wilson_interval(errors: int, trials: int, z: float = _Z95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials <= 0:
        return 0.0, 1.0
    p = errors / trials
    denom = 1.0 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * np.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return float(max(0.0, centre - half)), float(min(1.0, centre + half))


def trial_stream(cfg: SweepConfig, snr_index: int, trial: int) -> RngStream:
    """The stream positioned at the first word of one trial."""
    return RngStream(cfg.seed, mix64(snr_index), trial * cfg.channel.words_per_instance)


def rounding_stream(cfg: SweepConfig, snr_index: int, trial: int) -> RngStream:
    return RngStream(cfg.seed, mix64(snr_index, trial, _ROUNDING_TAG))


def chunk_schedule(max_trials: int):
    """Yield ``(start, size)`` chunks covering ``range(max_trials)``."""
    start, size = 0, FIRST_CHUNK
    while start < max_trials:
        b = min(size, max_trials - start)
        yield start, b
        start += b
        size = min(2 * size, MAX_CHUNK)


def draw_trials(cfg: SweepConfig, snr_index: int, start: int, count: int):
    """``(H, s, v, y)`` for trials ``start .. start+count-1`` of one point."""
    ch = cfg.channel
    rho = float(db_to_rho(cfg.snr_db[snr_index]))
    W = ch.words_per_instance
    words = trial_stream(cfg, snr_index, start).words(count * W).reshape(count, W)
    if cfg.fixed_channel is None:
        return instances_from_words(ch, rho, words)
    cw, nw = ch.channel_words, ch.noise_words
    H = np.broadcast_to(cfg.fixed_channel, (count, *cfg.fixed_channel.shape)).copy()
    v = _noise_std(ch, rho) * words_to_normal(words[:, cw: cw + nw])[:, : ch.real_n]
    s = words_to_sign(words[:, cw + nw: cw + nw + ch.real_m])
    hs = apply_channel(H, s)
    y = hs + v
    return H, s, y - hs, y


@dataclass
class _ChunkCounts:
    errors: dict
    bit_errors: dict
    sdp_failures: dict
    excluded: dict


def _run_chunk(cfg: SweepConfig, snr_index: int, start: int, count: int, names: tuple[str, ...]) -> _ChunkCounts:
    kinds = [DetectorKind.parse(n) for n in names]
    rho = float(db_to_rho(cfg.snr_db[snr_index]))
    H, s, _, y = draw_trials(cfg, snr_index, start, count)
    out = _ChunkCounts({}, {}, {}, {})
    ml = det.ml_batch(H, y) if any(k.family == "ml" for k in kinds) else None
    sdr = None
    if any(k.is_sdr for k in kinds):
        hint = ml if ml is not None and H.shape[2] <= 12 else None
        sdr = det.sdr_batch(H, y, tol=cfg.sdp_tol, hint=hint)
    for kind in kinds:
        name = str(kind)
        if kind.family == "ml":
            s_hat = ml
        else:
            s_hat = det.detect_batch(kind, H, y, rho, sdr=sdr,
                                     streams=lambda i: rounding_stream(cfg, snr_index, start + i))
        keep = np.ones(count, dtype=bool)
        failures = 0
        if kind.is_sdr:
            failures = int(sdr.failed.sum())
            # the fallback itself failed when the best iterate is unusable
            keep = np.all(np.isfinite(sdr.X), axis=(1, 2))
        wrong = s_hat != s
        out.errors[name] = int(np.any(wrong, axis=1)[keep].sum())
        out.bit_errors[name] = int(wrong[keep].sum())
        out.sdp_failures[name] = failures
        out.excluded[name] = int(count - keep.sum())
    return out


def run_sweep(cfg: SweepConfig, workers: int = 1) -> BerCurve:
    """Run every SNR point of ``cfg`` and return the error-rate curve.

    ``workers > 1`` evaluates up to that many chunks at once in worker
    processes; the result is identical to the serial run.
    """
    if workers < 1:
        raise ValueError("workers must be at least 1")
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    points = []
    try:
        for i, snr in enumerate(cfg.snr_db):
            points.extend(_run_point(cfg, i, pool, workers))
            log.info("snr %.2f dB done", snr)
    finally:
        if pool is not None:
            pool.shutdown()
    return BerCurve(cfg, points)


def _run_point(cfg: SweepConfig, i: int, pool, workers: int) -> list[BerPoint]:
    names = [str(k) for k in cfg.detectors]
    tot = {n: dict(trials=0, errors=0, bit_errors=0, sdp_failures=0, excluded=0) for n in names}
    active = list(names)
    chunks = list(chunk_schedule(cfg.max_trials))
    pos = 0
    while active and pos < len(chunks):
        wave = chunks[pos: pos + workers]
        pos += len(wave)
        act = tuple(active)
        if pool is None:
            results = [_run_chunk(cfg, i, a, b, act) for a, b in wave]
        else:
            futures = [pool.submit(_run_chunk, cfg, i, a, b, act) for a, b in wave]
            results = [f.result() for f in futures]
        # consume in chunk order; a detector ignores chunks after it stopped
        for (a, b), res in zip(wave, results):
            for n in act:
                if n not in active:
                    continue
                t = tot[n]
                t["trials"] += b - res.excluded[n]
                t["errors"] += res.errors[n]
                t["bit_errors"] += res.bit_errors[n]
                t["sdp_failures"] += res.sdp_failures[n]
                t["excluded"] += res.excluded[n]
                if t["errors"] >= cfg.target_errors:
                    active.remove(n)
        log.debug("snr index %d: %d chunks, active %s", i, pos, active)
    out = []
    for n in names:
        t = tot[n]
        lo, hi = wilson_interval(t["errors"], t["trials"])
        ber = t["errors"] / t["trials"] if t["trials"] else float("nan")
        out.append(BerPoint(cfg.snr_db[i], n, t["trials"], t["errors"], t["bit_errors"],
                            ber, lo, hi, t["sdp_failures"], t["excluded"]))
    return out


def diversity_from_curve(curve: BerCurve, detector, tail_points: int = 3,
                         min_errors: int = 10) -> tuple[float, float]:
    """Slope of the error rate against linear ``rho`` over the highest
    ``tail_points`` SNR points that have at least ``min_errors`` errors."""
    if tail_points < 2:
        raise ValueError("tail_points must be at least 2")
    usable = [p for p in curve.for_detector(detector) if p.errors >= min_errors]
    usable = sorted(usable, key=lambda p: p.snr_db)[-tail_points:]
    if len(usable) < 2:
        raise InsufficientData(f"{detector}: fewer than two points with {min_errors}+ errors")
    return fit_slope([(p.rho, p.ber) for p in usable])


def synthetic_curve(detector, snr_db, ber, trials: int = 10 ** 6) -> BerCurve:
    """A curve with prescribed error rates (for exercising the estimators)."""
    kind = DetectorKind.parse(str(detector))
    cfg = SweepConfig(ChannelConfig(1, 1), (kind,), tuple(snr_db), max_trials=trials)
    points = []
    for snr, p in zip(cfg.snr_db, ber):
        errors = int(round(p * trials))
        lo, hi = wilson_interval(errors, trials)
        points.append(BerPoint(snr, str(kind), trials, errors, errors, float(p), lo, hi))
    return BerCurve(cfg, points)


CSV_COLUMNS = ("snr_db", "detector", "trials", "errors", "ber", "ci_low", "ci_high", "sdp_failures")


def write_csv(curve: BerCurve, fh, header_lines=(), bit_errors: bool = False):
    """Write ``curve`` with optional ``#`` provenance lines."""
    for line in header_lines:
        fh.write(f"# {line}\n")
    cols = CSV_COLUMNS + (("bit_errors",) if bit_errors else ())
    fh.write(",".join(cols) + "\n")
    for p in curve.points:
        row = [f"{p.snr_db:g}", p.detector, str(p.trials), str(p.errors), f"{p.ber:.10g}",
               f"{p.ci_low:.10g}", f"{p.ci_high:.10g}", str(p.sdp_failures)]
        if bit_errors:
            row.append(str(p.bit_errors))
        fh.write(",".join(row) + "\n")
