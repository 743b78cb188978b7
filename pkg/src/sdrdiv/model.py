"""Problem instances ``y = H s + v`` with binary ``s``.

SNR convention: ``rho`` is linear and ``snr_db = 10*log10(rho)``.  The
noise has variance ``1/rho`` per real component in the real model.  In the
complex (4-QAM) model the complex noise has total variance ``1/rho`` per
component, i.e. ``1/(2*rho)`` per real and imaginary part, and the problem
is handed on in its real embedding.

Draws are laid out in a fixed order so a whole batch of trials can be
generated from one stream and still match instance-by-instance synthesis:
channel normals, then noise normals, then one word per transmitted bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .numerics import RngStream, normal_words, words_to_normal, words_to_sign

Normalization = Literal["per-column", "unit-variance"]


def db_to_rho(snr_db) -> np.ndarray | float:
    return 10.0 ** (np.asarray(snr_db, dtype=float) / 10.0)


def rho_to_db(rho) -> np.ndarray | float:
    return 10.0 * np.log10(rho)


@dataclass(frozen=True)
class ChannelConfig:
    """Channel dimensions and normalization.

    For ``complex=True`` the sizes ``n`` and ``m`` are the complex
    dimensions; the real problem handed to detectors is ``2n x 2m``.
    ``per-column`` normalization gives entries of variance ``1/n`` (unit
    received energy per symbol), ``unit-variance`` gives variance one.
    """

    n: int
    m: int
    normalization: Normalization = "per-column"
    complex: bool = False

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError("n and m must be at least 1")
        if self.normalization not in ("per-column", "unit-variance"):
            raise ValueError(f"unknown normalization {self.normalization!r}")

    @property
    def real_n(self) -> int:
        return 2 * self.n if self.complex else self.n

    @property
    def real_m(self) -> int:
        return 2 * self.m if self.complex else self.m

    @property
    def entry_variance(self) -> float:
        return 1.0 / self.n if self.normalization == "per-column" else 1.0

    # word layout of one synthesized instance
    @property
    def channel_words(self) -> int:
        return normal_words(2 * self.n * self.m if self.complex else self.n * self.m)

    @property
    def noise_words(self) -> int:
        return normal_words(self.real_n)

    @property
    def words_per_instance(self) -> int:
        """Words per trial, padded to a whole Philox block of four."""
        w = self.channel_words + self.noise_words + self.real_m
        return -(-w // 4) * 4


@dataclass
class ProblemInstance:
    H: np.ndarray
    s: np.ndarray
    v: np.ndarray
    y: np.ndarray
    rho: float
    seed: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @property
    def m(self) -> int:
        return self.H.shape[1]


def embed_complex(Hc) -> np.ndarray:
    """Real form ``[[Re, -Im], [Im, Re]]`` of a complex matrix or vector."""
    Hc = np.asarray(Hc, dtype=complex)
    if not np.all(np.isfinite(Hc)):
        raise ValueError("matrix has non-finite entries")
    if Hc.ndim == 1:
        return np.concatenate([Hc.real, Hc.imag])
    re, im = Hc.real, Hc.imag
    return np.block([[re, -im], [im, re]])


def _channel_from_normals(cfg: ChannelConfig, z: np.ndarray) -> np.ndarray:
    """Build (batched) channel matrices from a trailing axis of normals."""
    lead = z.shape[:-1]
    if not cfg.complex:
        return np.sqrt(cfg.entry_variance) * z[..., : cfg.n * cfg.m].reshape(*lead, cfg.n, cfg.m)
    k = cfg.n * cfg.m
    scale = np.sqrt(cfg.entry_variance / 2.0)
    re = scale * z[..., :k].reshape(*lead, cfg.n, cfg.m)
    im = scale * z[..., k: 2 * k].reshape(*lead, cfg.n, cfg.m)
    top = np.concatenate([re, -im], axis=-1)
    bottom = np.concatenate([im, re], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


def _noise_std(cfg: ChannelConfig, rho: float) -> float:
    return np.sqrt((0.5 if cfg.complex else 1.0) / rho)


def draw_channel(cfg: ChannelConfig, stream: RngStream) -> np.ndarray:
    """One channel matrix (real embedding in the complex case)."""
    count = 2 * cfg.n * cfg.m if cfg.complex else cfg.n * cfg.m
    return _channel_from_normals(cfg, stream.normal(count))


def synthesize(cfg: ChannelConfig, rho: float, stream: RngStream) -> ProblemInstance:
    """Draw ``H``, ``v`` and a uniform ``s`` and form ``y = H s + v``."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    start = stream.position
    words = stream.words(cfg.channel_words + cfg.noise_words + cfg.real_m)
    H, s, v, _ = instances_from_words(cfg, rho, words[None, :])
    H, s = H[0], s[0]
    # form y with the plain product so that y - H @ s reproduces v exactly
    hs = H @ s
    y = hs + v[0]
    return ProblemInstance(
        H=H, s=s, v=y - hs, y=y, rho=float(rho),
        seed={"seed": stream.seed, "stream_id": stream.stream_id, "position": start},
    )


def instances_from_words(cfg: ChannelConfig, rho: float, words: np.ndarray):
    """Batched synthesis from a ``(B, words_per_instance)`` word array.

    Returns ``(H, s, v, y)`` with leading batch axis.  Row ``t`` has the
    ``H`` and ``s`` of :func:`synthesize` run on a stream positioned at that
    row's first word; ``y`` and ``v`` agree with it to rounding.
    """
    cw, nw = cfg.channel_words, cfg.noise_words
    H = _channel_from_normals(cfg, words_to_normal(words[:, :cw]))
    v = _noise_std(cfg, rho) * words_to_normal(words[:, cw: cw + nw])[:, : cfg.real_n]
    s = words_to_sign(words[:, cw + nw: cw + nw + cfg.real_m])
    hs = apply_channel(H, s)
    y = hs + v
    # store the noise that is exactly consistent with y and H s
    return H, s, y - hs, y


def apply_channel(H: np.ndarray, s: np.ndarray) -> np.ndarray:
    """``H @ s`` summed over columns in a fixed order (batched or not).

    Using one summation order everywhere keeps ``y - H s == v`` exact.
    """
    out = H[..., :, 0] * s[..., None, 0]
    for j in range(1, H.shape[-1]):
        out = out + H[..., :, j] * s[..., None, j]
    return out
