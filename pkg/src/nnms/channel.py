"""BPSK over AWGN: SNR conversion, all-zeros transmission and LLRs.

Randomness is drawn from one seeded stream per (seed, stream key, frame index)
so that any subset of frames can be regenerated independently of how a run
is split across workers.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .tanner import CodeParams

BATCH_MAGIC = b"NNMSLLR1"


def snr_to_sigma2(ebn0_db: float, code: CodeParams) -> float:
    """Noise variance for a given Eb/N0 (dB): ``N / (2 K 10^(dB/10))``."""
    if not math.isfinite(ebn0_db):
        raise ValueError(f"Eb/N0 must be finite, got {ebn0_db}")
    if code.k <= 0:
        raise ValueError("K must be positive")
    return code.n / (2.0 * code.k * 10.0 ** (ebn0_db / 10.0))


def sigma2_to_snr(sigma2: float, code: CodeParams) -> float:
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    return 10.0 * math.log10(code.n / (2.0 * code.k * sigma2))


@dataclass(frozen=True)
class SnrPoint:
    ebn0_db: float
    code: CodeParams

    @property
    def sigma2(self) -> float:
        return snr_to_sigma2(self.ebn0_db, self.code)


@dataclass
class ChannelBatch:
    """``llrs`` and ``labels`` are ``(batch_size, N)``; labels are 0/1."""

    llrs: np.ndarray
    labels: np.ndarray
    snr_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.llrs.shape != self.labels.shape or self.llrs.ndim != 2:
            raise ValueError("llrs and labels must be matrices of equal shape")

    @property
    def batch_size(self) -> int:
        return self.llrs.shape[0]

    @property
    def n(self) -> int:
        return self.llrs.shape[1]

    def dump(self, path) -> None:
        """Write llrs as little-endian float32 rows after a 16-byte header."""
        with open(path, "wb") as fh:
            fh.write(BATCH_MAGIC + struct.pack("<II", self.batch_size, self.n))
            fh.write(np.ascontiguousarray(self.llrs, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path) -> "ChannelBatch":
        with open(path, "rb") as fh:
            header = fh.read(16)
            if len(header) != 16 or header[:8] != BATCH_MAGIC:
                raise ValueError(f"{path}: not an LLR batch file")
            b, n = struct.unpack("<II", header[8:])
            data = np.frombuffer(fh.read(), dtype="<f4")
        if data.size != b * n:
            raise ValueError(f"{path}: expected {b * n} values, found {data.size}")
        llrs = data.reshape(b, n).astype(np.float64)
        return cls(llrs, np.zeros((b, n), dtype=np.uint8), {"source": str(path)})


def stream_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for a (seed, key...) tuple of non-negative ints."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, key)]))


def awgn_llrs(sigma2: float, n: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    shape = (n,) if size is None else (size, n)
    y = 1.0 + math.sqrt(sigma2) * rng.standard_normal(shape)
    return 2.0 * y / sigma2


def transmit_all_zero(snr: SnrPoint, batch_size: int, rng_seed: int, stream: int = 0,
                      first_frame: int = 0) -> ChannelBatch:
    """All-zeros codewords through BPSK (bit 0 -> +1) and AWGN, as LLRs.

    Frame ``f`` draws its noise from ``stream_rng(rng_seed, stream, f)``.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = snr.code.n
    sigma2 = snr.sigma2
    llrs = np.empty((batch_size, n))
    for row in range(batch_size):
        llrs[row] = awgn_llrs(sigma2, n, stream_rng(rng_seed, stream, first_frame + row))
    meta = {"kind": "awgn", "ebn0_db": snr.ebn0_db, "sigma2": sigma2}
    return ChannelBatch(llrs, np.zeros((batch_size, n), dtype=np.uint8), meta)


def llr_hard_decision(llr):
    """0 where ``llr >= 0`` else 1 (a zero LLR decides 0)."""
    out = (np.asarray(llr) < 0).astype(np.uint8)
    return int(out) if out.ndim == 0 else out


def raw_channel_ber(sigma2: float) -> float:
    """Hard-decision BER of BPSK over AWGN: ``Phi(-1/sigma)``."""
    return 0.5 * math.erfc(1.0 / math.sqrt(2.0 * sigma2))
