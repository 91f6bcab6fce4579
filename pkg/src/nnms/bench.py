"""Monte-Carlo BER/FER curves, operation counts and result files.

Frame ``f`` at SNR index ``s`` always uses the noise stream ``(seed, s, f)``.
Frames are decoded in fixed-size blocks and the stopping rule is checked at
block boundaries in block order, so a curve does not depend on how many
workers decoded it.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .channel import SnrPoint, transmit_all_zero
from .codes import data_dir
from .decode import DEFAULT_CLIP, DecoderWeights, Kind, WeightScheme, decode_batch
from .tanner import Code

BLOCK = 256
CSV_COLUMNS = ("snr_db", "frames", "bit_errors", "frame_errors", "ber", "fer", "mean_iters",
               "censored")


@dataclass(frozen=True)
class EvalConfig:
    snr_points_db: tuple
    min_frame_errors: int = 100
    max_frames: int = 10 ** 7
    t_max: int | None = None
    seed: int = 0
    block: int = BLOCK
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "snr_points_db", tuple(float(s) for s in self.snr_points_db))
        if not self.snr_points_db:
            raise ValueError("at least one SNR point is needed")
        if self.min_frame_errors < 1:
            raise ValueError("min_frame_errors must be >= 1")
        if self.max_frames < 1 or self.block < 1 or self.workers < 1:
            raise ValueError("max_frames, block and workers must be >= 1")


@dataclass(frozen=True)
class CurvePoint:
    snr_db: float
    frames: int
    bit_errors: int
    frame_errors: int
    ber: float
    fer: float
    mean_iters: float
    censored: bool

    def __post_init__(self):
        if self.bit_errors < self.frame_errors:
            raise ValueError("every frame error carries at least one bit error")


def with_t_max(weights: DecoderWeights, t_max: int | None) -> DecoderWeights:
    """Same decoder with another iteration budget (only where weights allow it)."""
    s = weights.scheme
    if t_max is None or t_max == s.t_max:
        return weights
    if s.kind in (Kind.SNNMS, Kind.ANNMS):
        raise ValueError(f"{s.kind.value} weights are tied to T={s.t_max}")
    return DecoderWeights(WeightScheme(s.kind, t_max, s.factor), weights.raw)


def _decode_block(args):
    code, weights, sigma_db, seed, s_idx, first, count, clip = args
    batch = transmit_all_zero(SnrPoint(sigma_db, code.params), count, seed, s_idx, first)
    res = decode_batch(code.graph, batch.llrs, weights, clip)
    wrong = res.hard.astype(bool)  # all-zeros codeword: any 1 is an error
    per_frame = wrong.sum(axis=1)
    return int(per_frame.sum()), int((per_frame > 0).sum()), int(res.iterations_used.sum()), count


def _blocks(cfg: EvalConfig):
    first = 0
    while first < cfg.max_frames:
        count = min(cfg.block, cfg.max_frames - first)
        yield first, count
        first += count


def monte_carlo_eval(code: Code, weights: DecoderWeights, cfg: EvalConfig,
                     clip: float | None = DEFAULT_CLIP, progress=None) -> list[CurvePoint]:
    """Decode all-zeros frames until ``min_frame_errors`` or ``max_frames`` per SNR point.

    A point that hits the frame cap first is returned with ``censored=True``.
    Frames that converge to a wrong codeword count as errors.
    """
    weights = with_t_max(weights, cfg.t_max)
    weights.validate(code.graph)
    pool = None
    if cfg.workers > 1:
        import multiprocessing
        pool = multiprocessing.get_context("fork").Pool(cfg.workers)
    points = []
    try:
        for s_idx, snr in enumerate(cfg.snr_points_db):
            bits = frames_err = iters = frames = 0
            jobs = ((code, weights, snr, cfg.seed, s_idx, first, count, clip)
                    for first, count in _blocks(cfg))
            results = pool.imap(_decode_block, jobs) if pool else map(_decode_block, jobs)
            for b_err, f_err, it, count in results:
                bits += b_err
                frames_err += f_err
                iters += it
                frames += count
                if frames_err >= cfg.min_frame_errors:
                    break
            n_bits = frames * code.params.n
            point = CurvePoint(snr, frames, bits, frames_err, bits / n_bits, frames_err / frames,
                               iters / frames, frames_err < cfg.min_frame_errors)
            points.append(point)
            if progress is not None:
                progress(point)
    finally:
        if pool is not None:
            pool.terminate()
    return points


# ---------------------------------------------------------------------------
# operation counts


@dataclass(frozen=True)
class ComplexityReport:
    decoder: str
    additions_per_iter: int
    multiplications_per_iter: int
    comparisons_per_iter: int
    hyperbolic_per_iter: int = 0
    projections_per_iter: int = 0
    note: str = ""


def _avg_rounded(num: int, den: int) -> int:
    return round(Fraction(num, den))


def complexity_count(code: Code, scheme: WeightScheme) -> ComplexityReport:
    """Per-iteration operation counts of one flooding iteration.

    Min-sum family additions follow ``N (dv + dc) + 2 M dc`` with average
    degrees (rounded for irregular codes).  Normalized variants multiply the
    two minima of every check; ANNMS also weighs every channel value and every
    incoming message.  BP counts the naive product form, one tanh per
    factor of every outgoing message.
    """
    h = code.h
    n, m, e = h.n_vars, h.n_checks, h.nnz
    dc = h.row_degrees()
    kind = scheme.kind
    label = scheme.label
    if kind is Kind.PLAIN_BP:
        return ComplexityReport(label, 3 * e, int(np.sum(dc * np.maximum(dc - 2, 0))), 0,
                                int(np.sum(dc * (dc - 1))), 0, "naive product form")
    adds = 3 * e + _avg_rounded(n * e, m)  # N dv + N dc + 2 M dc
    comps = 2 * e  # two-minimum search
    if kind is Kind.PLAIN_MS:
        mults = 0
    elif kind is Kind.OMS:
        mults = 0
        adds += 2 * m
    elif kind is Kind.ANNMS:
        mults = n + 2 * e
    else:
        mults = 2 * m
    return ComplexityReport(label, adds, mults, comps)


def admm_reference(code: Code) -> ComplexityReport:
    """Static ADMM row: ``N (dv+1) + 3 M dc`` additions, ``N`` products, ``N+M`` projections."""
    h = code.h
    n, m, e = h.n_vars, h.n_checks, h.nnz
    return ComplexityReport("ADMM (reference)", e + n + 3 * e, n, 0, 0, n + m,
                            "published counts, not implemented")


# ---------------------------------------------------------------------------
# result files


def _csv_text(points) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for p in points:
        w.writerow([repr(p.snr_db), p.frames, p.bit_errors, p.frame_errors, repr(p.ber),
                    repr(p.fer), repr(p.mean_iters), "true" if p.censored else "false"])
    return buf.getvalue()


def results_json(points, label: str | None = None) -> str:
    doc = {"label": label, "points": [asdict(p) for p in points]}
    return json.dumps(doc, indent=1) + "\n"


def points_from_json(text: str) -> tuple[str | None, list[CurvePoint]]:
    doc = json.loads(text)
    return doc.get("label"), [CurvePoint(**p) for p in doc["points"]]


def points_from_csv(text: str) -> list[CurvePoint]:
    rows = list(csv.DictReader(io.StringIO(text)))
    out = []
    for r in rows:
        out.append(CurvePoint(float(r["snr_db"]), int(r["frames"]), int(r["bit_errors"]),
                              int(r["frame_errors"]), float(r["ber"]), float(r["fer"]),
                              float(r["mean_iters"]), r["censored"] == "true"))
    return out


def emit_results(points, fmt: str, destination, label: str | None = None) -> Path:
    """Write a curve as CSV (fixed column order) or JSON; returns the path."""
    points = list(points)
    if not points:
        raise ValueError("no points to write")
    if fmt == "csv":
        text = _csv_text(points)
    elif fmt == "json":
        text = results_json(points, label)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    path = Path(destination)
    path.write_text(text)
    return path


# ---------------------------------------------------------------------------
# published curves, for overlay only


def reference_curves() -> dict:
    """Curves read off published figures (external data, not produced here).

    Keys are curve labels; values hold ``metric`` ("ber"/"fer") and
    ``points`` as ``[snr_db, value]`` pairs.
    """
    doc = json.loads((data_dir() / "reference_curves.json").read_text())
    return doc["curves"]


def reference_value(label: str, snr_db: float) -> float:
    for snr, value in reference_curves()[label]["points"]:
        if math.isclose(snr, snr_db, abs_tol=1e-9):
            return value
    raise KeyError(f"{label} has no point at {snr_db} dB")


__all__ = [
    "EvalConfig", "CurvePoint", "ComplexityReport", "monte_carlo_eval", "complexity_count",
    "admm_reference", "emit_results", "results_json", "points_from_json", "points_from_csv",
    "reference_curves", "reference_value", "with_t_max",
]
