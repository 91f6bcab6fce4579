"""Flooding decoders: sum-product BP, min-sum variants and weighted neural min-sum.

Every decoder runs the same loop: variable update, check update, marginals,
hard decision and a syndrome test that stops iterating once ``H c = 0``.
The neural variants differ only in which effective weights they feed the
loop.  Trainable weights are stored unconstrained ("raw") and mapped through
softplus, so effective weights stay positive.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from . import _kernels as K
from .tanner import TannerGraph

DEFAULT_CLIP = 100.0
BP_EPS = 1e-12
CHUNK = 32  # frames decoded side by side


class DecodingDiverged(ArithmeticError):
    def __init__(self, iteration: int, frame: int | None = None):
        where = f" (frame {frame})" if frame is not None else ""
        super().__init__(f"numerical divergence at iteration {iteration}{where}")
        self.iteration = iteration
        self.frame = frame


def softplus(x):
    return np.logaddexp(0.0, x)


def inverse_softplus(y):
    y = np.asarray(y, dtype=float)
    return y + np.log(-np.expm1(-y))


def _exact_unit_raw() -> float:
    # raw value whose softplus is exactly 1.0, so an untrained decoder is plain MS
    x = float(inverse_softplus(1.0))
    for _ in range(8):
        y = float(softplus(x))
        if y == 1.0:
            return x
        x = np.nextafter(x, -np.inf if y > 1.0 else np.inf)
    raise RuntimeError("softplus has no exact preimage of 1.0 near log(e-1)")


UNIT_RAW = _exact_unit_raw()


class Kind(str, Enum):
    PLAIN_BP = "bp"
    PLAIN_MS = "ms"
    NMS = "nms"
    OMS = "oms"
    UNNMS = "unnms"
    SNNMS = "snnms"
    ANNMS = "annms"

    @property
    def trainable(self) -> bool:
        return self in (Kind.UNNMS, Kind.SNNMS, Kind.ANNMS)


@dataclass(frozen=True)
class WeightScheme:
    """Decoder family plus iteration budget.

    ``factor`` is the constant normalization for NMS or the offset for OMS.
    """

    kind: Kind
    t_max: int
    factor: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")
        if self.kind is Kind.NMS and self.factor is None:
            raise ValueError("NMS needs a normalization factor")
        if self.kind is Kind.OMS and self.factor is None:
            object.__setattr__(self, "factor", 0.5)

    def param_count(self, graph: TannerGraph) -> int:
        if self.kind is Kind.UNNMS:
            return 1
        if self.kind is Kind.SNNMS:
            return self.t_max
        if self.kind is Kind.ANNMS:
            return self.t_max * (graph.n_vars + 2 * graph.edge_count)
        return 0

    @property
    def label(self) -> str:
        name = self.kind.value.upper()
        return f"{name}({self.t_max})"


@dataclass
class DecoderWeights:
    """Raw (pre-softplus) parameters for a scheme.

    ANNMS raw layout: alpha ``(T, N)``, then beta ``(T, E)``, then gamma
    ``(T, E)``, each flattened row-major (layer-major, then variable/edge id).
    """

    scheme: WeightScheme
    raw: np.ndarray

    def __post_init__(self):
        self.raw = np.asarray(self.raw, dtype=float).ravel()

    def validate(self, graph: TannerGraph) -> None:
        want = self.scheme.param_count(graph)
        if self.raw.size != want:
            raise ValueError(f"{self.scheme.kind.value} with T={self.scheme.t_max} needs "
                             f"{want} raw parameters, got {self.raw.size}")

    @classmethod
    def initial(cls, scheme: WeightScheme, graph: TannerGraph) -> "DecoderWeights":
        """Weights whose effective values are all exactly 1 (plain min-sum)."""
        return cls(scheme, np.full(scheme.param_count(graph), UNIT_RAW))

    @classmethod
    def fixed(cls, kind, t_max: int, factor: float | None = None) -> "DecoderWeights":
        return cls(WeightScheme(Kind(kind), t_max, factor), np.zeros(0))

    @property
    def effective(self) -> np.ndarray:
        return softplus(self.raw)

    def expand(self, graph: TannerGraph) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
        """Per-iteration effective ``alpha (T,N)``, ``beta (T,E)``, ``gamma (T,E)`` and offset."""
        self.validate(graph)
        t, n, e = self.scheme.t_max, graph.n_vars, graph.edge_count
        alpha = np.ones((t, n))
        beta = np.ones((t, e))
        gamma = np.ones((t, e))
        offset = 0.0
        kind = self.scheme.kind
        w = self.effective
        if kind is Kind.NMS:
            gamma[:] = self.scheme.factor
        elif kind is Kind.OMS:
            offset = float(self.scheme.factor)
        elif kind is Kind.UNNMS:
            gamma[:] = w[0]
        elif kind is Kind.SNNMS:
            gamma[:] = w[:, None]
        elif kind is Kind.ANNMS:
            alpha = w[: t * n].reshape(t, n).copy()
            beta = w[t * n: t * (n + e)].reshape(t, e).copy()
            gamma = w[t * (n + e):].reshape(t, e).copy()
        return alpha, beta, gamma, offset

    # -- weight files -------------------------------------------------------

    def to_json(self) -> str:
        doc = {"scheme": self.scheme.kind.value, "t_max": self.scheme.t_max}
        if self.scheme.factor is not None:
            doc["factor"] = self.scheme.factor
        doc["raw"] = [float(v) for v in self.raw]
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str, graph: TannerGraph | None = None) -> "DecoderWeights":
        doc = json.loads(text)
        scheme = WeightScheme(Kind(doc["scheme"]), int(doc["t_max"]), doc.get("factor"))
        w = cls(scheme, np.array(doc.get("raw", []), dtype=float))
        if graph is not None:
            w.validate(graph)
        return w

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path, graph: TannerGraph | None = None) -> "DecoderWeights":
        return cls.from_json(Path(path).read_text(), graph)


def nms_factor_from_unnms() -> float:
    """Normalization factor softplus(-1), where trained UNNMS weights settle."""
    return float(softplus(-1.0))


# ---------------------------------------------------------------------------
# node updates on explicit message arrays (one frame, or a batch of rows)


def _frame_minor(a, width: int, what: str):
    a = np.asarray(a, dtype=float)
    single = a.ndim == 1
    rows = a[None, :] if single else a
    if rows.ndim != 2 or rows.shape[1] != width:
        raise ValueError(f"{what} must have length {width}")
    return np.ascontiguousarray(rows.T), single


def _back(a, single):
    return a[:, 0].copy() if single else np.ascontiguousarray(a.T)


def variable_update(graph: TannerGraph, llrs, incoming, alpha=None, beta=None,
                    clip: float = DEFAULT_CLIP) -> np.ndarray:
    """v->c messages ``alpha_i b_i + sum_{other edges} beta * incoming``.

    ``incoming`` holds c->v messages indexed by edge (all zero before the
    first iteration).  Accepts one frame or a batch with one frame per row.
    """
    b, single = _frame_minor(llrs, graph.n_vars, "llrs")
    c, _ = _frame_minor(incoming, graph.edge_count, "incoming messages")
    if b.shape[1] != c.shape[1]:
        raise ValueError("llrs and messages hold different numbers of frames")
    alpha = np.broadcast_to(1.0 if alpha is None else alpha, graph.n_vars).astype(float)
    beta = np.broadcast_to(1.0 if beta is None else beta, graph.edge_count).astype(float)
    out = np.empty_like(c)
    K.variable_layer(b, c, alpha, beta, graph.var_ptr, graph.var_edges, float(clip), out, b.shape[1])
    return _back(out, single)


def check_update_ms(graph: TannerGraph, incoming, gamma=1.0, offset: float = 0.0) -> np.ndarray:
    """Weighted min-sum c->v messages (``offset > 0`` gives offset min-sum)."""
    u, single = _frame_minor(incoming, graph.edge_count, "incoming messages")
    nb = u.shape[1]
    gamma = np.broadcast_to(gamma, graph.edge_count).astype(float)
    out = np.empty_like(u)
    idx = np.empty((2, graph.n_checks, nb), dtype=np.int32)
    par = np.empty((graph.n_checks, nb), dtype=np.bool_)
    K.check_layer_ms(u, gamma, float(offset), graph.check_ptr, out, idx[0], idx[1], par, nb)
    return _back(out, single)


def check_update_bp(graph: TannerGraph, incoming, eps: float = BP_EPS) -> np.ndarray:
    """Sum-product c->v messages."""
    u, single = _frame_minor(incoming, graph.edge_count, "incoming messages")
    out = np.empty_like(u)
    K.check_layer_bp(u, graph.check_ptr, eps, out, np.empty_like(u), u.shape[1])
    return _back(out, single)


def marginals(graph: TannerGraph, llrs, incoming, clip: float = DEFAULT_CLIP) -> np.ndarray:
    """Bit marginals ``b_i + sum of all incoming c->v messages`` (no exclusion)."""
    b, single = _frame_minor(llrs, graph.n_vars, "llrs")
    c, _ = _frame_minor(incoming, graph.edge_count, "incoming messages")
    out = np.empty_like(b)
    K.marginal_layer(b, c, graph.var_ptr, graph.var_edges, float(clip), out, b.shape[1])
    return _back(out, single)


# ---------------------------------------------------------------------------
# full decoder


@dataclass
class DecodeResult:
    hard: np.ndarray
    soft: np.ndarray
    iterations_used: int
    converged: bool


@dataclass
class BatchDecodeResult:
    hard: np.ndarray        # (B, N) uint8
    soft: np.ndarray        # (B, N)
    iterations_used: np.ndarray
    converged: np.ndarray

    def __len__(self):
        return self.hard.shape[0]

    def __getitem__(self, i) -> DecodeResult:
        return DecodeResult(self.hard[i], self.soft[i], int(self.iterations_used[i]),
                            bool(self.converged[i]))


def decode_batch(graph: TannerGraph, llrs, weights: DecoderWeights, clip: float = DEFAULT_CLIP,
                 early_exit: bool = True) -> BatchDecodeResult:
    """Decode each row of ``llrs``; see :func:`decode`."""
    llrs = np.ascontiguousarray(np.atleast_2d(llrs), dtype=float)
    if llrs.shape[1] != graph.n_vars:
        raise ValueError(f"expected frames of length {graph.n_vars}, got {llrs.shape[1]}")
    clip = clip_value(clip)
    alpha, beta, gamma, offset = weights.expand(graph)
    mode = K.MODE_BP if weights.scheme.kind is Kind.PLAIN_BP else K.MODE_MIN_SUM
    b = llrs.shape[0]
    soft = np.empty_like(llrs)
    iters = np.zeros(b, dtype=np.int64)
    conv = np.zeros(b, dtype=np.bool_)
    bad = K.decode_frames(llrs, graph.edge_var, graph.check_ptr, graph.var_ptr, graph.var_edges,
                          alpha, beta, gamma, offset, mode, float(clip), BP_EPS,
                          weights.scheme.t_max, early_exit, CHUNK, soft, iters, conv)
    if bad >= 0:
        raise DecodingDiverged(int(iters[bad]), int(bad))
    hard = (soft < 0).astype(np.uint8)
    return BatchDecodeResult(hard, soft, iters, conv)


def decode(graph: TannerGraph, llrs, weights: DecoderWeights, clip: float = DEFAULT_CLIP,
           early_exit: bool = True) -> DecodeResult:
    """Decode one frame of channel LLRs.

    Runs at most ``t_max`` flooding iterations and stops after the first
    iteration whose hard decision satisfies every check (unless
    ``early_exit`` is off).  ``clip=None`` disables message clipping.
    """
    llrs = np.asarray(llrs, dtype=float)
    if llrs.ndim != 1:
        raise ValueError("decode takes one frame; use decode_batch for batches")
    return decode_batch(graph, llrs[None, :], weights, clip, early_exit)[0]


def clip_value(clip: float | None) -> float:
    return math.inf if clip is None else float(clip)
