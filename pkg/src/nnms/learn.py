"""Training the weighted min-sum decoders.

The decoder is unrolled over all ``T`` iterations (no early exit) and every
activation is kept, so gradients can be propagated back by hand.  Gradients
follow these subgradient conventions: a minimum passes its gradient only to
the arg-min edge (ties go to the lowest edge id), the sign product is a
constant, and clipped values pass nothing.  Weights are trained in raw form
and mapped through softplus, whose derivative is the logistic sigmoid.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import _kernels as K
from .decode import (DEFAULT_CLIP, DecoderWeights, DecodingDiverged, Kind, WeightScheme,
                     clip_value)
from .tanner import Code, TannerGraph
from .traindata import MixtureSpec, mixture_moments, sample_approx_batch, sample_blended_batch

P_EPS = 1e-12
SUB_BATCH = 64  # frames per forward/backward kernel call


class TrainingDiverged(ArithmeticError):
    def __init__(self, step: int, weights: DecoderWeights):
        super().__init__(f"training diverged at step {step}")
        self.step = step
        self.weights = weights


# ---------------------------------------------------------------------------
# forward


@dataclass
class UnrolledTrace:
    """Activations of one unrolled pass, frame-minor (``[layer, edge, frame]``).

    ``idx1``/``idx2`` hold, per check and frame, the edges carrying the
    smallest and second smallest magnitude and ``par`` the parity of the
    signs; together they give the arg-min edge and sign product of every
    exclusion set.
    """

    llrs: np.ndarray          # (N, B)
    u: np.ndarray             # (T, E, B) v->c
    c: np.ndarray             # (T, E, B) c->v
    idx1: np.ndarray          # (T, M, B)
    idx2: np.ndarray
    par: np.ndarray
    x: np.ndarray             # (T, N, B) marginals
    clip: float
    scheme: WeightScheme

    @property
    def t_max(self) -> int:
        return self.u.shape[0]

    @property
    def batch_size(self) -> int:
        return self.llrs.shape[1]

    @property
    def soft(self) -> np.ndarray:
        """Per-layer marginals as ``(T, B, N)``."""
        return np.ascontiguousarray(self.x.transpose(0, 2, 1))


def _require_min_sum(scheme: WeightScheme) -> None:
    if scheme.kind is Kind.PLAIN_BP:
        raise ValueError("the unrolled pass covers the min-sum family only")


def _fits(tr: UnrolledTrace | None, shape: tuple) -> bool:
    return tr is not None and (tr.u.shape, tr.idx1.shape, tr.x.shape) == shape


def forward_unrolled(graph: TannerGraph, llrs, weights: DecoderWeights,
                     clip: float | None = DEFAULT_CLIP,
                     reuse: UnrolledTrace | None = None) -> UnrolledTrace:
    """Run all ``T`` layers on a batch (rows are frames) and keep every activation.

    Passing a previous trace of the same shape as ``reuse`` recycles its
    buffers (its contents are overwritten).
    """
    _require_min_sum(weights.scheme)
    llrs = np.atleast_2d(np.asarray(llrs, dtype=float))
    if llrs.shape[1] != graph.n_vars:
        raise ValueError(f"expected frames of length {graph.n_vars}, got {llrs.shape[1]}")
    clip = clip_value(clip)
    alpha, beta, gamma, offset = weights.expand(graph)
    t, e, m, n = weights.scheme.t_max, graph.edge_count, graph.n_checks, graph.n_vars
    nb = llrs.shape[0]
    b = np.ascontiguousarray(llrs.T)
    if _fits(reuse, ((t, e, nb), (t, m, nb), (t, n, nb))):
        tr = reuse
        tr.llrs, tr.clip, tr.scheme = b, clip, weights.scheme
    else:
        tr = UnrolledTrace(
            b, np.empty((t, e, nb)), np.empty((t, e, nb)),
            np.empty((t, m, nb), dtype=np.int32), np.empty((t, m, nb), dtype=np.int32),
            np.empty((t, m, nb), dtype=np.bool_), np.empty((t, n, nb)), clip, weights.scheme)
    bad = K.forward(b, graph.edge_var, graph.check_ptr, graph.var_ptr, graph.var_edges,
                    alpha, beta, gamma, offset, clip, tr.u, tr.c, tr.idx1, tr.idx2, tr.par, tr.x)
    if bad >= 0:
        raise DecodingDiverged(bad + 1)
    return tr


# ---------------------------------------------------------------------------
# loss


@dataclass(frozen=True)
class LossConfig:
    rho: float = 0.2
    kappa: float = 100.0

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")


def _correct_prob(soft, labels):
    soft = np.asarray(soft, dtype=float)
    if soft.ndim == 2:
        soft = soft[:, None, :]
    labels = np.broadcast_to(np.asarray(labels), soft.shape[1:])
    sign = np.where(labels == 0, 1.0, -1.0)
    return expit(sign * soft), sign, soft.ndim


def loss_terms(soft, labels, cfg: LossConfig = LossConfig()) -> tuple[float, float, float]:
    """``(loss, ce, mse)`` for per-layer marginals ``soft`` of shape ``(T, B, N)``.

    ``p(bit = 0) = sigmoid(x)``.  The cross entropy averages over all ``T``
    layers, frames and bits; the squared term scores the last layer's
    correct-bit probability against 1.
    """
    pc, _, _ = _correct_prob(soft, labels)
    ce = float(-np.mean(np.log(np.clip(pc, P_EPS, 1.0 - P_EPS))))
    mse = float(np.mean((pc[-1] - 1.0) ** 2))
    return cfg.rho * ce + (1.0 - cfg.rho) * cfg.kappa * mse, ce, mse


def loss_hybrid(soft, labels, cfg: LossConfig = LossConfig()) -> float:
    return loss_terms(soft, labels, cfg)[0]


def loss_grad(soft, labels, cfg: LossConfig = LossConfig()) -> tuple[float, np.ndarray]:
    """Hybrid loss and its gradient with respect to ``soft`` (same shape)."""
    pc, sign, ndim = _correct_prob(soft, labels)
    t, b, n = pc.shape
    inside = (pc > P_EPS) & (pc < 1.0 - P_EPS)
    # d(-log pc)/dx = -sign (1 - pc) where the clamp is inactive
    g = np.where(inside, -sign * (1.0 - pc), 0.0) * (cfg.rho / (t * b * n))
    g[-1] += (1.0 - cfg.rho) * cfg.kappa * (2.0 / (b * n)) * (pc[-1] - 1.0) * sign * pc[-1] * (1.0 - pc[-1])
    loss = loss_hybrid(soft, labels, cfg)
    return loss, (g if ndim == 3 else g[:, 0, :])


# ---------------------------------------------------------------------------
# backward


def effective_grads(graph: TannerGraph, trace: UnrolledTrace, weights: DecoderWeights, g_soft):
    """Gradients with respect to the effective ``alpha (T,N)``, ``beta (T,E)``, ``gamma (T,E)``."""
    if weights.scheme != trace.scheme:
        raise ValueError("trace was produced with a different weight scheme")
    t, nb = trace.t_max, trace.batch_size
    g_soft = np.asarray(g_soft, dtype=float)
    if g_soft.shape != (t, nb, graph.n_vars):
        raise ValueError(f"upstream gradient must have shape {(t, nb, graph.n_vars)}")
    _, beta, gamma, offset = weights.expand(graph)
    gx = np.ascontiguousarray(g_soft.transpose(0, 2, 1))
    g_alpha = np.zeros((t, graph.n_vars))
    g_beta = np.zeros((t, graph.edge_count))
    g_gamma = np.zeros((t, graph.edge_count))
    K.backward(trace.llrs, graph.check_ptr, graph.var_ptr, graph.var_edges, beta, gamma,
               offset, trace.clip, trace.u, trace.c, trace.idx1, trace.idx2, trace.par,
               trace.x, gx, g_alpha, g_beta, g_gamma, weights.scheme.kind is Kind.ANNMS)
    return g_alpha, g_beta, g_gamma


def raw_grad(weights: DecoderWeights, g_alpha, g_beta, g_gamma) -> np.ndarray:
    """Collapse effective-weight gradients onto the shared raw parameters."""
    kind = weights.scheme.kind
    if kind is Kind.UNNMS:
        g = np.array([g_gamma.sum()])
    elif kind is Kind.SNNMS:
        g = g_gamma.sum(axis=1)
    elif kind is Kind.ANNMS:
        g = np.concatenate([g_alpha.ravel(), g_beta.ravel(), g_gamma.ravel()])
    else:
        return np.zeros(0)
    return g * expit(weights.raw)


def backward(graph: TannerGraph, trace: UnrolledTrace, g_soft, weights: DecoderWeights) -> np.ndarray:
    """Gradient of the loss with respect to the raw weights.

    ``g_soft`` is dL/dx for every layer, ``(T, B, N)`` as from :func:`loss_grad`.
    """
    return raw_grad(weights, *effective_grads(graph, trace, weights, g_soft))


@dataclass
class StepResult:
    loss: float
    grad: np.ndarray
    ber: float
    fer: float


def loss_and_grad(graph: TannerGraph, llrs, labels, weights: DecoderWeights,
                  cfg: LossConfig = LossConfig(), clip: float | None = DEFAULT_CLIP,
                  sub_batch: int = SUB_BATCH, workspace: dict | None = None) -> StepResult:
    """Batch loss, raw gradient and last-layer BER/FER.

    The batch runs through the kernels in slices of ``sub_batch`` frames;
    gradients are added slice by slice in a fixed order.  A dict passed as
    ``workspace`` keeps trace buffers alive between calls.
    """
    workspace = {} if workspace is None else workspace
    llrs = np.atleast_2d(np.asarray(llrs, dtype=float))
    labels = np.broadcast_to(np.asarray(labels, dtype=np.uint8), llrs.shape)
    nb = llrs.shape[0]
    t = weights.scheme.t_max
    grads = [np.zeros((t, graph.n_vars)), np.zeros((t, graph.edge_count)),
             np.zeros((t, graph.edge_count))]
    soft_last = np.empty_like(llrs)
    per_slice = []
    for lo in range(0, nb, sub_batch):
        hi = min(lo + sub_batch, nb)
        tr = forward_unrolled(graph, llrs[lo:hi], weights, clip, workspace.get(hi - lo))
        workspace[hi - lo] = tr
        soft = tr.soft
        soft_last[lo:hi] = soft[-1]
        # the gradient of a batch mean is the slice gradient rescaled
        _, g = loss_grad(soft, labels[lo:hi], cfg)
        g *= (hi - lo) / nb
        for acc, part in zip(grads, effective_grads(graph, tr, weights, g)):
            acc += part
        per_slice.append(soft)
    loss = loss_hybrid(np.concatenate(per_slice, axis=1), labels, cfg)
    errs = (soft_last < 0).astype(np.uint8) != labels
    return StepResult(loss, raw_grad(weights, *grads), float(errs.mean()),
                      float(errs.any(axis=1).mean()))


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr0: float = 0.002
    decay_rate: float = 0.95
    decay_steps: int = 400
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    staircase: bool = False

    @classmethod
    def for_params(cls, n: int, **kw) -> "OptimizerState":
        return cls(np.zeros(n), np.zeros(n), **kw)

    def lr(self, step: int | None = None) -> float:
        s = self.step if step is None else step
        e = s // self.decay_steps if self.staircase else s / self.decay_steps
        return self.lr0 * self.decay_rate ** e


def lr_schedule(step: int, lr0: float = 0.002, decay_rate: float = 0.95, decay_steps: int = 400) -> float:
    return lr0 * decay_rate ** (step / decay_steps)


def adam_step(state: OptimizerState, raw: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """One bias-corrected Adam update at rate ``lr(state.step)``; returns new raw weights."""
    grads = np.asarray(grads, dtype=float)
    if grads.shape != raw.shape or state.m.shape != raw.shape:
        raise ValueError("gradient, weight and moment shapes differ")
    if not np.all(np.isfinite(grads)):
        raise FloatingPointError(f"non-finite gradient at step {state.step}")
    lr = state.lr()
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    k = state.step + 1
    m_hat = state.m / (1.0 - state.beta1 ** k)
    v_hat = state.v / (1.0 - state.beta2 ** k)
    state.step = k
    return raw - lr * m_hat / (np.sqrt(v_hat) + state.eps)


# ---------------------------------------------------------------------------
# training loop


@dataclass(frozen=True)
class TrainSettings:
    """Minibatch plan: ``batches`` distinct minibatches replayed for ``epochs`` passes."""

    batches: int
    batch_size: int
    epochs: int
    t_max: int
    snr_lo_db: float
    snr_hi_db: float
    n_points: int | None = 5
    blended: bool = False
    plateau_window: int = 200
    plateau_tol: float = 1e-3
    plateau_patience: int = 3
    snapshot_every: int = 400

    def __post_init__(self):
        if self.batches < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batches and batch_size must be >= 1, epochs >= 0")
        if self.blended and self.n_points is None:
            raise ValueError("blended sampling needs a finite number of SNR points")

    @property
    def total_steps(self) -> int:
        return self.batches * self.epochs

    def mixture(self, code: Code) -> MixtureSpec:
        return MixtureSpec(self.snr_lo_db, self.snr_hi_db, self.n_points, code.params)


# published per-code training settings; codes A and C are not bundled but their settings are kept
PRESETS = {
    "A": TrainSettings(2000, 64, 6, 20, 3.2, 3.8),
    "B": TrainSettings(2000, 64, 6, 10, 2.8, 3.2),
    "C": TrainSettings(2000, 32, 6, 20, 1.8, 2.4),
}


@dataclass
class TrainReport:
    loss: list = field(default_factory=list)
    ber: list = field(default_factory=list)
    fer: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)
    weights: DecoderWeights | None = None
    stopped: str = "end of feeding"

    @property
    def steps(self) -> int:
        return len(self.loss)

    def records(self):
        for i in range(self.steps):
            yield {"step": i, "lr": self.lr[i], "loss": self.loss[i], "ber": self.ber[i],
                   "fer": self.fer[i]}

    def jsonl(self) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.records())


def plateau_reached(losses, window: int, tol: float, patience: int) -> bool:
    """True once ``patience`` consecutive window means moved by less than ``tol`` (relative)."""
    full = len(losses) // window
    if full < patience + 1:
        return False
    means = np.asarray(losses[: full * window]).reshape(full, window).mean(axis=1)
    rel = np.abs(np.diff(means[-(patience + 1):])) / np.maximum(np.abs(means[-(patience + 1):-1]), 1e-300)
    return bool(np.all(rel < tol))


def train(code: Code, scheme: WeightScheme, settings: TrainSettings, seed: int = 0,
          cfg: LossConfig = LossConfig(), clip: float | None = DEFAULT_CLIP,
          mixture: MixtureSpec | None = None, on_step=None, on_snapshot=None) -> TrainReport:
    """Train from all-ones effective weights.

    Minibatch ``i`` is drawn from ``(seed, i)`` and the same minibatches are
    replayed every epoch.  Stops at the end of feeding or when the loss
    plateaus.  ``on_step(step, record)`` is called after every update and
    ``on_snapshot(step, raw)`` whenever the weights are snapshotted.
    """
    if not scheme.kind.trainable:
        raise ValueError(f"{scheme.kind.value} has no trainable weights")
    if scheme.t_max != settings.t_max:
        scheme = WeightScheme(scheme.kind, settings.t_max, scheme.factor)
    graph = code.graph
    weights = DecoderWeights.initial(scheme, graph)
    spec = mixture or settings.mixture(code)
    moments = None if settings.blended else mixture_moments(spec)
    opt = OptimizerState.for_params(weights.raw.size)
    report = TrainReport(weights=weights)
    workspace = {}
    for step in range(settings.total_steps):
        idx = step % settings.batches
        if settings.blended:
            batch = sample_blended_batch(spec, settings.batch_size, seed, idx)
        else:
            batch = sample_approx_batch(moments, settings.batch_size, graph.n_vars, seed, idx)
        if step % settings.snapshot_every == 0:
            report.snapshots[step] = weights.raw.tolist()
            if on_snapshot is not None:
                on_snapshot(step, weights.raw)
        try:
            res = loss_and_grad(graph, batch.llrs, batch.labels, weights, cfg, clip,
                                workspace=workspace)
            if not math.isfinite(res.loss):
                raise FloatingPointError("loss is not finite")
            lr = opt.lr()
            raw = adam_step(opt, weights.raw, res.grad)
        except (DecodingDiverged, FloatingPointError) as exc:
            raise TrainingDiverged(step, weights) from exc
        report.loss.append(res.loss)
        report.ber.append(res.ber)
        report.fer.append(res.fer)
        report.lr.append(lr)
        weights = DecoderWeights(scheme, raw)
        report.weights = weights
        if on_step is not None:
            on_step(step, {"step": step, "lr": lr, "loss": res.loss, "ber": res.ber, "fer": res.fer})
        if plateau_reached(report.loss, settings.plateau_window, settings.plateau_tol,
                           settings.plateau_patience):
            report.stopped = "loss plateau"
            break
    report.snapshots[report.steps] = weights.raw.tolist()
    if on_snapshot is not None:
        on_snapshot(report.steps, weights.raw)
    return report


# ---------------------------------------------------------------------------
# verification


@dataclass
class GradCheck:
    max_rel_err: float
    analytic: np.ndarray
    numeric: np.ndarray
    refined: int = 0  # parameters whose step was shrunk to stay off a kink


def rel_err(a, b, floor: float = 1e-8) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def _routing(trace: UnrolledTrace) -> tuple:
    # everything that selects a smooth piece: winners, sign parities, clip masks
    return (trace.idx1, trace.idx2, trace.par, np.abs(trace.u) >= trace.clip,
            np.abs(trace.x) >= trace.clip)


def _same_piece(r1: tuple, r2: tuple) -> bool:
    return all(np.array_equal(a, b) for a, b in zip(r1, r2))


def grad_check(code: Code, scheme: WeightScheme, n_frames: int = 100, seed: int = 0,
               snr_db: float = 2.0, h: float = 1e-4, cfg: LossConfig = LossConfig(),
               clip: float | None = DEFAULT_CLIP, spread: float = 0.3,
               min_h: float = 1e-8) -> GradCheck:
    """Compare the analytic raw gradient with central finite differences.

    Raw weights are drawn around the unit value (``spread`` wide) so that the
    check does not sit on the symmetric all-ones point.  The loss is only
    piecewise smooth (min selections, sign parities, clipping), so when the
    points ``raw +- h`` fall on a different piece than ``raw`` the step for
    that parameter is divided by 10 until they agree.  Central differences
    at ``h`` and ``h/2`` are combined into the fourth-order stencil, since
    plain second-order truncation error alone can reach 1e-4 relative on
    strongly curved pieces.
    """
    from .channel import SnrPoint, transmit_all_zero
    graph = code.graph
    rng = np.random.default_rng(seed)
    w0 = DecoderWeights.initial(scheme, graph)
    w = DecoderWeights(scheme, w0.raw + spread * rng.uniform(-1.0, 1.0, w0.raw.size))
    batch = transmit_all_zero(SnrPoint(snr_db, code.params), n_frames, seed, stream=1)
    analytic = loss_and_grad(graph, batch.llrs, batch.labels, w, cfg, clip).grad
    base = _routing(forward_unrolled(graph, batch.llrs, w, clip))

    def probe(raw):
        tr = forward_unrolled(graph, batch.llrs, DecoderWeights(scheme, raw), clip)
        return loss_hybrid(tr.soft, batch.labels, cfg), _routing(tr)

    def central(k, step):
        out, pieces = [], []
        for d in (step, -step):
            r = w.raw.copy()
            r[k] += d
            f, piece = probe(r)
            out.append(f)
            pieces.append(piece)
        return (out[0] - out[1]) / (2.0 * step), pieces

    numeric = np.empty_like(analytic)
    refined = 0
    for k in range(w.raw.size):
        step = h
        while True:
            d_full, p_full = central(k, step)
            d_half, p_half = central(k, step / 2)
            if all(_same_piece(base, r) for r in p_full + p_half) or step / 10 < min_h:
                break
            step /= 10
        refined += step != h
        # fourth-order stencil: the h^2 error terms of the two central differences cancel
        numeric[k] = (4.0 * d_half - d_full) / 3.0
    err = rel_err(analytic, numeric)
    return GradCheck(float(err.max()) if err.size else 0.0, analytic, numeric, refined)
