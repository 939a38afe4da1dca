"""Monotonic chunkwise attention.

Two modes share one parameterization:

* hard mode (inference): scan encoded frames left to right from the previous
  selection; the first frame whose selection probability crosses 0.5 is
  chosen, and a softmax over the chunk ending there yields the context.
* soft mode (training): expected-alignment recurrence over selection
  probabilities, followed by the induced chunkwise distribution.

Energies are additive (tanh) with a learned scalar offset on the selection
energy, initialized negative so early training attends broadly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn

SELECT_THRESHOLD = 0.5


@dataclass(frozen=True)
class AttentionConfig:
    chunk_size: int = 3
    energy_hidden: int = 16
    init_selection_bias: float = -1.0

    def __post_init__(self):
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")
        if self.energy_hidden < 1:
            raise ValueError("energy_hidden must be positive")


@dataclass
class AttentionState:
    prev_index: int = -1


@dataclass
class AttentionStepResult:
    status: str  # "selected" or "exhausted"
    context: np.ndarray | None = None
    selected_index: int = -1
    peak_index: int = -1
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    forced: bool = False


EXHAUSTED = AttentionStepResult(status="exhausted")


def init_attention_params(
    cfg: AttentionConfig, query_dim: int, key_dim: int, rng: np.random.Generator, params: dict | None = None
) -> dict:
    params = {} if params is None else params
    for name in ("sel", "chunk"):
        prefix = f"att.{name}"
        params[f"{prefix}.Wq"] = nn.glorot(rng, cfg.energy_hidden, query_dim)
        params[f"{prefix}.Wk"] = nn.glorot(rng, cfg.energy_hidden, key_dim)
        params[f"{prefix}.b"] = np.zeros(cfg.energy_hidden)
        params[f"{prefix}.v"] = nn.glorot(rng, 1, cfg.energy_hidden)[0]
    params["att.sel.r"] = np.array([cfg.init_selection_bias])
    return params


def energies(params: dict, kind: str, query: np.ndarray, keys: np.ndarray):
    """Additive energies of ``query`` against each key row. Returns (e, cache)."""
    prefix = f"att.{kind}"
    pre = keys @ params[f"{prefix}.Wk"].T + (params[f"{prefix}.Wq"] @ query + params[f"{prefix}.b"])
    act = np.tanh(pre)
    e = act @ params[f"{prefix}.v"]
    if kind == "sel":
        e = e + params["att.sel.r"][0]
    return e, (act, keys, query)


def energies_backward(params: dict, kind: str, cache, de: np.ndarray, grads: dict):
    """Accumulate parameter grads; returns (d_query, d_keys)."""
    prefix = f"att.{kind}"
    act, keys, query = cache
    de = np.asarray(de)
    if kind == "sel":
        grads["att.sel.r"][0] += de.sum()
    grads[f"{prefix}.v"] += de @ act
    dpre = (de[:, None] * params[f"{prefix}.v"][None, :]) * (1.0 - act * act)
    grads[f"{prefix}.Wk"] += dpre.T @ keys
    dsum = dpre.sum(axis=0)
    grads[f"{prefix}.Wq"] += np.outer(dsum, query)
    grads[f"{prefix}.b"] += dsum
    d_query = params[f"{prefix}.Wq"].T @ dsum
    d_keys = dpre @ params[f"{prefix}.Wk"]
    return d_query, d_keys


def selection_probability(params: dict, query: np.ndarray, key: np.ndarray) -> float:
    """Probability that hard attention stops on this single encoded frame."""
    e, _ = energies(params, "sel", query, np.asarray(key)[None, :])
    return float(nn.sigmoid(e)[0])


def first_selection(probs: np.ndarray) -> int:
    """Index of the first probability at or above the threshold, or -1."""
    hits = np.nonzero(np.asarray(probs) >= SELECT_THRESHOLD)[0]
    return int(hits[0]) if hits.size else -1


def chunk_attend(chunk_energies: np.ndarray, frames: np.ndarray, lo: int, t: int):
    """Softmax over frames [lo, t]; returns (context, weights, peak_index).

    Argmax ties resolve to the lowest index.
    """
    weights = nn.softmax(chunk_energies[lo : t + 1])
    context = weights @ frames[lo : t + 1]
    peak = lo + int(np.argmax(weights))
    return context, weights, peak


def mocha_infer_step(
    params: dict,
    cfg: AttentionConfig,
    query: np.ndarray,
    frames: np.ndarray,
    state: AttentionState,
    force: bool = False,
) -> AttentionStepResult:
    """Hard-mode step: monotonic scan then chunk softmax.

    ``force`` converts an exhausted scan into a forced step so decoding can
    always make progress (e.g. at finalization): the position pins to the
    last frame but the context is zero, mirroring what soft training
    produces when the expected alignment runs off the end of the input.
    """
    n = frames.shape[0]
    start = max(state.prev_index, 0)
    selected = -1
    if n > 0 and start < n:
        e, _ = energies(params, "sel", query, frames[start:])
        rel = first_selection(nn.sigmoid(e))
        if rel >= 0:
            selected = start + rel
    if selected < 0:
        if not force or n == 0 or state.prev_index >= n:
            return EXHAUSTED
        return AttentionStepResult(
            status="selected",
            context=np.zeros(frames.shape[1]),
            selected_index=n - 1,
            peak_index=n - 1,
            weights=np.zeros(0),
            forced=True,
        )
    lo = max(0, selected - cfg.chunk_size + 1)
    u, _ = energies(params, "chunk", query, frames)
    context, weights, peak = chunk_attend(u, frames, lo, selected)
    return AttentionStepResult(
        status="selected",
        context=context,
        selected_index=selected,
        peak_index=peak,
        weights=weights,
    )


def _moving_sum_back(x: np.ndarray, w: int) -> np.ndarray:
    """out[k] = sum of x[max(0, k-w+1) .. k]."""
    c = np.concatenate([[0.0], np.cumsum(x)])
    k = np.arange(len(x))
    return c[k + 1] - c[np.maximum(k - w + 1, 0)]


def _moving_sum_fwd(x: np.ndarray, w: int) -> np.ndarray:
    """out[j] = sum of x[j .. min(len-1, j+w-1)]."""
    c = np.concatenate([[0.0], np.cumsum(x)])
    j = np.arange(len(x))
    return c[np.minimum(j + w, len(x))] - c[j]


def soft_step(p: np.ndarray, u: np.ndarray, alpha_prev: np.ndarray, chunk_size: int):
    """Expected-alignment step.

    Given selection probabilities ``p``, chunk energies ``u`` and the previous
    step's expected alignment, returns (alpha, beta, cache). Mass that scans
    past the last frame is dropped, so sum(alpha) <= sum(alpha_prev).
    """
    n = len(p)
    q = np.empty(n)
    carry = 0.0
    for t in range(n):
        carry = (1.0 - p[t - 1]) * carry + alpha_prev[t] if t else alpha_prev[0]
        q[t] = carry
    alpha = p * q
    if chunk_size == 1:
        beta = alpha.copy()
        cache = (p, q, alpha, None, None, None, chunk_size)
        return alpha, beta, cache
    shift = np.max(u) if n else 0.0
    expu = np.exp(u - shift)
    denom = np.maximum(_moving_sum_back(expu, chunk_size), 1e-300)
    ratio = alpha / denom
    spread = _moving_sum_fwd(ratio, chunk_size)
    beta = expu * spread
    cache = (p, q, alpha, expu, denom, spread, chunk_size)
    return alpha, beta, cache


def soft_step_backward(cache, d_alpha: np.ndarray, d_beta: np.ndarray):
    """Backward of soft_step. Returns (dp, du, d_alpha_prev)."""
    p, q, alpha, expu, denom, spread, w = cache
    n = len(p)
    d_alpha = np.array(d_alpha, dtype=np.float64)
    if w == 1:
        d_alpha += d_beta
        du = np.zeros(n)
    else:
        d_expu = d_beta * spread
        d_spread = d_beta * expu
        d_ratio = _moving_sum_back(d_spread, w)
        d_alpha += d_ratio / denom
        d_denom = -d_ratio * alpha / (denom * denom)
        d_expu += _moving_sum_fwd(d_denom, w)
        du = d_expu * expu
    dp = d_alpha * q
    dq = d_alpha * p
    d_alpha_prev = np.zeros(n)
    for t in range(n - 1, -1, -1):
        d_alpha_prev[t] += dq[t]
        if t:
            dp[t - 1] -= q[t - 1] * dq[t]
            dq[t - 1] += (1.0 - p[t - 1]) * dq[t]
    return dp, du, d_alpha_prev


def mocha_train_weights(
    sel_energies: np.ndarray,
    chunk_energies: np.ndarray,
    alpha_prev: np.ndarray,
    chunk_size: int,
):
    """Soft-mode weights for one decoding step from raw energies."""
    if not (np.all(np.isfinite(sel_energies)) and np.all(np.isfinite(chunk_energies))):
        raise ValueError("non-finite attention energies")
    alpha, beta, _ = soft_step(nn.sigmoid(sel_energies), chunk_energies, alpha_prev, chunk_size)
    return alpha, beta


def initial_alpha(n: int) -> np.ndarray:
    """Expected alignment before the first output step: all mass at frame 0."""
    a = np.zeros(n)
    if n:
        a[0] = 1.0
    return a
