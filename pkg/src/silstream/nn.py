"""Small float64 neural-net primitives with hand-written backward passes.

Parameters live in flat ``dict[str, np.ndarray]`` maps keyed by dotted names
("enc0.Wz", "att.sel.v", ...). Gradients use the same keys, which makes
per-group finite-difference checks straightforward.
"""
from __future__ import annotations

import numpy as np

GRU_GATES = ("z", "r", "n")


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits)
    return shifted - np.log(np.sum(np.exp(shifted)))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits)
    ex = np.exp(shifted)
    return ex / np.sum(ex)


def glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    scale = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-scale, scale, size=(fan_out, fan_in))


def init_gru(params: dict, prefix: str, input_dim: int, hidden: int, rng: np.random.Generator):
    for g in GRU_GATES:
        params[f"{prefix}.W{g}"] = glorot(rng, hidden, input_dim)
        params[f"{prefix}.U{g}"] = glorot(rng, hidden, hidden)
        params[f"{prefix}.b{g}"] = np.zeros(hidden)


def gru_step(params: dict, prefix: str, x: np.ndarray, h: np.ndarray):
    """One GRU step. Returns (h_new, cache) with everything backward needs."""
    z = sigmoid(params[f"{prefix}.Wz"] @ x + params[f"{prefix}.Uz"] @ h + params[f"{prefix}.bz"])
    r = sigmoid(params[f"{prefix}.Wr"] @ x + params[f"{prefix}.Ur"] @ h + params[f"{prefix}.br"])
    uh = params[f"{prefix}.Un"] @ h
    n = np.tanh(params[f"{prefix}.Wn"] @ x + r * uh + params[f"{prefix}.bn"])
    h_new = (1.0 - z) * n + z * h
    return h_new, (x, h, z, r, uh, n)


def gru_step_backward(params: dict, prefix: str, cache, dh_new: np.ndarray, grads: dict):
    """Backward through one GRU step; accumulates into grads, returns (dx, dh)."""
    x, h, z, r, uh, n = cache
    dn = dh_new * (1.0 - z)
    dz = dh_new * (h - n)
    dh = dh_new * z

    dan = dn * (1.0 - n * n)
    grads[f"{prefix}.Wn"] += np.outer(dan, x)
    grads[f"{prefix}.bn"] += dan
    dx = params[f"{prefix}.Wn"].T @ dan
    dr = dan * uh
    danh = dan * r
    grads[f"{prefix}.Un"] += np.outer(danh, h)
    dh += params[f"{prefix}.Un"].T @ danh

    daz = dz * z * (1.0 - z)
    grads[f"{prefix}.Wz"] += np.outer(daz, x)
    grads[f"{prefix}.Uz"] += np.outer(daz, h)
    grads[f"{prefix}.bz"] += daz
    dx += params[f"{prefix}.Wz"].T @ daz
    dh += params[f"{prefix}.Uz"].T @ daz

    dar = dr * r * (1.0 - r)
    grads[f"{prefix}.Wr"] += np.outer(dar, x)
    grads[f"{prefix}.Ur"] += np.outer(dar, h)
    grads[f"{prefix}.br"] += dar
    dx += params[f"{prefix}.Wr"].T @ dar
    dh += params[f"{prefix}.Ur"].T @ dar
    return dx, dh


def zero_grads(params: dict) -> dict:
    return {k: np.zeros_like(v) for k, v in params.items()}


def add_grads(total: dict, part: dict, scale: float = 1.0) -> None:
    for k, v in part.items():
        total[k] += scale * v


def flatten_params(params: dict) -> np.ndarray:
    return np.concatenate([params[k].ravel() for k in sorted(params)])


def unflatten_params(vector: np.ndarray, template: dict) -> dict:
    out = {}
    offset = 0
    for k in sorted(template):
        size = template[k].size
        out[k] = vector[offset : offset + size].reshape(template[k].shape).copy()
        offset += size
    return out
