"""Toy-scale training with soft (expected-alignment) attention.

Cross entropy against label-smoothed targets, scheduled sampling on the
decoder inputs, plain gradient descent with optional momentum. Every
backward pass is hand-written; the test suite checks each parameter group
against central finite differences.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace

import numpy as np

from . import nn
from .attention import energies, energies_backward, initial_alpha, soft_step, soft_step_backward
from .data import FeatureSequence
from .encoder import encode_backward, encode_with_cache
from .model import ModelConfig, NeuralModel, save_checkpoint
from .vocab import Vocab

PARAM_GROUPS = {
    "encoder": ("enc",),
    "attention": ("att",),
    "decoder": ("dec", "emb"),
    "output": ("out",),
}


@dataclass(frozen=True)
class TrainConfig:
    label_smoothing: float = 0.2
    scheduled_sampling: float = 0.2
    learning_rate: float = 0.05
    epochs: int = 10
    batch_size: int = 8
    seed: int = 0
    momentum: float = 0.0
    reduction: str = "mean"  # batch reduction: mean | sum
    # Pre-sigmoid noise on selection energies during training. Expected
    # alignments only stay informative under noise if the energies saturate,
    # so this is what makes the learned selection usable by the hard scan.
    selection_noise_std: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must be in [0, 1)")
        if not 0.0 <= self.scheduled_sampling <= 1.0:
            raise ValueError("scheduled_sampling must be in [0, 1]")
        if self.reduction not in ("mean", "sum"):
            raise ValueError("reduction must be 'mean' or 'sum'")
        if self.selection_noise_std < 0:
            raise ValueError("selection_noise_std must be >= 0")


def smoothed_targets(target: int, vocab_size: int, epsilon: float) -> np.ndarray:
    q = np.full(vocab_size, epsilon / vocab_size)
    q[target] += 1.0 - epsilon
    return q


def forward_loss(
    cfg: ModelConfig,
    params: dict,
    features: FeatureSequence,
    reference: list[int],
    tcfg: TrainConfig,
    vocab: Vocab,
    rng: np.random.Generator | None = None,
):
    """Mean per-step cross entropy of one utterance. Returns (loss, cache).

    ``reference`` must start with BOS and end with EOS. With scheduled
    sampling an ``rng`` is required; the sampled tokens are recorded in the
    cache so backward treats them as constants.
    """
    if len(reference) < 2 or reference[0] != vocab.bos_id or reference[-1] != vocab.eos_id:
        raise ValueError("reference must be [BOS, ..., EOS]")
    if (tcfg.scheduled_sampling > 0 or tcfg.selection_noise_std > 0) and rng is None:
        raise ValueError("scheduled sampling and selection noise need an rng")
    H, enc_cache = encode_with_cache(params, cfg.encoder, features.frames)
    n_frames = H.shape[0]
    if n_frames == 0:
        raise ValueError("cannot train on an empty utterance")
    vocab_size = params["out.b"].size
    eps = tcfg.label_smoothing

    s = np.zeros(cfg.decoder_hidden)
    c = np.zeros(cfg.context_dim)
    alpha = initial_alpha(n_frames)
    prev = reference[0]
    steps = []
    total = 0.0
    n_steps = len(reference) - 1
    for i in range(1, len(reference)):
        x = np.concatenate([params["emb.E"][prev], c])
        s_new, gcache = nn.gru_step(params, "dec", x, s)
        e_sel, sel_cache = energies(params, "sel", s_new, H)
        u, chunk_cache = energies(params, "chunk", s_new, H)
        if rng is not None and tcfg.selection_noise_std > 0:
            e_sel = e_sel + rng.normal(0.0, tcfg.selection_noise_std, size=e_sel.shape)
        p = nn.sigmoid(e_sel)
        alpha_new, beta, soft_cache = soft_step(p, u, alpha, cfg.attention.chunk_size)
        c_new = beta @ H
        pre_out = np.concatenate([s_new, c_new])
        logits = params["out.W"] @ pre_out + params["out.b"]
        logp = nn.log_softmax(logits)
        q = smoothed_targets(reference[i], vocab_size, eps)
        total -= float(q @ logp)
        probs = np.exp(logp)
        steps.append(
            {
                "prev": prev,
                "gcache": gcache,
                "sel_cache": sel_cache,
                "chunk_cache": chunk_cache,
                "soft_cache": soft_cache,
                "beta": beta,
                "pre_out": pre_out,
                "probs": probs,
                "q": q,
            }
        )
        prev = reference[i]
        if i < n_steps and rng is not None and tcfg.scheduled_sampling > 0:
            if rng.random() < tcfg.scheduled_sampling:
                prev = int(rng.choice(vocab_size, p=probs / probs.sum()))
        s, c, alpha = s_new, c_new, alpha_new
    loss = total / n_steps
    if not math.isfinite(loss):
        raise FloatingPointError("non-finite training loss")
    cache = {"H": H, "enc_cache": enc_cache, "steps": steps, "n_steps": n_steps}
    return loss, cache


def backward(cfg: ModelConfig, params: dict, cache: dict) -> dict:
    """Gradients of forward_loss for every parameter tensor."""
    grads = nn.zero_grads(params)
    H = cache["H"]
    steps = cache["steps"]
    scale = 1.0 / cache["n_steps"]
    dH = np.zeros_like(H)
    ds_carry = np.zeros(cfg.decoder_hidden)
    dc_carry = np.zeros(cfg.context_dim)
    dalpha_carry = np.zeros(H.shape[0])
    for st in reversed(steps):
        dlogits = (st["probs"] - st["q"]) * scale
        grads["out.W"] += np.outer(dlogits, st["pre_out"])
        grads["out.b"] += dlogits
        dpre = params["out.W"].T @ dlogits
        ds = dpre[: cfg.decoder_hidden] + ds_carry
        dc = dpre[cfg.decoder_hidden :] + dc_carry
        dbeta = H @ dc
        dH += np.outer(st["beta"], dc)
        dp, du, dalpha_prev = soft_step_backward(st["soft_cache"], dalpha_carry, dbeta)
        dalpha_carry = dalpha_prev
        p = st["soft_cache"][0]
        de_sel = dp * p * (1.0 - p)
        dq_sel, dk_sel = energies_backward(params, "sel", st["sel_cache"], de_sel, grads)
        dq_chunk, dk_chunk = energies_backward(params, "chunk", st["chunk_cache"], du, grads)
        ds += dq_sel + dq_chunk
        dH += dk_sel + dk_chunk
        dx, ds_carry = nn.gru_step_backward(params, "dec", st["gcache"], ds, grads)
        grads["emb.E"][st["prev"]] += dx[: cfg.embed_dim]
        dc_carry = dx[cfg.embed_dim :]
    encode_backward(params, cfg.encoder, cache["enc_cache"], dH, grads)
    return grads


def corpus_loss(
    cfg: ModelConfig,
    params: dict,
    examples: list[tuple[FeatureSequence, list[int]]],
    tcfg: TrainConfig,
    vocab: Vocab,
) -> float:
    """Deterministic mean loss (scheduled sampling and selection noise off)."""
    plain = replace(tcfg, scheduled_sampling=0.0, selection_noise_std=0.0)
    losses = [forward_loss(cfg, params, f, r, plain, vocab)[0] for f, r in examples]
    return float(np.mean(losses))


def train(
    cfg: ModelConfig,
    params: dict,
    vocab: Vocab,
    examples: list[tuple[FeatureSequence, list[int]]],
    tcfg: TrainConfig,
    eval_examples: list[tuple[FeatureSequence, list[int]]] | None = None,
    checkpoint_dir: str | None = None,
    silence_aware: bool = False,
):
    """Gradient-descent training loop. Returns (params, history).

    Deterministic for a fixed seed. If the loss goes non-finite the loop
    aborts and the parameters from the last completed epoch are returned
    (matching the last checkpoint on disk).
    """
    if not examples:
        raise ValueError("empty training corpus")
    params = {k: v.copy() for k, v in params.items()}
    last_good = {k: v.copy() for k, v in params.items()}
    rng = np.random.default_rng(tcfg.seed)
    velocity = nn.zero_grads(params)
    history = {"train_loss": [], "eval_loss": [], "diverged": False}

    for epoch in range(tcfg.epochs):
        order = rng.permutation(len(examples))
        epoch_losses = []
        diverged = False
        for lo in range(0, len(order), tcfg.batch_size):
            batch = order[lo : lo + tcfg.batch_size]
            weight = 1.0 / len(batch) if tcfg.reduction == "mean" else 1.0
            batch_grads = nn.zero_grads(params)
            batch_loss = 0.0
            try:
                # saturating arithmetic is fine here; the explicit finiteness
                # check in forward_loss is the divergence detector
                with np.errstate(all="ignore"):
                    for idx in batch:
                        feats, ref = examples[int(idx)]
                        loss, cache = forward_loss(cfg, params, feats, ref, tcfg, vocab, rng=rng)
                        nn.add_grads(batch_grads, backward(cfg, params, cache), scale=weight)
                        batch_loss += loss * weight
            except FloatingPointError:
                diverged = True
                break
            if not math.isfinite(batch_loss):
                diverged = True
                break
            for k in params:
                velocity[k] = tcfg.momentum * velocity[k] + batch_grads[k]
                params[k] -= tcfg.learning_rate * velocity[k]
            epoch_losses.append(batch_loss)
        if diverged:
            history["diverged"] = True
            return last_good, history
        history["train_loss"].append(float(np.mean(epoch_losses)))
        if eval_examples:
            history["eval_loss"].append(corpus_loss(cfg, params, eval_examples, tcfg, vocab))
        last_good = {k: v.copy() for k, v in params.items()}
        if checkpoint_dir:
            os.makedirs(checkpoint_dir, exist_ok=True)
            model = NeuralModel(cfg, params, vocab, silence_aware=silence_aware)
            save_checkpoint(model, os.path.join(checkpoint_dir, f"epoch_{epoch:03d}.ckpt"))
    return params, history


def group_of(name: str) -> str:
    for group, prefixes in PARAM_GROUPS.items():
        if name.split(".")[0].startswith(prefixes):
            return group
    raise KeyError(f"parameter {name!r} belongs to no group")
