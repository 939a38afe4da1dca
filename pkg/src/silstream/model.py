"""The trainable encoder-attention-decoder model and its checkpoint format.

Any object with the same surface (``vocab``, ``total_reduction``,
``silence_aware``, ``encoder_reset/push/finish``, ``decode_start``,
``decode_step``) can drive the decoder and streamer; the synthetic oracle
implements it too, so decoding machinery cannot tell them apart.
"""
from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .attention import AttentionConfig, AttentionState, AttentionStepResult, init_attention_params, mocha_infer_step
from .encoder import EncoderConfig, PyramidalEncoder, init_encoder_params
from .vocab import Vocab

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    decoder_hidden: int = 32
    embed_dim: int = 8

    @property
    def context_dim(self) -> int:
        return self.encoder.proj

    @property
    def decoder_input_dim(self) -> int:
        return self.embed_dim + self.context_dim

    @property
    def output_input_dim(self) -> int:
        return self.decoder_hidden + self.context_dim


def init_params(cfg: ModelConfig, vocab_size: int, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    init_encoder_params(cfg.encoder, rng, params)
    init_attention_params(cfg.attention, cfg.decoder_hidden, cfg.encoder.proj, rng, params)
    nn.init_gru(params, "dec", cfg.decoder_input_dim, cfg.decoder_hidden, rng)
    params["emb.E"] = rng.normal(0.0, 0.1, size=(vocab_size, cfg.embed_dim))
    params["out.W"] = nn.glorot(rng, vocab_size, cfg.output_input_dim)
    params["out.b"] = np.zeros(vocab_size)
    return params


@dataclass
class StepOutput:
    """Result of expanding one hypothesis by one decoding step."""

    log_probs: np.ndarray | None
    dec_state: object
    att: AttentionStepResult

    @property
    def stalled(self) -> bool:
        return self.att.status == "exhausted"


class NeuralModel:
    """Wraps a parameter dict behind the shared decoding interface."""

    def __init__(self, cfg: ModelConfig, params: dict, vocab: Vocab, silence_aware: bool = False):
        if params["emb.E"].shape[0] != vocab.size:
            raise ValueError("embedding table does not match vocabulary size")
        self.cfg = cfg
        self.params = params
        self.vocab = vocab
        self.silence_aware = silence_aware
        self._encoder = PyramidalEncoder(cfg.encoder, params)

    @property
    def total_reduction(self) -> int:
        return self.cfg.encoder.total_reduction

    def encoder_reset(self):
        return self._encoder.reset()

    def encoder_push(self, enc_state, frames: np.ndarray) -> np.ndarray:
        return self._encoder.push(enc_state, frames)

    def encoder_finish(self, enc_state) -> np.ndarray:
        return self._encoder.finish(enc_state)

    def encode(self, frames: np.ndarray) -> np.ndarray:
        return self._encoder.encode(frames)

    def decode_start(self):
        return (np.zeros(self.cfg.decoder_hidden), np.zeros(self.cfg.context_dim))

    def decode_step(
        self,
        dec_state,
        prev_token: int,
        frames: np.ndarray,
        att_state: AttentionState,
        buffer_complete: bool,
        force: bool = False,
    ) -> StepOutput:
        s, c_prev = dec_state
        x = np.concatenate([self.params["emb.E"][prev_token], c_prev])
        s_new, _ = nn.gru_step(self.params, "dec", x, s)
        att = mocha_infer_step(self.params, self.cfg.attention, s_new, frames, att_state, force=force)
        if att.status == "exhausted":
            return StepOutput(log_probs=None, dec_state=dec_state, att=att)
        logits = self.params["out.W"] @ np.concatenate([s_new, att.context]) + self.params["out.b"]
        return StepOutput(
            log_probs=nn.log_softmax(logits),
            dec_state=(s_new, att.context),
            att=att,
        )


def _config_payload(cfg: ModelConfig) -> dict:
    return {
        "encoder": {
            "num_layers": cfg.encoder.num_layers,
            "input_dim": cfg.encoder.input_dim,
            "hidden": cfg.encoder.hidden,
            "proj": cfg.encoder.proj,
            "reduction": cfg.encoder.reduction,
        },
        "attention": {
            "chunk_size": cfg.attention.chunk_size,
            "energy_hidden": cfg.attention.energy_hidden,
            "init_selection_bias": cfg.attention.init_selection_bias,
        },
        "decoder_hidden": cfg.decoder_hidden,
        "embed_dim": cfg.embed_dim,
    }


def _config_from_payload(payload: dict) -> ModelConfig:
    return ModelConfig(
        encoder=EncoderConfig(**payload["encoder"]),
        attention=AttentionConfig(**payload["attention"]),
        decoder_hidden=payload["decoder_hidden"],
        embed_dim=payload["embed_dim"],
    )


def _checkpoint_body(model: NeuralModel) -> dict:
    tensors = {
        name: {
            "shape": list(arr.shape),
            "data": base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii"),
        }
        for name, arr in sorted(model.params.items())
    }
    return {
        "version": CHECKPOINT_VERSION,
        "config": _config_payload(model.cfg),
        "vocab": list(model.vocab.tokens),
        "silence_aware": model.silence_aware,
        "tensors": tensors,
    }


def save_checkpoint(model: NeuralModel, path: str) -> None:
    body = _checkpoint_body(model)
    digest = hashlib.sha256(json.dumps(body, sort_keys=True).encode("utf-8")).hexdigest()
    with open(path, "w", encoding="utf-8") as f:
        json.dump({"checksum": digest, **body}, f, indent=1)


def load_checkpoint(path: str) -> NeuralModel:
    with open(path, encoding="utf-8") as f:
        payload = json.load(f)
    stored = payload.pop("checksum", None)
    digest = hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()
    if stored != digest:
        raise ValueError(f"{path}: checkpoint checksum mismatch")
    if payload["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {payload['version']}")
    cfg = _config_from_payload(payload["config"])
    params = {}
    for name, spec in payload["tensors"].items():
        flat = np.frombuffer(base64.b64decode(spec["data"]), dtype="<f8")
        params[name] = flat.reshape(spec["shape"]).astype(np.float64).copy()
    vocab = Vocab(tuple(payload["vocab"]))
    return NeuralModel(cfg, params, vocab, silence_aware=payload["silence_aware"])
