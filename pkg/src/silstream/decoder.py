"""Asynchronous beam-search decoding over a (possibly partial) encoded buffer.

Decoding is asynchronous: it terminates by emitting the end symbol, not by
exhausting input, so online operation needs explicit policies for end
symbols that arrive while audio is still streaming:

* ``accept``: take the end symbol at face value (the failure-prone baseline);
  when every hypothesis stalls for lack of selectable frames, the baseline
  still takes one forced step per batch at the buffer edge.
* ``restart``: accept it, log a restart, and begin a fresh hypothesis once
  the next batch arrives; segment outputs are concatenated. The restarted
  hypothesis attaches at the live edge of the stream, so audio arriving
  within the one-batch restart window is never decoded.
* ``defer``: while a silence-aware model still has audio ahead, the end
  symbol may not finish a hypothesis at all.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .attention import AttentionState, AttentionStepResult
from .data import FeatureSequence, ms_to_encoded_frames, ms_to_frames
from .model import StepOutput
from .vocab import Vocab, strip_nonscoring

EOS_POLICIES = ("defer", "restart", "accept")


@dataclass(frozen=True)
class BeamConfig:
    beam_size: int = 8
    cap_base: int = 8
    cap_per_frame: int = 2
    eos_policy: str = "defer"

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.cap_base < 1 or self.cap_per_frame < 0:
            raise ValueError("token cap must be positive")
        if self.eos_policy not in EOS_POLICIES:
            raise ValueError(f"eos_policy must be one of {EOS_POLICIES}")

    def max_tokens(self, encoded_frames: int) -> int:
        return self.cap_base + self.cap_per_frame * encoded_frames


class EncodedBuffer:
    """Append-only store of encoded frames shared by all hypotheses."""

    def __init__(self, total_reduction: int, frame_shift_ms: int):
        self.total_reduction = total_reduction
        self.frame_shift_ms = frame_shift_ms
        self._array: np.ndarray | None = None

    def append(self, encoded: np.ndarray) -> None:
        if encoded.size == 0:
            return
        self._array = encoded.copy() if self._array is None else np.vstack([self._array, encoded])

    def __len__(self) -> int:
        return 0 if self._array is None else self._array.shape[0]

    @property
    def array(self) -> np.ndarray:
        return np.zeros((0, 0)) if self._array is None else self._array

    @property
    def ms_per_frame(self) -> int:
        return self.frame_shift_ms * self.total_reduction


@dataclass(frozen=True)
class Emission:
    token: int
    selected_index: int
    peak_index: int
    clock_ms: float
    log_prob: float
    forced: bool = False


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    log_score: float
    dec_state: object
    att_state: AttentionState
    finished: bool = False
    runaway: bool = False
    timeline: tuple[Emission, ...] = ()

    @property
    def emitted(self) -> int:
        return len(self.tokens) - 1


def initial_hypothesis(model, prev_index: int = -1) -> Hypothesis:
    return Hypothesis(
        tokens=(model.vocab.bos_id,),
        log_score=0.0,
        dec_state=model.decode_start(),
        att_state=AttentionState(prev_index=prev_index),
    )


def _finish_runaway(hyp: Hypothesis, eos_id: int, clock_ms: float) -> Hypothesis:
    em = Emission(eos_id, hyp.att_state.prev_index, hyp.att_state.prev_index, clock_ms, 0.0, forced=True)
    return replace(hyp, tokens=hyp.tokens + (eos_id,), finished=True, runaway=True,
                   timeline=hyp.timeline + (em,))


def decode_step(
    model,
    beam: list[Hypothesis],
    buffer: EncodedBuffer,
    buffer_complete: bool,
    cfg: BeamConfig,
    clock_ms: float = 0.0,
    force: bool = False,
    block_eos: bool = False,
) -> tuple[list[Hypothesis], list[AttentionStepResult | None]]:
    """Expand every live hypothesis by one token.

    Hypotheses whose attention cannot select a frame yet are kept as-is
    (stalled, signalled through the returned attention results) rather than
    dropped. ``force`` converts such stalls into a forced selection of the
    last frame so decoding can always make progress at finalization.
    """
    if not beam:
        raise ValueError("empty beam")
    eos_id = model.vocab.eos_id
    cap = cfg.max_tokens(len(buffer))
    kept: list[tuple[Hypothesis, AttentionStepResult | None]] = []
    expansions: list[tuple[Hypothesis, AttentionStepResult]] = []
    for hyp in beam:
        if hyp.finished:
            kept.append((hyp, None))
            continue
        if hyp.emitted >= cap:
            kept.append((_finish_runaway(hyp, eos_id, clock_ms), None))
            continue
        out: StepOutput = model.decode_step(
            hyp.dec_state, hyp.tokens[-1], buffer.array, hyp.att_state, buffer_complete, force=force
        )
        if out.stalled:
            kept.append((hyp, out.att))
            continue
        order = np.argsort(-out.log_probs, kind="stable")[: cfg.beam_size + 1]
        taken = 0
        for token in order:
            token = int(token)
            if block_eos and token == eos_id:
                continue
            em = Emission(token, out.att.selected_index, out.att.peak_index, clock_ms,
                          float(out.log_probs[token]), forced=out.att.forced)
            expansions.append((
                Hypothesis(
                    tokens=hyp.tokens + (token,),
                    log_score=hyp.log_score + float(out.log_probs[token]),
                    dec_state=out.dec_state,
                    att_state=AttentionState(prev_index=out.att.selected_index),
                    finished=token == eos_id,
                    runaway=hyp.runaway,
                    timeline=hyp.timeline + (em,),
                ),
                out.att,
            ))
            taken += 1
            if taken >= cfg.beam_size:
                break
    expansions.sort(key=lambda pair: -pair[0].log_score)
    merged = kept + expansions[: max(0, cfg.beam_size - len(kept))]
    new_beam = [h for h, _ in merged]
    att_results = [a for _, a in merged]
    return new_beam, att_results


def best_hypothesis(beam: list[Hypothesis]) -> Hypothesis:
    return max(beam, key=lambda h: h.log_score)


@dataclass
class DecodeResult:
    tokens: list[int]
    hypothesis: Hypothesis | None
    emissions: list[Emission] = field(default_factory=list)
    restarts: list[float] = field(default_factory=list)
    display_log: list[tuple[float, tuple[int, ...]]] = field(default_factory=list)
    forced_steps: int = 0

    def trace_records(self, vocab: Vocab) -> list[dict]:
        return [
            {
                "token": em.token,
                "label": vocab.token_of(em.token),
                "selected_index": em.selected_index,
                "peak_index": em.peak_index,
                "clock_ms": em.clock_ms,
                "log_prob": em.log_prob,
                "forced": em.forced,
            }
            for em in self.emissions
        ]


def _bos_eos_only(model, clock_ms: float) -> DecodeResult:
    hyp = initial_hypothesis(model)
    hyp = replace(hyp, tokens=hyp.tokens + (model.vocab.eos_id,), finished=True)
    return DecodeResult(tokens=list(hyp.tokens), hypothesis=hyp,
                        display_log=[(clock_ms, ())])


def decode_offline(model, features: FeatureSequence, cfg: BeamConfig) -> DecodeResult:
    """Encode the whole utterance, then decode to completion."""
    buffer = EncodedBuffer(model.total_reduction, features.frame_shift_ms)
    enc_state = model.encoder_reset()
    buffer.append(model.encoder_push(enc_state, features.frames))
    buffer.append(model.encoder_finish(enc_state))
    clock = float(features.duration_ms)
    if len(buffer) == 0:
        return _bos_eos_only(model, clock)
    beam = [initial_hypothesis(model)]
    guard = 0
    while not best_hypothesis(beam).finished:
        beam, _ = decode_step(model, beam, buffer, buffer_complete=True, cfg=cfg,
                              clock_ms=clock, force=True)
        guard += 1
        if guard > cfg.max_tokens(len(buffer)) + cfg.beam_size + 8:
            raise RuntimeError("offline decode failed to terminate")
    best = best_hypothesis(beam)
    return DecodeResult(tokens=list(best.tokens), hypothesis=best, emissions=list(best.timeline))


def split_batches(frames: np.ndarray, batch_frames: int) -> list[np.ndarray]:
    if batch_frames < 1:
        raise ValueError("batch_frames must be >= 1")
    total = frames.shape[0]
    if total == 0:
        return [frames]
    return [frames[i : i + batch_frames] for i in range(0, total, batch_frames)]


def decode_online(
    model,
    features: FeatureSequence,
    cfg: BeamConfig,
    batch_ms: int = 320,
    min_buffer_ms: float = 480.0,
) -> DecodeResult:
    """Batch-by-batch decoding with a minimum-buffer gate but no backtracking.

    This is the plain online baseline: decoding may run whenever the buffer
    extends at least ``min_buffer_ms`` past the best hypothesis' attention
    position. End-symbol handling follows ``cfg.eos_policy``.
    """
    vocab = model.vocab
    buffer = EncodedBuffer(model.total_reduction, features.frame_shift_ms)
    enc_state = model.encoder_reset()
    batches = split_batches(features.frames, ms_to_frames(batch_ms, features.frame_shift_ms))
    gate = (
        math.inf
        if math.isinf(min_buffer_ms)
        else ms_to_encoded_frames(min_buffer_ms, features.frame_shift_ms, model.total_reduction)
    )

    result = DecodeResult(tokens=[], hypothesis=None)
    segments: list[tuple[int, ...]] = []
    beam = [initial_hypothesis(model)]
    clock = 0.0
    restart_pending = False
    done = False

    for index, batch in enumerate(batches):
        is_last = index == len(batches) - 1
        buffer.append(model.encoder_push(enc_state, batch))
        clock += batch.shape[0] * features.frame_shift_ms
        if is_last:
            buffer.append(model.encoder_finish(enc_state))
        if done:
            continue
        if restart_pending:
            beam = [initial_hypothesis(model, prev_index=len(buffer) - 1)]
            restart_pending = False

        if len(buffer) == 0:
            if is_last:
                result.hypothesis = replace(
                    beam[0], tokens=beam[0].tokens + (vocab.eos_id,), finished=True
                )
                beam = [result.hypothesis]
            result.display_log.append((clock, ()))
            continue

        forced_left = 1 if cfg.eos_policy in ("accept", "restart") and not is_last else 0
        guard = 0
        while True:
            best = best_hypothesis(beam)
            if best.finished:
                if is_last or cfg.eos_policy == "accept":
                    done = done or not is_last
                    break
                if cfg.eos_policy == "restart":
                    segments.append(best.tokens[1:-1])
                    result.restarts.append(clock)
                    restart_pending = True
                    # placeholder; the restart attaches at the next batch's live edge
                    beam = [initial_hypothesis(model, prev_index=len(buffer) - 1)]
                    break
                break
            tail = len(buffer) - 1 - best.att_state.prev_index
            if not is_last and (math.isinf(gate) or tail < gate):
                break
            force = is_last
            block_eos = cfg.eos_policy == "defer" and model.silence_aware and not is_last
            new_beam, atts = decode_step(model, beam, buffer, buffer_complete=is_last, cfg=cfg,
                                         clock_ms=clock, force=force, block_eos=block_eos)
            progressed = any(a is not None and a.status == "selected" for a in atts)
            if not progressed:
                if not is_last and forced_left > 0:
                    forced_left -= 1
                    result.forced_steps += 1
                    new_beam, atts = decode_step(model, beam, buffer, buffer_complete=False,
                                                 cfg=cfg, clock_ms=clock, force=True,
                                                 block_eos=block_eos)
                    if not any(a is not None and a.status == "selected" for a in atts):
                        break
                else:
                    break
            beam = new_beam
            guard += 1
            if guard > cfg.max_tokens(len(buffer)) + cfg.beam_size + 8:
                raise RuntimeError("online decode failed to terminate within the token cap")

        best = best_hypothesis(beam)
        display = tuple(strip_nonscoring(list(best.tokens), vocab))
        if cfg.eos_policy == "restart":
            display = tuple(t for seg in segments for t in strip_nonscoring(list(seg), vocab)) + display
        result.display_log.append((clock, display))

    best = best_hypothesis(beam)
    if not best.finished:  # zero-audio stream never entered the decode loop
        best = replace(best, tokens=best.tokens + (vocab.eos_id,), finished=True)
    result.hypothesis = best
    result.emissions = list(best.timeline)
    if cfg.eos_policy == "restart":
        tokens = (vocab.bos_id,)
        for seg in segments:
            tokens += seg
        tokens += best.tokens[1:]
        result.tokens = list(tokens)
    else:
        result.tokens = list(best.tokens)
    return result
