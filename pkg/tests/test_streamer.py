import math

import numpy as np
import pytest

from silstream.data import FeatureSequence
from silstream.decoder import BeamConfig, decode_offline, split_batches
from silstream.model import ModelConfig, NeuralModel, init_params
from silstream.encoder import EncoderConfig
from silstream.attention import AttentionConfig
from silstream.streamer import StreamConfig, StreamSession, applicable_buffer, stream_decode
from silstream.synth import OracleMode, OracleModel, SynthConfig, gen_corpus, CorpusSpec, gen_utterance
from silstream.vocab import make_vocab

VOCAB = make_vocab(["a", "b", "c"])
SYNTH = SynthConfig(vocab=VOCAB, feature_dim=8, frames_per_token=8)


def make_utt(tokens, layout, seed=0):
    return gen_utterance(SYNTH, seed=seed, tokens=VOCAB.encode(tokens), silence_layout=layout)


def aware(utt, d=2, min_sil=1):
    return OracleModel(OracleMode("silence_aware", d, min_sil), VOCAB, utt.alignment, 4)


def skipping(utt):
    return OracleModel(OracleMode("silence_skipping"), VOCAB, utt.alignment, 4)


class TestApplicableBuffer:
    def test_silence_buffer_when_last_token_is_silence(self):
        cfg = StreamConfig(min_buffer_ms=480, sil_buffer_ms=2400)
        assert applicable_buffer(VOCAB.sil_id, cfg, VOCAB) == 2400

    def test_regular_token_uses_min_buffer(self):
        cfg = StreamConfig(min_buffer_ms=960, sil_buffer_ms=960)
        assert applicable_buffer(VOCAB.id_of("a"), cfg, VOCAB) == 960

    def test_utterance_start_uses_min_buffer(self):
        cfg = StreamConfig(min_buffer_ms=480, sil_buffer_ms=2400)
        assert applicable_buffer(VOCAB.bos_id, cfg, VOCAB) == 480
        assert applicable_buffer(None, cfg, VOCAB) == 480

    def test_silence_buffer_cannot_undercut_min(self):
        with pytest.raises(ValueError):
            StreamConfig(min_buffer_ms=480, sil_buffer_ms=120)


class TestSessionBasics:
    def test_empty_first_batch_no_decode(self):
        utt = make_utt(["a"], [(1, 40)])
        session = StreamSession(aware(utt), StreamConfig(batch_ms=320), BeamConfig(beam_size=1))
        out = session.push(np.zeros((0, 8)))
        assert out == []
        assert session.trace[-1]["decision"] == "no-decode"

    def test_push_after_finalize_rejected(self):
        utt = make_utt(["a"], [])
        session = StreamSession(aware(utt), StreamConfig(), BeamConfig(beam_size=1))
        session.push(utt.features.frames, is_last=True)
        with pytest.raises(RuntimeError):
            session.push(np.zeros((0, 8)))

    def test_double_finalize_rejected(self):
        utt = make_utt(["a"], [])
        session = StreamSession(aware(utt), StreamConfig(), BeamConfig(beam_size=1))
        session.push(utt.features.frames, is_last=True)
        with pytest.raises(RuntimeError):
            session.finalize()

    def test_zero_audio_session(self):
        utt = make_utt(["a"], [])
        session = StreamSession(aware(utt), StreamConfig(), BeamConfig(beam_size=1))
        result = session.finalize()
        assert result.tokens == [VOCAB.bos_id, VOCAB.eos_id]

    def test_clock_advances_with_audio(self):
        utt = make_utt(["a", "b"], [(1, 40)])
        session = StreamSession(aware(utt), StreamConfig(batch_ms=160), BeamConfig(beam_size=1))
        batches = split_batches(utt.features.frames, 16)
        for i, batch in enumerate(batches):
            session.push(batch, is_last=i == len(batches) - 1)
        assert session.clock_ms == utt.features.duration_ms


def offline_equivalence(utt, model_fn, batch_ms, min_ms, sil_ms, beam=1, policy="defer"):
    offline = decode_offline(model_fn(utt), utt.features, BeamConfig(beam_size=beam))
    result, session = stream_decode(
        model_fn(utt), utt.features,
        StreamConfig(batch_ms=batch_ms, min_buffer_ms=min_ms, sil_buffer_ms=sil_ms),
        BeamConfig(beam_size=beam, eos_policy=policy),
    )
    return offline.tokens, result.tokens, session


class TestOfflineEquivalence:
    def test_aware_oracle_streamed_equals_offline(self):
        utt = make_utt(["a", "b"], [(1, 96), (2, 48)])
        model_fn = lambda u: aware(u, d=6, min_sil=3)
        off, on, session = offline_equivalence(utt, model_fn, 320, 960, 960)
        assert on == off
        assert session.backtracks  # gating actually engaged along the way

    @pytest.mark.parametrize("batch_ms", [160, 320, 640])
    def test_invariant_to_batch_size(self, batch_ms):
        utt = make_utt(["a", "b", "c"], [(1, 64), (2, 96), (3, 48)], seed=6)
        model_fn = lambda u: aware(u, d=6, min_sil=3)
        off, on, _ = offline_equivalence(utt, model_fn, batch_ms, 120, 120)
        assert on == off

    def test_tiny_batches_huge_buffers_all_work_at_finalize(self):
        utt = make_utt(["a", "b"], [(1, 32)], seed=7)
        model_fn = lambda u: aware(u, d=2)
        off, on, session = offline_equivalence(utt, model_fn, 80, 10**6, 10**6)
        assert on == off
        decisions = {t["decision"] for t in session.trace[:-1]}
        assert decisions == {"no-decode"}

    def test_infinite_buffers_bitwise_offline_equality_any_model(self):
        cfg = ModelConfig(
            encoder=EncoderConfig(num_layers=2, input_dim=8, hidden=16, proj=8),
            attention=AttentionConfig(chunk_size=3, energy_hidden=8),
            decoder_hidden=16, embed_dim=4,
        )
        model = NeuralModel(cfg, init_params(cfg, VOCAB.size, seed=5), VOCAB)
        feats = FeatureSequence(np.random.default_rng(8).normal(size=(50, 8)))
        offline = decode_offline(model, feats, BeamConfig(beam_size=2))
        result, _ = stream_decode(
            model, feats,
            StreamConfig(batch_ms=160, min_buffer_ms=math.inf, sil_buffer_ms=math.inf),
            BeamConfig(beam_size=2),
        )
        assert result.tokens == offline.tokens

    def test_corpus_equivalence_with_backtracking_active(self):
        corpus = gen_corpus(SYNTH, CorpusSpec(num_utterances=12, min_tokens=1, max_tokens=3,
                                              mid_silence_prob=0.8, mid_silence_frames=(16, 80),
                                              trail_silence_prob=0.7, align_to=1), seed=11)
        for utt in corpus.values():
            model_fn = lambda u: aware(u, d=4, min_sil=2)
            off, on, _ = offline_equivalence(utt, model_fn, 160, 240, 480)
            assert on == off


class TestPrefixStability:
    def test_committed_tokens_only_grow(self):
        utt = make_utt(["a", "b", "c"], [(1, 64), (2, 96)], seed=9)
        model = aware(utt, d=6, min_sil=3)
        session = StreamSession(model, StreamConfig(batch_ms=160, min_buffer_ms=240, sil_buffer_ms=480),
                                BeamConfig(beam_size=1))
        batches = split_batches(utt.features.frames, 16)
        committed = []
        for i, batch in enumerate(batches):
            snapshot = list(committed)
            committed += session.push(batch, is_last=i == len(batches) - 1)
            assert committed[: len(snapshot)] == snapshot
        assert session.result().tokens == list(session.committed_tokens)

    def test_no_commit_inside_restricted_region(self):
        utt = make_utt(["a", "b"], [(1, 96), (2, 48)], seed=10)
        model = aware(utt, d=6, min_sil=3)
        session = StreamSession(model, StreamConfig(batch_ms=160, min_buffer_ms=240, sil_buffer_ms=480),
                                BeamConfig(beam_size=1))
        batches = split_batches(utt.features.frames, 16)
        buffer_lens = []
        for i, batch in enumerate(batches):
            is_last = i == len(batches) - 1
            before = len(session.beam[0].timeline)
            session.push(batch, is_last=is_last)
            if is_last:
                break
            for em in session.beam[0].timeline[before:]:
                # every mid-stream commit keeps its peak clear of the tail
                region = session._buffer_frames(session.scfg.sil_buffer_ms)
                assert em.peak_index < len(session.buffer)


class TestPathologyThroughStreamer:
    def test_accept_policy_deletes_post_silence_segment(self):
        utt = make_utt(["a", "b"], [(1, 128), (2, 48)], seed=12)
        result, session = stream_decode(
            skipping(utt), utt.features,
            StreamConfig(batch_ms=320, min_buffer_ms=480, sil_buffer_ms=480),
            BeamConfig(beam_size=1, eos_policy="accept"),
        )
        assert result.tokens == [VOCAB.bos_id, VOCAB.id_of("a"), VOCAB.eos_id]
        assert session.finished

    def test_defer_policy_needs_silence_model(self):
        # deferral is conditioned on the model being silence-aware; the
        # skipping oracle is not, so the premature end still goes through
        utt = make_utt(["a", "b"], [(1, 128), (2, 48)], seed=12)
        result, _ = stream_decode(
            skipping(utt), utt.features,
            StreamConfig(batch_ms=320, min_buffer_ms=480, sil_buffer_ms=480),
            BeamConfig(beam_size=1, eos_policy="defer"),
        )
        assert VOCAB.id_of("b") not in result.tokens


class TestTrace:
    def test_trace_schema(self):
        utt = make_utt(["a", "b"], [(1, 64)], seed=13)
        _, session = stream_decode(
            aware(utt, d=4), utt.features,
            StreamConfig(batch_ms=160, min_buffer_ms=240, sil_buffer_ms=240),
            BeamConfig(beam_size=1),
        )
        for record in session.trace:
            assert {"batch", "clock_ms", "buffer_len", "decision", "committed",
                    "restricted_boundary"} <= set(record)
            assert record["decision"] in ("no-decode", "committed", "backtrack")
        batches = [r["batch"] for r in session.trace]
        assert batches == sorted(batches)
