"""The remedy: narrate silence, gate decoding on buffers, void edgy steps.

Two ingredients make asynchronous decoding safe online:

1.  Silence tokens. References carry one silence token per fixed span of
    silence frames, so a trained model answers a pause with silence tokens
    instead of an end symbol. Here the "silence-aware" scripted model plays
    that role exactly.
2.  The buffering scheme. Audio arrives in batches; decoding waits until
    the buffer extends a minimum span past the last attended frame, and any
    step whose attention peak lands in the restricted region at the buffer
    tail is voided and retried once more audio arrives. At end of stream
    the restrictions drop and decoding runs to completion.

With both in place, the online result equals the offline result exactly --
for any batch size.
"""
from silstream import BeamConfig, StreamConfig, decode_offline, make_vocab, stream_decode
from silstream.labeler import LabelerConfig, insert_silence
from silstream.synth import OracleMode, OracleModel, SynthConfig, gen_utterance

vocab = make_vocab(["good", "morning"])
synth = SynthConfig(vocab=vocab, feature_dim=8, frames_per_token=8)
utt = gen_utterance(
    synth, seed=3,
    tokens=vocab.encode(["good", "morning"]),
    silence_layout=[(1, 96), (2, 48)],
)

# what the labeler would add to the reference at a 240ms silence duration
labeled = insert_silence(utt.tokens, utt.alignment, LabelerConfig(duration_frames=24), vocab)
print("labeled reference:", vocab.decode(labeled))


def aware_model():
    return OracleModel(
        OracleMode("silence_aware", sil_duration_encoded=6, min_silence_encoded=3),
        vocab, utt.alignment, total_reduction=4,
    )


offline = decode_offline(aware_model(), utt.features, BeamConfig(beam_size=1))
print("offline decode:   ", vocab.decode(offline.tokens))

for batch_ms in (160, 320, 640):
    cfg = StreamConfig(batch_ms=batch_ms, min_buffer_ms=120, sil_buffer_ms=240)
    result, session = stream_decode(aware_model(), utt.features, cfg,
                                    BeamConfig(beam_size=1, eos_policy="defer"))
    same = "== offline" if result.tokens == offline.tokens else "!= offline (bug!)"
    print(f"online, {batch_ms:3d} ms batches: {vocab.decode(result.tokens)}  {same}  "
          f"({len(session.backtracks)} backtracks)")

print("\nper-batch session trace of the 320 ms run:")
cfg = StreamConfig(batch_ms=320, min_buffer_ms=120, sil_buffer_ms=240)
_, session = stream_decode(aware_model(), utt.features, cfg,
                           BeamConfig(beam_size=1, eos_policy="defer"))
for rec in session.trace:
    print(f"  batch {rec['batch']:2d}  clock {rec['clock_ms']:5.0f} ms  "
          f"buffer {rec['buffer_len']:3d}  {rec['decision']:9s}  +{rec['committed']} tokens")
