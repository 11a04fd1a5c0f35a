import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from suda import frontend, protocol, synth


@pytest.fixture(scope="module")
def eval_split_means():
    """Mean base cepstra (c0..c19) for the default evaluation speakers."""
    n_bg, n_dev, n_eval = synth.split_counts(16)
    phrases = [synth.phrase_spec(2020, p) for p in range(4)]
    rows = []
    for spk in range(n_bg + n_dev, 16):
        speaker = synth.speaker_spec(2020, spk)
        for ph in phrases:
            for session in range(1, 10):
                wav = synth.synthesize(speaker, ph, session, 2020)
                rows.append((spk, ph.index, session, frontend.mfcc(frontend.frame_signal(wav)).mean(axis=0)))
    spk, ph, sess, vec = zip(*rows)
    return np.array(spk), np.array(ph), np.array(sess), np.stack(vec)


class TestSpecs:
    @given(st.integers(0, 2**32 - 1), st.integers(0, 500))
    @settings(max_examples=50)
    def test_speaker_ranges_and_determinism(self, seed, index):
        spec = synth.speaker_spec(seed, index)
        assert spec == synth.speaker_spec(seed, index)
        assert 90 <= spec.f0 <= 280
        assert 0.85 <= spec.formant_shift <= 1.15
        assert -12 <= spec.tilt_db <= -3

    @given(st.integers(0, 2**32 - 1), st.integers(0, 50), st.sampled_from([(1.0, 2.0), (3.0, 4.0)]))
    @settings(max_examples=50)
    def test_phrase_duration(self, seed, index, seconds):
        spec = synth.phrase_spec(seed, index, seconds)
        assert seconds[0] * 1000 <= spec.duration_ms <= seconds[1] * 1000
        assert all(120 <= ms <= 300 for _, ms in spec.segments)


class TestSynthesis:
    def test_bit_identical(self):
        sp, ph = synth.speaker_spec(7, 0), synth.phrase_spec(7, 0)
        a = synth.synthesize(sp, ph, 3, seed=7)
        b = synth.synthesize(sp, ph, 3, seed=7)
        assert a.tobytes() == b.tobytes()
        assert a.tobytes() != synth.synthesize(sp, ph, 4, seed=7).tobytes()

    def test_length_matches_spec(self):
        ph = synth.phrase_spec(2020, 1)
        wav = synth.synthesize(synth.speaker_spec(2020, 1), ph, 1)
        assert abs(len(wav) - ph.duration_ms * 16) <= 320
        assert np.max(np.abs(wav)) <= 1.0

    def test_same_phrase_sessions_correlate_more(self, eval_split_means):
        spk, ph, _, vec = eval_split_means
        s = spk == spk[0]
        z = (vec - vec.mean(0)) / vec.std(0)
        within, across = [], []
        for i in np.flatnonzero(s):
            for j in np.flatnonzero(s):
                if i < j:
                    (within if ph[i] == ph[j] else across).append(np.corrcoef(z[i], z[j])[0, 1])
        assert np.mean(within) > np.mean(across)

    def test_speaker_separability(self, eval_split_means):
        spk, _, sess, vec = eval_split_means
        enrolled = np.isin(sess, protocol.ENROLL_SESSIONS)
        assert synth.nearest_centroid_accuracy(vec, spk, enrolled) > 0.8

    def test_phrase_separability(self, eval_split_means):
        _, ph, sess, vec = eval_split_means
        enrolled = np.isin(sess, protocol.ENROLL_SESSIONS)
        assert synth.nearest_centroid_accuracy(vec, ph, enrolled) > 0.8


class TestCorpus:
    def test_counts_and_default_splits(self):
        rows = synth.corpus_utterances(8, 4)
        assert len(rows) == 8 * 4 * 9
        assert synth.split_counts(16) == (8, 4, 4)
        default = synth.corpus_utterances(16, 4)
        for split, n in zip(protocol.SPLITS, (8, 4, 4)):
            assert len({r.speaker for r in default if r.split == split}) == n

    def test_every_pair_has_nine_sessions(self):
        rows = synth.corpus_utterances(4, 3)
        sessions = {}
        for r in rows:
            sessions.setdefault((r.speaker, r.phrase), set()).add(r.session)
        assert all(s == set(range(1, 10)) for s in sessions.values())

    def test_regeneration_hash(self, tmp_path):
        synth.generate_corpus(tmp_path / "a", 2, 2, seed=3)
        synth.generate_corpus(tmp_path / "b", 2, 2, seed=3)
        synth.generate_corpus(tmp_path / "c", 2, 2, seed=4)
        ha, hb, hc = (synth.manifest_hash(tmp_path / d) for d in "abc")
        assert ha == hb != hc
        rows = protocol.read_manifest(tmp_path / "a" / "manifest.tsv")
        assert len(rows) == 36
        y, sr = frontend.read_wav(tmp_path / "a" / rows[0].path)
        assert sr == 16000 and y.ndim == 1

    def test_too_small(self):
        with pytest.raises(ValueError):
            synth.corpus_utterances(1, 4)
