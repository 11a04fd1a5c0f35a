from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from suda import protocol
from suda.errors import EmptyBatchError, FormatError, ManifestError
from suda.protocol import Utterance

from oracles import closed_form_trial_counts, enumerated_manifest


class TestManifest:
    def test_roundtrip(self, tmp_path):
        rows = enumerated_manifest(2, 2)
        protocol.write_manifest(tmp_path / "m.tsv", rows)
        assert protocol.read_manifest(tmp_path / "m.tsv") == rows

    def test_field_count(self):
        with pytest.raises(ManifestError, match=":2:"):
            protocol.parse_manifest("a\ts\tp\t1\tevaluation\tx.wav\nbad\tline\n")

    def test_duplicate(self):
        line = "a\ts\tp\t1\tevaluation\tx.wav\n"
        with pytest.raises(ManifestError, match="duplicate"):
            protocol.parse_manifest(line + line.replace("a\t", "b\t", 1))

    @pytest.mark.parametrize("session, split", [(0, "evaluation"), (10, "evaluation"), (1, "test")])
    def test_invalid_fields(self, session, split):
        with pytest.raises(ManifestError):
            Utterance("u", "s", "p", session, split)

    def test_phrase_without_underscore(self):
        with pytest.raises(ManifestError):
            Utterance("u", "s", "p_1", 1, "evaluation")


class TestEnrollment:
    def test_sessions(self):
        enroll, tests = protocol.split_enrollment(enumerated_manifest(3, 2))
        assert {u.session for u in enroll} == {1, 4, 7}
        assert {u.session for u in tests} == {2, 3, 5, 6, 8, 9}
        groups = protocol.enrollment_groups(enroll)
        assert len(groups) == 6 and all(len(g) == 3 for g in groups.values())

    def test_missing_session_named(self):
        rows = [u for u in enumerated_manifest(2, 2) if not (u.speaker == "s1" and u.phrase == "p0" and u.session == 4)]
        with pytest.raises(ManifestError, match="speaker=s1 phrase=p0 session=4"):
            protocol.split_enrollment(rows)

    def test_enroll_model_normalized_mean(self):
        out = protocol.enroll_model([[3.0, 0.0], [0.0, 0.0], [0.0, 3.0]])
        np.testing.assert_allclose(out, [2 ** -0.5, 2 ** -0.5], rtol=1e-15)

    def test_enroll_model_degenerate(self):
        with pytest.raises(EmptyBatchError):
            protocol.enroll_model([[1.0, 0.0], [-1.0, 0.0], [0.0, 0.0]])
        with pytest.raises(ValueError):
            protocol.enroll_model([[1.0, 0.0]])


class TestTrials:
    @pytest.mark.parametrize("condition", ["TW", "IC", "IW"])
    def test_counts_match_closed_form(self, condition):
        rows = enumerated_manifest(3, 2)
        enroll, tests = protocol.split_enrollment(rows)
        trials = protocol.generate_trials(protocol.enrollment_groups(enroll), tests, condition)
        expected = closed_form_trial_counts(3, 2)
        assert Counter(t.category for t in trials) == {"TC": expected["TC"], condition: expected[condition]}

    def test_ordering(self):
        rows = enumerated_manifest(2, 2)
        enroll, tests = protocol.split_enrollment(rows)
        trials = protocol.generate_trials(protocol.enrollment_groups(enroll), tests, "IW")
        keys = [(t.model_id, t.test.utt_id) for t in trials]
        assert keys == sorted(keys)

    def test_rejects_enrollment_test(self):
        rows = enumerated_manifest(2, 2)
        with pytest.raises(ManifestError):
            protocol.generate_trials([("s0", "p0")], rows, "TW")

    def test_bad_condition(self):
        with pytest.raises(ValueError):
            protocol.generate_trials([], [], "TC")

    def test_file_roundtrip(self):
        rows = enumerated_manifest(2, 2)
        enroll, tests = protocol.split_enrollment(rows)
        trials = protocol.generate_trials(protocol.enrollment_groups(enroll), tests, "TW")
        text = protocol.format_trials(trials)
        assert protocol.parse_trials(text, rows) == trials
        assert text.splitlines()[0] == "s0_p0\ts0-p0-2\tTC"

    def test_parse_rejects_wrong_category(self):
        rows = enumerated_manifest(2, 2)
        with pytest.raises(FormatError, match="contradicts"):
            protocol.parse_trials("s0_p0\ts1-p0-2\tTC\n", rows)

    @given(st.sampled_from(["a", "b"]), st.sampled_from(["x", "y"]),
           st.sampled_from(["a", "b"]), st.sampled_from(["x", "y"]))
    def test_categorize_truth_table(self, ms, mp, ts, tp):
        cat = protocol.categorize((ms, mp), Utterance("u", ts, tp, 2, "evaluation"))
        assert cat == {(True, True): "TC", (True, False): "TW",
                       (False, True): "IC", (False, False): "IW"}[(ms == ts, mp == tp)]

    def test_model_id_roundtrip(self):
        assert protocol.parse_model_id(protocol.model_id("spk_01", "ph02")) == ("spk_01", "ph02")
