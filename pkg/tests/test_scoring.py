import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from suda import scoring
from suda.errors import EmptyBatchError, FormatError
from suda.scoring import ScoreRecord, compute_eer

from oracles import brute_force_eer, random_score_sets

scores = st.lists(st.floats(-5, 5, allow_nan=False).map(lambda v: round(v, 2)), min_size=1, max_size=40)


class TestCosine:
    def test_closed_forms(self):
        assert scoring.cosine_score([1.0, 2.0], [1.0, 2.0]) == pytest.approx(1.0, abs=1e-15)
        assert scoring.cosine_score([1.0, 0.0], [0.0, 3.0]) == 0.0
        assert scoring.cosine_score([1.0, 0.0], [1.0, 1.0]) == pytest.approx(1 / math.sqrt(2), abs=1e-15)

    def test_zero_vector(self):
        with pytest.raises(ValueError):
            scoring.cosine_score([0.0, 0.0], [1.0, 0.0])


class TestFuse:
    def test_endpoints_and_midpoint(self):
        assert scoring.fuse(0.8, 0.2, 1.0) == 0.8
        assert scoring.fuse(0.8, 0.2, 0.0) == 0.2
        assert scoring.fuse(0.8, 0.2, 0.5) == pytest.approx(0.5, abs=1e-15)

    @pytest.mark.parametrize("alpha", [-0.1, 1.5])
    def test_alpha_range(self, alpha):
        with pytest.raises(ValueError):
            scoring.fuse(0.1, 0.2, alpha)


class TestEer:
    def test_separable(self):
        assert compute_eer([1.0, 0.9], [0.1, 0.2]).eer == 0.0

    def test_hand_derived_half(self):
        res = compute_eer([0.8, 0.2], [0.7, 0.1])
        assert res.eer == 50.0
        assert 0.2 < res.threshold <= 0.7

    def test_identical_multisets(self):
        assert compute_eer([0.3, 0.5, 0.9], [0.9, 0.3, 0.5]).eer == 50.0

    def test_counts(self):
        res = compute_eer([1, 2, 3], [0, 1])
        assert (res.n_target, res.n_nontarget) == (3, 2)

    def test_empty(self):
        with pytest.raises(EmptyBatchError):
            compute_eer([], [0.1])
        with pytest.raises(EmptyBatchError):
            compute_eer([0.1], [])

    def test_matches_oracle_on_random_sets(self):
        for tar, non in random_score_sets(seed=5, count=200, max_size=60):
            eer, threshold = brute_force_eer(tar, non)
            res = compute_eer(tar, non)
            assert abs(res.eer - eer) <= 1e-12
            assert res.threshold == threshold

    @given(scores, scores)
    @settings(max_examples=200)
    def test_oracle_property(self, tar, non):
        eer, threshold = brute_force_eer(tar, non)
        res = compute_eer(tar, non)
        assert abs(res.eer - eer) <= 1e-12 and res.threshold == threshold
        assert 0.0 <= res.eer <= 100.0

    @given(scores, scores, st.randoms(use_true_random=False))
    def test_permutation_invariant(self, tar, non, random):
        shuffled_t, shuffled_n = tar[:], non[:]
        random.shuffle(shuffled_t)
        random.shuffle(shuffled_n)
        assert compute_eer(shuffled_t, shuffled_n) == compute_eer(tar, non)

    @given(scores, scores)
    def test_monotone_transform(self, tar, non):
        f = lambda v: np.exp(np.asarray(v) / 2.0) * 3.0 + 1.0  # strictly increasing
        base, moved = compute_eer(tar, non), compute_eer(f(tar), f(non))
        assert moved.eer == base.eer

    @given(scores, st.floats(0.01, 5))
    def test_dominance_bound(self, non, shift):
        tar = [v + shift + 10.0 for v in non]
        assert compute_eer(tar, non).eer <= 50.0


def records(pairs):
    return [ScoreRecord("m", f"t{i}", cat, 0.0, 0.0, s) for i, (cat, s) in enumerate(pairs)]


class TestEvalCondition:
    def test_uses_tc_against_condition(self):
        recs = records([("TC", 0.9), ("TC", 0.8), ("IC", 0.1), ("IW", 0.95)])
        assert scoring.eval_condition(recs, "IC").eer == 0.0
        assert scoring.eval_condition(recs, "IW").eer == 100.0  # only crossing: t=0.925, FRR=FAR=1

    def test_missing_category(self):
        with pytest.raises(EmptyBatchError, match="TW"):
            scoring.eval_condition(records([("TC", 0.9)]), "TW")


class TestScoreFiles:
    def test_roundtrip_and_format(self):
        rec = ScoreRecord("s0_p0", "s0-p0-2", "TC", 0.5, -0.25, 0.125)
        text = scoring.format_scores([rec])
        assert text == "s0_p0\ts0-p0-2\tTC\t0.500000\t-0.250000\t0.125000\n"
        assert scoring.parse_scores(text) == [rec]

    def test_fixture_file_eval(self, tmp_path):
        # hand-computed: targets {0.8, 0.2}, IC non-targets {0.7, 0.1} -> 50%
        path = tmp_path / "s.tsv"
        path.write_text("m_a\tu1\tTC\t0\t0\t0.800000\nm_a\tu2\tTC\t0\t0\t0.200000\n"
                        "m_a\tu3\tIC\t0\t0\t0.700000\nm_a\tu4\tIC\t0\t0\t0.100000\n")
        assert scoring.eval_condition(scoring.read_scores(path), "IC").eer == 50.0

    def test_malformed(self):
        with pytest.raises(FormatError, match=":1:"):
            scoring.parse_scores("a\tb\tXX\t0\t0\t0\n")
        with pytest.raises(FormatError):
            scoring.parse_scores("a\tb\tTC\tzero\t0\t0\n")

    def test_report_keys(self):
        text = scoring.format_report({"IC": scoring.EerResult(1.5, 0.25, 10, 20)})
        assert text.splitlines()[:5] == ["condition=IC", "eer_percent=1.500000", "threshold=0.250000",
                                         "n_target=10", "n_nontarget=20"]
