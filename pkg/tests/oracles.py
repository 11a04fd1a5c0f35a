"""Independent reference implementations used by several test modules."""
from fractions import Fraction

import numpy as np


def brute_force_eer(targets, nontargets):
    """Direct-count threshold sweep compared in exact rational arithmetic.

    Returns ``(eer_percent, threshold)``. Candidate thresholds are every
    distinct score and every midpoint between neighbours; FRR and FAR are
    counted by comparing every score against every threshold. Ties in
    |FAR-FRR| go to the lowest threshold.
    """
    tar = np.asarray(targets, dtype=np.float64).ravel()
    non = np.asarray(nontargets, dtype=np.float64).ravel()
    distinct = sorted(set(tar.tolist()) | set(non.tolist()))
    candidates = sorted(distinct + [(a + b) / 2 for a, b in zip(distinct, distinct[1:])])
    t = np.asarray(candidates)
    misses = (tar[None, :] < t[:, None]).sum(axis=1)
    alarms = (non[None, :] >= t[:, None]).sum(axis=1)
    best = None
    for k in range(len(t)):
        frr = Fraction(int(misses[k]), len(tar))
        far = Fraction(int(alarms[k]), len(non))
        gap = abs(far - frr)
        if best is None or gap < best[0]:
            best = (gap, candidates[k], far, frr)
    _, threshold, far, frr = best
    return 100.0 * float((far + frr) / 2), threshold


def closed_form_trial_counts(n_speakers, n_phrases, n_test_sessions=6):
    """Trials per category when every (speaker, phrase) is a model."""
    models = n_speakers * n_phrases
    per_model = {
        "TC": n_test_sessions,
        "TW": (n_phrases - 1) * n_test_sessions,
        "IC": (n_speakers - 1) * n_test_sessions,
        "IW": (n_speakers - 1) * (n_phrases - 1) * n_test_sessions,
    }
    return {k: models * v for k, v in per_model.items()}


def enumerated_manifest(n_speakers, n_phrases, split="evaluation"):
    from suda.protocol import Utterance

    return [Utterance(f"s{s}-p{p}-{k}", f"s{s}", f"p{p}", k, split, f"wav/s{s}-p{p}-{k}.wav")
            for s in range(n_speakers) for p in range(n_phrases) for k in range(1, 10)]


def random_score_sets(seed, count=1000, max_size=200):
    """Score sets with deliberate ties: half drawn from a coarse grid."""
    rng = np.random.default_rng(seed)
    for i in range(count):
        n_t, n_n = rng.integers(1, max_size + 1, size=2)
        if i % 2:
            tar = rng.integers(0, 12, n_t) / 4.0
            non = rng.integers(0, 10, n_n) / 4.0
        else:
            tar = rng.normal(1.0, 1.0, n_t)
            non = rng.normal(0.0, 1.0, n_n)
        yield tar, non
