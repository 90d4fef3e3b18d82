import math

import mpmath
import numpy as np
import pytest

from qecontrast.corpus import QAInstance, QuestionType
from qecontrast.encoder import MarkerReps
from qecontrast.errors import ConfigError, ContractError
from qecontrast.loss import (
    EvidenceClassifier,
    LossConfig,
    combined_loss,
    enumerate_candidates,
    qa_loss,
    qa_loss_grad,
    qe_loss,
    qe_loss_grad,
)
from qecontrast.similarity import (
    COSINE,
    DOT,
    PROJECTED_COSINE,
    SimContext,
    SimilarityKind,
    init_bank,
    similarity,
)

EVAL = SimContext("eval")


def make_inst(m, evidence, qtype=0, num_types=3, answerable=True):
    return QAInstance(
        id="i",
        question=["q"],
        sentences=[["s"]] * m,
        evidence=frozenset(evidence),
        qtype=QuestionType(qtype, f"type{qtype}"),
        answerable=answerable,
    )


def reps_for(m, d=8, seed=0):
    rng = np.random.default_rng(seed)
    return MarkerReps(q=rng.normal(size=d), s=rng.normal(size=(m, d)))


def dot_bank(num_types=3, d=8, taus=None):
    return init_bank(SimilarityKind(DOT), num_types, d, taus or [1.0] * num_types)


class TestEnumerateCandidates:
    def test_augmented_single_positive(self):
        inst = make_inst(2, {0}, qtype=0, num_types=2)
        cands = enumerate_candidates(inst, 2, True)
        assert len(cands) == 4
        positives = [c for c in cands if c.positive]
        assert len(positives) == 1
        assert (positives[0].sentence, positives[0].proj_type) == (0, 0)

    def test_unaugmented(self):
        inst = make_inst(5, {1, 4}, qtype=2)
        cands = enumerate_candidates(inst, 3, False)
        assert len(cands) == 5
        assert sum(c.positive for c in cands) == 2
        assert all(c.proj_type == 2 for c in cands)

    def test_brute_force_double_loop(self):
        # oracle: explicit double loop over (sentence, type)
        inst = make_inst(3, {0}, qtype=1)
        cands = enumerate_candidates(inst, 3, True)
        expected = [
            (j, k, j in inst.evidence and k == 1) for j in range(3) for k in range(3)
        ]
        assert [(c.sentence, c.proj_type, c.positive) for c in cands] == expected
        assert sum(c.positive for c in cands) == len(inst.evidence)


class TestQELoss:
    def test_uniform_unaugmented_is_ln_m(self):
        inst = make_inst(4, {2})
        reps = MarkerReps(q=np.ones(8), s=np.tile(np.ones(8), (4, 1)))
        bank = dot_bank()
        cfg = LossConfig(0.5, SimilarityKind(DOT))
        assert qe_loss(reps, inst, bank, cfg, EVAL) == pytest.approx(math.log(4), abs=1e-12)

    def test_uniform_augmented_is_ln_km_over_n(self):
        inst = make_inst(4, {0, 1})
        reps = MarkerReps(q=np.ones(8), s=np.tile(np.ones(8), (4, 1)))
        bank = dot_bank(num_types=3)
        cfg = LossConfig(0.5, SimilarityKind(DOT), augment_wrong_type=True)
        assert qe_loss(reps, inst, bank, cfg, EVAL) == pytest.approx(
            math.log(3 * 4 / 2), abs=1e-12
        )

    def test_known_scores_extended_precision(self):
        # oracle: direct softmax at 50-digit precision; positive scores 2, rest 0
        mpmath.mp.dps = 50
        inst = make_inst(3, {0})
        reps = MarkerReps(q=np.zeros(8), s=np.zeros((3, 8)))
        reps.q[0] = 1.0
        reps.s[0, 0] = 2.0
        bank = dot_bank()
        cfg = LossConfig(0.5, SimilarityKind(DOT))
        expected = -mpmath.log(mpmath.e**2 / (mpmath.e**2 + 2))
        assert qe_loss(reps, inst, bank, cfg, EVAL) == pytest.approx(
            float(expected), abs=1e-12
        )

    def test_oracle_equivalence_random(self):
        # oracle: extended-precision softmax over the same similarity scores
        mpmath.mp.dps = 50
        for seed in range(40):
            rng = np.random.default_rng(seed)
            k = 2 + seed % 2
            m = int(rng.integers(2, 7))
            evidence = set(
                int(j) for j in rng.choice(m, int(rng.integers(1, m)), replace=False)
            )
            inst = make_inst(m, evidence, qtype=int(rng.integers(k)), num_types=k)
            reps = reps_for(m, seed=seed)
            taus = list(rng.uniform(0.2, 1.0, size=k))
            kind = SimilarityKind(PROJECTED_COSINE, rank=4)
            bank = init_bank(kind, k, 8, taus, seed=seed)
            cfg = LossConfig(0.5, kind, augment_wrong_type=True)

            cands = enumerate_candidates(inst, k, True)
            scores = [
                mpmath.mpf(similarity(kind, reps.s[c.sentence], reps.q, c.proj_type, bank, EVAL))
                / mpmath.mpf(taus[c.proj_type])
                for c in cands
            ]
            z = sum(mpmath.e**s for s in scores)
            pos = sum(
                mpmath.e**s for s, c in zip(scores, cands) if c.positive
            )
            expected = float(-mpmath.log(pos / z))
            assert qe_loss(reps, inst, bank, cfg, EVAL) == pytest.approx(expected, abs=1e-10)

    def test_skip_rules(self):
        bank = dot_bank()
        cfg = LossConfig(0.5, SimilarityKind(DOT))
        no_ev = make_inst(3, set())
        unanswerable = make_inst(3, {0}, answerable=False)
        reps = reps_for(3)
        assert qe_loss(reps, no_ev, bank, cfg, EVAL) is None
        assert qe_loss(reps, unanswerable, bank, cfg, EVAL) is None
        strict = LossConfig(0.5, SimilarityKind(DOT), skip_no_evidence=False)
        with pytest.raises(ContractError):
            qe_loss(reps, no_ev, bank, strict, EVAL)

    def test_shift_invariance(self):
        # adding a constant to every marker score leaves the loss unchanged
        inst = make_inst(4, {1})
        reps = reps_for(4, seed=3)
        bank = dot_bank(taus=[1.0, 1.0, 1.0])
        cfg = LossConfig(0.5, SimilarityKind(DOT))
        base = qe_loss(reps, inst, bank, cfg, EVAL)
        # shift all dot scores by adding c * q/|q|^2 to every sentence vector
        c = 3.7
        shifted = MarkerReps(
            q=reps.q.copy(), s=reps.s + c * reps.q / float(reps.q @ reps.q)
        )
        assert qe_loss(shifted, inst, bank, cfg, EVAL) == pytest.approx(base, abs=1e-10)

    def test_scale_invariance_cosine_family(self):
        inst = make_inst(4, {1}, qtype=1)
        reps = reps_for(4, seed=4)
        for kind in (SimilarityKind(COSINE), SimilarityKind(PROJECTED_COSINE, rank=4)):
            bank = init_bank(kind, 3, 8, [0.4] * 3, seed=1)
            cfg = LossConfig(0.5, kind, augment_wrong_type=True)
            base = qe_loss(reps, inst, bank, cfg, EVAL)
            scaled = MarkerReps(q=2.5 * reps.q, s=reps.s.copy())
            scaled.s[2] *= 17.0
            assert qe_loss(scaled, inst, bank, cfg, EVAL) == pytest.approx(base, abs=1e-10)

    def test_nonnegative_and_monotone(self):
        inst = make_inst(4, {0})
        bank = dot_bank()
        cfg = LossConfig(0.5, SimilarityKind(DOT))
        rng = np.random.default_rng(5)
        for _ in range(50):
            reps = MarkerReps(q=np.zeros(8), s=rng.normal(size=(4, 8)))
            reps.q[0] = 1.0
            base = qe_loss(reps, inst, bank, cfg, EVAL)
            assert base >= 0.0
            up = MarkerReps(q=reps.q, s=reps.s.copy())
            up.s[0, 0] += 0.5  # raise the positive's score
            assert qe_loss(up, inst, bank, cfg, EVAL) < base
            down = MarkerReps(q=reps.q, s=reps.s.copy())
            down.s[2, 0] += 0.5  # raise a negative's score
            assert qe_loss(down, inst, bank, cfg, EVAL) > base

    def test_gradient_matches_finite_differences(self):
        inst = make_inst(4, {0, 2}, qtype=1)
        reps = reps_for(4, seed=6)
        kind = SimilarityKind(PROJECTED_COSINE, rank=4)
        bank = init_bank(kind, 3, 8, [0.3, 0.5, 0.9], seed=2)
        cfg = LossConfig(0.5, kind, augment_wrong_type=True)
        loss, dreps, dbank = qe_loss_grad(reps, inst, bank, cfg, EVAL)
        h = 1e-6
        worst = 0.0
        for arr, grad in [(reps.q, dreps.q), (reps.s, dreps.s)] + [
            (bank.to_flat()[n], g) for n, g in dbank.items()
        ]:
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                ij = it.multi_index
                orig = arr[ij]
                arr[ij] = orig + h
                lp = qe_loss(reps, inst, bank, cfg, EVAL)
                arr[ij] = orig - h
                lm = qe_loss(reps, inst, bank, cfg, EVAL)
                arr[ij] = orig
                fd = (lp - lm) / (2 * h)
                worst = max(worst, abs(fd - grad[ij]) / max(1e-8, abs(fd) + abs(grad[ij])))
        assert worst < 1e-6


class TestQALoss:
    def test_zero_weights_give_ln2(self):
        inst = make_inst(5, {0, 3})
        reps = reps_for(5)
        clf = EvidenceClassifier(w=np.zeros(8), b=0.0)
        assert qa_loss(reps, inst, clf) == pytest.approx(math.log(2), abs=1e-12)

    def test_separating_logits_saturate(self):
        inst = make_inst(2, {0})
        reps = MarkerReps(q=np.zeros(8), s=np.vstack([np.ones(8), -np.ones(8)]))
        clf = EvidenceClassifier(w=np.full(8, 2.5), b=0.0)  # logits +-20
        assert qa_loss(reps, inst, clf) < 1e-8

    def test_extended_precision_oracle(self):
        # oracle: per-term BCE summation at 50-digit precision
        mpmath.mp.dps = 50
        rng = np.random.default_rng(8)
        inst = make_inst(6, {1, 4})
        reps = reps_for(6, seed=8)
        clf = EvidenceClassifier(w=rng.normal(size=8), b=float(rng.normal()))
        total = mpmath.mpf(0)
        for j in range(6):
            z = mpmath.mpf(float(reps.s[j] @ clf.w + clf.b))
            p = 1 / (1 + mpmath.e**-z)
            y = 1 if j in inst.evidence else 0
            total += -(y * mpmath.log(p) + (1 - y) * mpmath.log(1 - p))
        assert qa_loss(reps, inst, clf) == pytest.approx(float(total / 6), abs=1e-12)

    def test_gradients_match_finite_differences(self):
        inst = make_inst(4, {0, 2})
        reps = reps_for(4, seed=9)
        rng = np.random.default_rng(9)
        clf = EvidenceClassifier(w=rng.normal(size=8), b=0.3)
        loss, dreps, dw, db = qa_loss_grad(reps, inst, clf)
        h = 1e-6
        for j in range(4):
            for c in range(8):
                orig = reps.s[j, c]
                reps.s[j, c] = orig + h
                lp = qa_loss(reps, inst, clf)
                reps.s[j, c] = orig - h
                lm = qa_loss(reps, inst, clf)
                reps.s[j, c] = orig
                assert (lp - lm) / (2 * h) == pytest.approx(dreps.s[j, c], rel=1e-5, abs=1e-10)
        clf.b += h
        lp = qa_loss(reps, inst, clf)
        clf.b -= 2 * h
        lm = qa_loss(reps, inst, clf)
        clf.b += h
        assert (lp - lm) / (2 * h) == pytest.approx(db, rel=1e-5)


class TestCombinedLoss:
    def test_endpoints_exact(self):
        assert combined_loss(1.23, 9.87, 0.0) == 1.23
        assert combined_loss(1.23, 9.87, 1.0) == 9.87

    def test_affine(self):
        assert combined_loss(1.0, 2.0, 0.4) == pytest.approx(1.4, abs=1e-15)

    def test_out_of_range_rejected(self):
        with pytest.raises(ConfigError):
            combined_loss(1.0, 2.0, 1.5)
        with pytest.raises(ConfigError):
            LossConfig(-0.1, SimilarityKind(DOT))
