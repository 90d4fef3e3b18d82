"""The question-evidence contrastive loss, the evidence-classification loss,
and their lambda-weighted combination.

The contrastive term is a softmax over candidate (sentence, projecting-type)
pairs; its value is -log of the summed probability mass on the positives. A
positive is an evidence sentence scored under the instance's own question
type; an evidence sentence scored under a wrong type is still a negative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import QAInstance
from .encoder import MarkerReps
from .errors import ConfigError, ContractError
from .similarity import ProjectionBank, SimContext, SimilarityKind, _sim_backward, _sim_forward


@dataclass(frozen=True)
class LossConfig:
    mix: float  # lambda: weight on the contrastive term
    kind: SimilarityKind
    augment_wrong_type: bool = False
    skip_no_evidence: bool = True

    def __post_init__(self):
        if not (0.0 <= self.mix <= 1.0):
            raise ConfigError(f"mixing weight must lie in [0, 1], got {self.mix}")


@dataclass(frozen=True)
class CandidatePair:
    sentence: int
    proj_type: int
    positive: bool


@dataclass
class EvidenceClassifier:
    """Per-sentence logistic evidence classifier on raw marker vectors."""

    w: np.ndarray
    b: float

    @classmethod
    def init(cls, dim: int, seed: int = 0) -> "EvidenceClassifier":
        rng = np.random.default_rng(seed)
        return cls(w=rng.normal(0.0, 1.0 / np.sqrt(dim), dim), b=0.0)

    def to_flat(self, prefix: str = "clf") -> dict[str, np.ndarray]:
        return {f"{prefix}.w": self.w, f"{prefix}.b": np.array([self.b])}

    def load_flat(self, flat: dict[str, np.ndarray], prefix: str = "clf") -> None:
        self.w = flat[f"{prefix}.w"]
        self.b = float(flat[f"{prefix}.b"][0])


def enumerate_candidates(
    inst: QAInstance, num_types: int, augment_wrong_type: bool
) -> list[CandidatePair]:
    """Deterministic candidate ordering: sentence-major, then projecting type."""
    if num_types < 1:
        raise ConfigError("num_types must be >= 1")
    out = []
    for j in range(inst.num_sentences):
        if augment_wrong_type:
            for k in range(num_types):
                out.append(
                    CandidatePair(j, k, positive=(j in inst.evidence and k == inst.qtype.id))
                )
        else:
            out.append(
                CandidatePair(j, inst.qtype.id, positive=(j in inst.evidence))
            )
    return out


def _qe_scores_forward(reps, inst, bank, cfg, ctx):
    candidates = enumerate_candidates(inst, bank.num_types, cfg.augment_wrong_type)
    scores = np.empty(len(candidates))
    caches = []
    for i, c in enumerate(candidates):
        value, cache = _sim_forward(
            cfg.kind, reps.s[c.sentence], reps.q, c.proj_type, bank, ctx, record=False
        )
        scores[i] = value / bank.tau(c.proj_type)
        caches.append(cache)
    return candidates, scores, caches


def _softmax_nll(scores: np.ndarray, positive: np.ndarray):
    shifted = scores - scores.max()
    e = np.exp(shifted)
    probs = e / e.sum()
    pos_mass = float(probs[positive].sum())
    loss = -float(np.log(pos_mass))
    dscores = probs - np.where(positive, probs / pos_mass, 0.0)
    return loss, dscores


def qe_loss(
    reps: MarkerReps,
    inst: QAInstance,
    bank: ProjectionBank,
    cfg: LossConfig,
    ctx: SimContext,
) -> float | None:
    """Contrastive loss for one instance; None when the instance is skipped
    (unanswerable or zero evidence, with skipping enabled)."""
    if not inst.eligible_for_contrast:
        if cfg.skip_no_evidence:
            return None
        raise ContractError(
            f"instance {inst.id} has no usable evidence and skipping is disabled"
        )
    _, scores, _ = _qe_scores_forward(reps, inst, bank, cfg, ctx)
    positive = _positive_mask(inst, bank, cfg)
    loss, _ = _softmax_nll(scores, positive)
    return loss


def _positive_mask(inst, bank, cfg) -> np.ndarray:
    candidates = enumerate_candidates(inst, bank.num_types, cfg.augment_wrong_type)
    return np.array([c.positive for c in candidates])


def qe_loss_grad(
    reps: MarkerReps,
    inst: QAInstance,
    bank: ProjectionBank,
    cfg: LossConfig,
    ctx: SimContext,
):
    """(loss, grad wrt reps, grad dict for bank params); None when skipped."""
    if not inst.eligible_for_contrast:
        if cfg.skip_no_evidence:
            return None
        raise ContractError(
            f"instance {inst.id} has no usable evidence and skipping is disabled"
        )
    candidates, scores, caches = _qe_scores_forward(reps, inst, bank, cfg, ctx)
    positive = np.array([c.positive for c in candidates])
    loss, dscores = _softmax_nll(scores, positive)

    dreps = reps.zeros_like()
    dbank: dict[str, np.ndarray] = {}
    for i in reversed(range(len(candidates))):
        c = candidates[i]
        upstream = dscores[i] / bank.tau(c.proj_type)
        if upstream == 0.0:
            continue
        ds, dq, dparams = _sim_backward(cfg.kind, c.proj_type, bank, caches[i], upstream)
        dreps.s[c.sentence] += ds
        dreps.q += dq
        for name, g in dparams.items():
            if name in dbank:
                dbank[name] += g
            else:
                dbank[name] = g
    return loss, dreps, dbank


def qa_loss(reps: MarkerReps, inst: QAInstance, clf: EvidenceClassifier) -> float:
    """Mean binary cross-entropy of the per-sentence evidence classifier."""
    value, _, _, _ = qa_loss_grad(reps, inst, clf)
    return value


def qa_loss_grad(reps: MarkerReps, inst: QAInstance, clf: EvidenceClassifier):
    """(loss, grad wrt reps, dw, db)."""
    m = inst.num_sentences
    if m < 1:
        raise ContractError("instance has no sentences")
    z = reps.s @ clf.w + clf.b
    y = np.zeros(m)
    y[list(inst.evidence)] = 1.0
    # stable BCE with logits
    loss = float(np.mean(np.maximum(z, 0.0) - y * z + np.log1p(np.exp(-np.abs(z)))))
    dz = (1.0 / (1.0 + np.exp(-z)) - y) / m
    dreps = reps.zeros_like()
    dreps.s = np.outer(dz, clf.w)
    dw = reps.s.T @ dz
    db = float(dz.sum())
    return loss, dreps, dw, db


def combined_loss(qa: float, qe: float, mix: float) -> float:
    """L = (1 - lambda) * L_QA + lambda * L_QE."""
    if not (0.0 <= mix <= 1.0):
        raise ConfigError(f"mixing weight must lie in [0, 1], got {mix}")
    return (1.0 - mix) * qa + mix * qe
