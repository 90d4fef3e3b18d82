"""Ranking metrics, significance testing, and embedding analysis.

Per-type mean average precision of question-sentence similarity rankings,
set-based evidence F1, the paired bootstrap over per-example metrics, and a
2-D PCA export of normalized marker representations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import QAInstance
from .errors import ContractError
from .similarity import SimContext, _sim_forward


@dataclass
class RankingCase:
    scores: np.ndarray
    positives: frozenset[int]
    qtype_label: str = ""


def average_precision(case: RankingCase) -> float:
    """AP with descending score order, ties broken by ascending index."""
    if not case.positives:
        raise ContractError("average precision undefined without positives")
    scores = np.asarray(case.scores, dtype=np.float64)
    order = sorted(range(scores.size), key=lambda j: (-scores[j], j))
    hits = 0
    total = 0.0
    for rank, j in enumerate(order, start=1):
        if j in case.positives:
            hits += 1
            total += hits / rank
    return total / len(case.positives)


def score_instance(model, inst: QAInstance) -> np.ndarray:
    """Eval-mode similarity of every sentence marker against the question,
    under the instance's correct question type."""
    from .corpus import assemble_sequence
    from .encoder import encode

    seq = assemble_sequence(inst, model.vocab)
    reps = encode(seq, model.enc)
    ctx = SimContext("eval")
    scores = np.empty(inst.num_sentences)
    for j in range(inst.num_sentences):
        scores[j], _ = _sim_forward(
            model.kind, reps.s[j], reps.q, inst.qtype.id, model.bank, ctx
        )
    return scores


def per_instance_ap(model, dataset: list[QAInstance]) -> list[tuple[str, str, float]]:
    """(instance id, type label, AP) for every instance with evidence."""
    rows = []
    for inst in dataset:
        if not inst.evidence:
            continue
        scores = score_instance(model, inst)
        ap = average_precision(RankingCase(scores, inst.evidence, inst.qtype.label))
        rows.append((inst.id, inst.qtype.label, ap))
    return rows


def map_per_type(model, dataset: list[QAInstance]) -> dict[str, float]:
    """mAP grouped by question type plus an 'all' row.

    Types with zero evaluable instances are absent from the result, not zero.
    """
    rows = per_instance_ap(model, dataset)
    by_type: dict[str, list[float]] = {}
    for _, label, ap in rows:
        by_type.setdefault(label, []).append(ap)
    out = {label: float(np.mean(aps)) for label, aps in sorted(by_type.items())}
    if rows:
        out["all"] = float(np.mean([ap for _, _, ap in rows]))
    return out


def evidence_f1(predicted: set[int], gold: set[int]) -> tuple[float, float, float]:
    """Set precision/recall/F1; both-empty counts as perfect (F1 = 1)."""
    predicted, gold = set(predicted), set(gold)
    if not predicted and not gold:
        return 1.0, 1.0, 1.0
    tp = len(predicted & gold)
    precision = tp / len(predicted) if predicted else 0.0
    recall = tp / len(gold) if gold else 0.0
    if precision + recall == 0.0:
        return precision, recall, 0.0
    return precision, recall, 2 * precision * recall / (precision + recall)


def predict_evidence(model, inst: QAInstance) -> set[int]:
    """Sentences whose classifier logit is positive."""
    from .corpus import assemble_sequence
    from .encoder import encode

    seq = assemble_sequence(inst, model.vocab)
    reps = encode(seq, model.enc)
    z = reps.s @ model.clf.w + model.clf.b
    return {int(j) for j in np.flatnonzero(z > 0.0)}


def mean_evidence_f1(model, dataset: list[QAInstance]) -> float:
    """Mean per-instance evidence F1 over the dataset."""
    f1s = [evidence_f1(predict_evidence(model, inst), set(inst.evidence))[2] for inst in dataset]
    return float(np.mean(f1s)) if f1s else 0.0


def paired_bootstrap(
    per_example_a, per_example_b, resamples: int = 10_000, seed: int = 0
) -> float:
    """p-value for mean(a) > mean(b) by resampling example indices.

    p is the fraction of resamples where mean(a) <= mean(b); ties count
    against the hypothesis, so p(a, b) + p(b, a) >= 1.
    """
    a = np.asarray(per_example_a, dtype=np.float64)
    b = np.asarray(per_example_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ContractError("paired_bootstrap needs two equal-length vectors of >= 2")
    rng = np.random.default_rng(seed)
    diff = a - b
    idx = rng.integers(0, a.size, size=(resamples, a.size))
    means = diff[idx].mean(axis=1)
    return float(np.mean(means <= 0.0))


@dataclass
class PCAResult:
    coords: np.ndarray  # n x components
    explained_variance_ratio: np.ndarray
    components: np.ndarray  # components x d, orthonormal rows
    requested_components: int

    @property
    def reduced(self) -> bool:
        return self.coords.shape[1] < self.requested_components


def pca_embed(vectors, components: int = 2) -> PCAResult:
    """PCA of L2-normalized vectors.

    Mean-centered; principal axes from the eigendecomposition of the sample
    covariance; each component's largest-magnitude coordinate is made
    positive so the output is sign-deterministic. When the data rank is
    below the request, the available components are returned and the result
    is flagged as reduced.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < components:
        raise ContractError("need at least `components` vectors of equal dimension")
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms < 1e-300):
        raise ContractError("cannot normalize a zero vector")
    x = x / norms
    x = x - x.mean(axis=0)

    cov = (x.T @ x) / max(1, x.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.maximum(evals[order], 0.0)
    evecs = evecs[:, order]

    total = float(evals.sum())
    rank = int(np.sum(evals > max(total, 1e-300) * 1e-12))
    keep = min(components, max(rank, 1))
    axes = evecs[:, :keep].T.copy()
    for i in range(axes.shape[0]):
        j = int(np.argmax(np.abs(axes[i])))
        if axes[i, j] < 0:
            axes[i] = -axes[i]
    ratios = evals[:keep] / total if total > 0 else np.zeros(keep)
    return PCAResult(
        coords=x @ axes.T,
        explained_variance_ratio=ratios,
        components=axes,
        requested_components=components,
    )
