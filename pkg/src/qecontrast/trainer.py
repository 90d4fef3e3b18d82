"""Joint optimization of the encoder, projection bank, and evidence
classifier under the combined loss, plus the hyperparameter grid sweep."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .corpus import QAInstance, QuestionType, Vocabulary, assemble_sequence, question_types_of
from .encoder import EncoderConfig, EncoderParams, encode, encode_backward, init_params
from .errors import ConfigError, ContractError
from .evaluation import map_per_type, mean_evidence_f1
from .loss import EvidenceClassifier, LossConfig, combined_loss, qa_loss_grad, qe_loss, qe_loss_grad
from .similarity import PROJECTED_COSINE, ProjectionBank, SimContext, SimilarityKind, init_bank


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    batch_size: int = 8
    peak_lr: float = 3e-3
    warmup_frac: float = 0.10
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    loss: LossConfig = field(default_factory=lambda: LossConfig(0.4, SimilarityKind(PROJECTED_COSINE, rank=8)))
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    taus: tuple[float, ...] = (0.4,)
    dropout_rate: float = 0.1
    tied_projection: bool = False
    # sweep grids (consumed by grid_search only)
    tau_grid: tuple[float, ...] = (0.2, 0.4, 0.6, 0.8, 1.0)
    lambda_grid: tuple[float, ...] = (0.2, 0.4, 0.6, 0.8, 1.0)
    rank_divisors: tuple[int, ...] = (1, 2, 4, 8)
    tie_tau_in_sweep: bool = True

    def __post_init__(self):
        if not (0.0 < self.warmup_frac < 1.0):
            raise ConfigError("warmup_frac must lie in (0, 1)")
        if self.peak_lr <= 0:
            raise ConfigError("peak_lr must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs >= 0 and batch_size >= 1 required")


@dataclass
class RunMetrics:
    type_labels: list[str]
    rows: list[dict] = field(default_factory=list)

    def header(self) -> list[str]:
        return (
            ["epoch", "split", "loss_qa", "loss_qe", "loss_combined"]
            + [f"map_type_{lab}" for lab in self.type_labels]
            + ["evidence_f1", "seconds"]
        )

    def to_csv(self) -> str:
        lines = [",".join(self.header())]
        for row in self.rows:
            cells = []
            for col in self.header():
                v = row.get(col, "")
                cells.append(f"{v:.12g}" if isinstance(v, float) else str(v))
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


@dataclass
class Model:
    """Everything needed to score a dataset: encoder, bank, classifier, vocab."""

    enc: EncoderParams
    bank: ProjectionBank
    clf: EvidenceClassifier
    vocab: Vocabulary
    types: list[QuestionType]

    @property
    def kind(self) -> SimilarityKind:
        return self.bank.kind

    def to_flat(self) -> dict[str, np.ndarray]:
        return {**self.enc.to_flat(), **self.bank.to_flat(), **self.clf.to_flat()}


def triangular_lr(step: int, total_steps: int, warmup_frac: float, peak: float) -> float:
    """Linear ramp 0 -> peak over the warmup steps, then linear decay to 0."""
    if total_steps < 1:
        raise ContractError("total_steps must be >= 1")
    if not (0 <= step <= total_steps):
        raise ContractError(f"step {step} outside [0, {total_steps}]")
    warm = math.ceil(warmup_frac * total_steps)
    warm = min(max(warm, 1), total_steps)
    if step <= warm:
        return peak * step / warm
    return peak * (total_steps - step) / (total_steps - warm)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def init(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
):
    """Standard Adam with bias correction; updates params in place."""
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise ContractError(f"non-finite gradient in tensor {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        mhat = m / (1 - beta1**t)
        vhat = v / (1 - beta2**t)
        p -= lr * mhat / (np.sqrt(vhat) + eps)
    return params, state


def build_model(cfg: TrainConfig, dataset: list[QAInstance]) -> Model:
    """Initialize a model sized for the dataset, deterministically per seed."""
    types = question_types_of(dataset)
    k = len(types)
    taus = list(cfg.taus)
    if len(taus) == 1 and k > 1:
        taus = taus * k
    if len(taus) != k:
        raise ConfigError(f"need {k} temperatures (or one shared), got {len(taus)}")
    vocab = Vocabulary.from_instances(dataset)
    enc_cfg = replace(cfg.encoder, seed=cfg.seed)
    enc = init_params(enc_cfg, len(vocab))
    bank = init_bank(
        cfg.loss.kind,
        k,
        enc_cfg.hidden_dim,
        taus,
        dropout_rate=cfg.dropout_rate,
        seed=cfg.seed + 1,
        tied=cfg.tied_projection,
    )
    clf = EvidenceClassifier.init(enc_cfg.hidden_dim, seed=cfg.seed + 2)
    return Model(enc=enc, bank=bank, clf=clf, vocab=vocab, types=types)


def _epoch_eval(model: Model, dataset, label_order) -> dict:
    maps = map_per_type(model, dataset)
    row = {f"map_type_{lab}": maps.get(lab, "") for lab in label_order}
    row["evidence_f1"] = mean_evidence_f1(model, dataset)
    return row


def train(
    dataset: list[QAInstance],
    cfg: TrainConfig,
    val_dataset: list[QAInstance] | None = None,
) -> tuple[Model, RunMetrics]:
    """Full training run; deterministic given config and seed."""
    if not dataset:
        raise ContractError("dataset is empty")
    mix = cfg.loss.mix
    eligible = [inst.eligible_for_contrast for inst in dataset]
    if mix > 0 and not any(eligible):
        raise ConfigError("no instance is eligible for the contrastive loss but lambda > 0")

    model = build_model(cfg, dataset)
    seqs = [assemble_sequence(inst, model.vocab) for inst in dataset]
    flat = model.to_flat()
    state = AdamState.init(flat)
    shuffle_rng = np.random.default_rng(cfg.seed + 3)
    dropout_rng = np.random.default_rng(cfg.seed + 4)

    labels = [t.label for t in question_types_of(dataset + (val_dataset or []))]
    metrics = RunMetrics(type_labels=labels)

    n = len(dataset)
    batches_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = max(1, cfg.epochs * batches_per_epoch)
    step = 0

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n)
        qa_sum = qe_sum = 0.0
        qa_count = qe_count = 0
        for b in range(batches_per_epoch):
            idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            n_batch = len(idx)
            n_elig = sum(1 for i in idx if eligible[i])
            accum = {name: np.zeros_like(p) for name, p in flat.items()}

            for i in idx:
                inst, seq = dataset[i], seqs[i]
                reps = encode(seq, model.enc)
                qa, dreps_qa, dw, db = qa_loss_grad(reps, inst, model.clf)
                qa_sum += qa
                qa_count += 1

                cot = dreps_qa
                cot.q *= (1 - mix) / n_batch
                cot.s *= (1 - mix) / n_batch
                accum["clf.w"] += (1 - mix) / n_batch * dw
                accum["clf.b"] += (1 - mix) / n_batch * db

                if eligible[i]:
                    if mix > 0:
                        ctx = SimContext("train", dropout_rng)
                        qe, dreps_qe, dbank = qe_loss_grad(reps, inst, model.bank, cfg.loss, ctx)
                        cot.q += mix / n_elig * dreps_qe.q
                        cot.s += mix / n_elig * dreps_qe.s
                        for name, g in dbank.items():
                            accum[name] += mix / n_elig * g
                    else:
                        # reported but never back-propagated
                        qe = qe_loss(reps, inst, model.bank, cfg.loss, SimContext("eval"))
                    qe_sum += qe
                    qe_count += 1

                enc_grads = encode_backward(seq, model.enc, cot)
                for name, g in enc_grads.items():
                    accum[name] += g

            step += 1
            lr = triangular_lr(step, total_steps, cfg.warmup_frac, cfg.peak_lr)
            adam_step(flat, accum, state, lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
            model.clf.load_flat(flat)
            for name, p in flat.items():
                if not np.all(np.isfinite(p)):
                    raise ContractError(f"non-finite parameter in tensor {name!r}")

        qa_mean = qa_sum / max(1, qa_count)
        qe_mean = qe_sum / max(1, qe_count)
        base = {
            "epoch": epoch,
            "loss_qa": qa_mean,
            "loss_qe": qe_mean,
            "loss_combined": combined_loss(qa_mean, qe_mean, mix),
        }
        row = {**base, "split": "train", **_epoch_eval(model, dataset, labels)}
        row["seconds"] = time.perf_counter() - t0
        metrics.rows.append(row)
        if val_dataset:
            t1 = time.perf_counter()
            vrow = {**base, "split": "val", **_epoch_eval(model, val_dataset, labels)}
            vrow["seconds"] = time.perf_counter() - t1
            metrics.rows.append(vrow)
    return model, metrics


@dataclass
class SweepCell:
    taus: tuple[float, ...]
    mix: float
    rank: int | None
    joint_metric: float
    map_all: float
    evidence_f1: float

    def describe(self) -> str:
        tau_txt = "/".join(f"{t:g}" for t in self.taus)
        return f"tau={tau_txt} lambda={self.mix:g} rank={self.rank}"


def joint_metric(model: Model, dataset) -> tuple[float, float, float]:
    """0.5 * (overall mAP + mean evidence F1); the sweep ranking key."""
    maps = map_per_type(model, dataset)
    map_all = maps.get("all", 0.0)
    f1 = mean_evidence_f1(model, dataset)
    return 0.5 * (map_all + f1), map_all, f1


def grid_search(
    dataset: list[QAInstance],
    base_cfg: TrainConfig,
    val_dataset: list[QAInstance] | None = None,
) -> list[SweepCell]:
    """Exhaustive product over the tau/lambda/rank grids, same seed per cell,
    ranked by the validation joint metric (descending)."""
    if not (base_cfg.tau_grid and base_cfg.lambda_grid and base_cfg.rank_divisors):
        raise ConfigError("sweep grids must be non-empty")
    k = len(question_types_of(dataset))
    eval_set = val_dataset if val_dataset is not None else dataset

    if base_cfg.tie_tau_in_sweep:
        tau_cells = [(t,) * k for t in base_cfg.tau_grid]
    else:
        import itertools

        tau_cells = list(itertools.product(base_cfg.tau_grid, repeat=k))

    parametric = base_cfg.loss.kind.name == PROJECTED_COSINE
    d = base_cfg.encoder.hidden_dim
    ranks = [max(1, d // f) for f in base_cfg.rank_divisors] if parametric else [None]

    cells = []
    for taus in tau_cells:
        for mix in base_cfg.lambda_grid:
            for rank in ranks:
                kind = (
                    SimilarityKind(PROJECTED_COSINE, rank=rank) if parametric else base_cfg.loss.kind
                )
                cfg = replace(
                    base_cfg,
                    taus=taus,
                    loss=replace(base_cfg.loss, mix=mix, kind=kind),
                )
                model, _ = train(dataset, cfg)
                joint, map_all, f1 = joint_metric(model, eval_set)
                cells.append(
                    SweepCell(
                        taus=taus,
                        mix=mix,
                        rank=rank,
                        joint_metric=joint,
                        map_all=map_all,
                        evidence_f1=f1,
                    )
                )
    cells.sort(key=lambda c: (-c.joint_metric, c.taus, c.mix, c.rank or 0))
    return cells
