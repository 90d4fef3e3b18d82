"""Similarity functions between sentence and question marker vectors.

Four kinds: raw dot product, raw cosine, a per-type bilinear form s^T W_k q,
and a per-type projected cosine cos(Ws_k s, Wq_k q) with the projections
mapping into a lower rank r. Dropout (inverted scaling) is applied to the
projected vectors in train mode only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import QuestionType
from .errors import ConfigError, ContractError, DegenerateVectorError, ReplayError

NORM_EPS = 1e-12

DOT = "dot"
COSINE = "cosine"
BILINEAR = "bilinear"
PROJECTED_COSINE = "projected-cosine"

KIND_NAMES = (DOT, COSINE, BILINEAR, PROJECTED_COSINE)


@dataclass(frozen=True)
class SimilarityKind:
    name: str
    rank: int | None = None  # only meaningful for projected-cosine

    def __post_init__(self):
        if self.name not in KIND_NAMES:
            raise ConfigError(f"unknown similarity kind {self.name!r}")
        if self.name == PROJECTED_COSINE:
            if self.rank is None or self.rank < 1:
                raise ConfigError("projected-cosine requires rank >= 1")

    @property
    def parametric(self) -> bool:
        return self.name in (BILINEAR, PROJECTED_COSINE)


@dataclass
class ProjectionBank:
    """Per-question-type projection parameters and temperatures.

    For bilinear, ``w[k]`` is d x d. For projected cosine, ``ws[k]`` and
    ``wq[k]`` are r x d. When ``tied`` is true a single matrix is shared by
    every type (index 0 holds it) while temperatures stay per type.
    """

    kind: SimilarityKind
    dim: int
    taus: list[float]
    dropout_rate: float = 0.0
    tied: bool = False
    w: list[np.ndarray] = field(default_factory=list)
    ws: list[np.ndarray] = field(default_factory=list)
    wq: list[np.ndarray] = field(default_factory=list)

    @property
    def num_types(self) -> int:
        return len(self.taus)

    def _slot(self, k: int) -> int:
        return 0 if self.tied else k

    def tau(self, k: int) -> float:
        return self.taus[k]

    def bilinear_w(self, k: int) -> np.ndarray:
        return self.w[self._slot(k)]

    def projections(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        i = self._slot(k)
        return self.ws[i], self.wq[i]

    def to_flat(self, prefix: str = "bank") -> dict[str, np.ndarray]:
        out = {}
        if self.kind.name == BILINEAR:
            for i, m in enumerate(self.w):
                out[f"{prefix}.type{i}.w"] = m
        elif self.kind.name == PROJECTED_COSINE:
            for i in range(len(self.ws)):
                out[f"{prefix}.type{i}.ws"] = self.ws[i]
                out[f"{prefix}.type{i}.wq"] = self.wq[i]
        return out

    def load_flat(self, flat: dict[str, np.ndarray], prefix: str = "bank") -> None:
        if self.kind.name == BILINEAR:
            for i in range(len(self.w)):
                self.w[i] = flat[f"{prefix}.type{i}.w"]
        elif self.kind.name == PROJECTED_COSINE:
            for i in range(len(self.ws)):
                self.ws[i] = flat[f"{prefix}.type{i}.ws"]
                self.wq[i] = flat[f"{prefix}.type{i}.wq"]


def init_bank(
    kind: SimilarityKind,
    num_types: int,
    dim: int,
    taus: list[float],
    dropout_rate: float = 0.0,
    seed: int = 0,
    tied: bool = False,
) -> ProjectionBank:
    """Gaussian projections with standard deviation 1/sqrt(d), per-seed."""
    if len(taus) != num_types:
        raise ConfigError(f"expected {num_types} temperatures, got {len(taus)}")
    if any(t <= 0 for t in taus):
        raise ConfigError("all temperatures must be positive")
    if not (0.0 <= dropout_rate < 1.0):
        raise ConfigError("dropout_rate must lie in [0, 1)")
    if kind.name == PROJECTED_COSINE and kind.rank > dim:
        raise ConfigError(f"rank {kind.rank} exceeds dimension {dim}")

    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(dim)
    bank = ProjectionBank(
        kind=kind, dim=dim, taus=list(taus), dropout_rate=dropout_rate, tied=tied
    )
    slots = 1 if tied else num_types
    if kind.name == BILINEAR:
        bank.w = [rng.normal(0.0, scale, (dim, dim)) for _ in range(slots)]
    elif kind.name == PROJECTED_COSINE:
        for _ in range(slots):
            bank.ws.append(rng.normal(0.0, scale, (kind.rank, dim)))
            bank.wq.append(rng.normal(0.0, scale, (kind.rank, dim)))
    return bank


def rank_grid(dim: int) -> list[int]:
    """The projection-dimension search grid d x {d, d/2, d/4, d/8}."""
    return [max(1, dim // f) for f in (1, 2, 4, 8)]


class SimContext:
    """Mode plus the dropout rng; records masks so backward can replay them.

    Eval mode never consumes randomness. Train-mode forward calls push their
    masks onto a stack; backward calls pop in reverse (LIFO) order.
    """

    def __init__(self, mode: str = "eval", rng: np.random.Generator | None = None):
        if mode not in ("train", "eval"):
            raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
        if mode == "train" and rng is None:
            raise ConfigError("train mode requires an rng for dropout masks")
        self.mode = mode
        self.rng = rng
        self._masks: list[tuple[np.ndarray, np.ndarray]] = []

    @property
    def training(self) -> bool:
        return self.mode == "train"

    def draw_masks(self, shape, rate: float, record: bool = True):
        keep = 1.0 - rate
        mask_s = (self.rng.random(shape) < keep) / keep
        mask_q = (self.rng.random(shape) < keep) / keep
        if record:
            self._masks.append((mask_s, mask_q))
        return mask_s, mask_q

    def replay_masks(self, shape) -> tuple[np.ndarray, np.ndarray]:
        if not self._masks:
            raise ReplayError("no recorded dropout mask to replay")
        mask_s, mask_q = self._masks.pop()
        if mask_s.shape != tuple(shape):
            raise ReplayError(
                f"recorded mask shape {mask_s.shape} does not match {tuple(shape)}"
            )
        return mask_s, mask_q


def _checked_norm(v: np.ndarray, what: str) -> float:
    n = float(np.linalg.norm(v))
    if n < NORM_EPS:
        raise DegenerateVectorError(f"{what} has norm {n:.3e} below {NORM_EPS}")
    return n


def _cosine_forward(a: np.ndarray, b: np.ndarray, what: str):
    na = _checked_norm(a, f"{what} (first arg)")
    nb = _checked_norm(b, f"{what} (second arg)")
    value = float(a @ b) / (na * nb)
    return value, (a, b, na, nb, value)


def _cosine_backward(cache, upstream: float):
    a, b, na, nb, value = cache
    da = upstream * (b / (na * nb) - value * a / (na * na))
    db = upstream * (a / (na * nb) - value * b / (nb * nb))
    return da, db


def similarity(
    kind: SimilarityKind,
    s: np.ndarray,
    q: np.ndarray,
    k: QuestionType | int,
    bank: ProjectionBank,
    ctx: SimContext,
) -> float:
    """Similarity score of a sentence vector against the question vector
    under question type k."""
    value, _ = _sim_forward(kind, s, q, _type_id(k), bank, ctx)
    return value


def similarity_backward(
    kind: SimilarityKind,
    s: np.ndarray,
    q: np.ndarray,
    k: QuestionType | int,
    bank: ProjectionBank,
    ctx: SimContext,
    upstream: float,
):
    """Gradients (ds, dq, bank_param_grads) of the paired forward call.

    In train mode the dropout masks of the forward call are replayed from
    the shared context (LIFO), so backward calls must mirror forward order.
    """
    k = _type_id(k)
    if ctx.training and kind.name == PROJECTED_COSINE and bank.dropout_rate > 0.0:
        mask_s, mask_q = ctx.replay_masks((kind.rank,))
        _, cache = _sim_forward(kind, s, q, k, bank, ctx, masks=(mask_s, mask_q))
    else:
        _, cache = _sim_forward(kind, s, q, k, bank, ctx, masks=None)
    return _sim_backward(kind, k, bank, cache, upstream)


def _type_id(k) -> int:
    return k.id if isinstance(k, QuestionType) else int(k)


def _sim_forward(kind, s, q, k, bank, ctx, masks=None, record=True):
    """Forward pass returning (value, cache) for the matching backward."""
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(q))):
        raise ContractError("non-finite marker vector passed to similarity")

    if kind.name == DOT:
        return float(s @ q), (s, q)
    if kind.name == COSINE:
        return _cosine_forward(s, q, "cosine input")
    if kind.name == BILINEAR:
        w = bank.bilinear_w(k)
        wq_vec = w @ q
        return float(s @ wq_vec), (s, q, w, wq_vec)

    ws, wq = bank.projections(k)
    sk = ws @ s
    qk = wq @ q
    if ctx.training and bank.dropout_rate > 0.0:
        if masks is None:
            mask_s, mask_q = ctx.draw_masks(sk.shape, bank.dropout_rate, record=record)
        else:
            mask_s, mask_q = masks
        sk_d = sk * mask_s
        qk_d = qk * mask_q
    else:
        mask_s = mask_q = None
        sk_d, qk_d = sk, qk
    value, cos_cache = _cosine_forward(sk_d, qk_d, "projected vector")
    return value, (s, q, ws, wq, sk, qk, mask_s, mask_q, cos_cache)


def _sim_backward(kind, k, bank, cache, upstream: float):
    if kind.name == DOT:
        s, q = cache
        return upstream * q, upstream * s, {}
    if kind.name == COSINE:
        ds, dq = _cosine_backward(cache, upstream)
        return ds, dq, {}
    if kind.name == BILINEAR:
        s, q, w, wq_vec = cache
        ds = upstream * wq_vec
        dq = upstream * (w.T @ s)
        dw = upstream * np.outer(s, q)
        return ds, dq, {f"bank.type{bank._slot(k)}.w": dw}

    s, q, ws, wq, sk, qk, mask_s, mask_q, cos_cache = cache
    dsk_d, dqk_d = _cosine_backward(cos_cache, upstream)
    dsk = dsk_d * mask_s if mask_s is not None else dsk_d
    dqk = dqk_d * mask_q if mask_q is not None else dqk_d
    ds = ws.T @ dsk
    dq = wq.T @ dqk
    slot = bank._slot(k)
    return ds, dq, {
        f"bank.type{slot}.ws": np.outer(dsk, s),
        f"bank.type{slot}.wq": np.outer(dqk, q),
    }


def project(
    bank: ProjectionBank, k: QuestionType | int, v: np.ndarray, which: str, ctx: SimContext
) -> np.ndarray:
    """The pre-normalization projected vector for one side ('s' or 'q').

    Exposed so the dropout-expectation property can be checked directly.
    """
    ws, wq = bank.projections(_type_id(k))
    m = ws if which == "s" else wq
    out = m @ v
    if ctx.training and bank.dropout_rate > 0.0:
        keep = 1.0 - bank.dropout_rate
        mask = (ctx.rng.random(out.shape) < keep) / keep
        out = out * mask
    return out
