"""Datasets: parsing, synthetic generation, and marker-token sequence assembly.

The input layout concatenates the question and all context sentences into a
single token sequence::

    [<s>, q_1..q_n, </s>, s1_1..s1_m, </s>, s2_1.., ..., </s>, sM_1..]

``<s>`` stands for the question; the ``</s>`` immediately preceding sentence
j's tokens stands for sentence j, so a sequence with M sentences carries
exactly M+1 marker tokens.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, MalformedInstanceError, ParseError, SchemaError

BOS_TOKEN = "<s>"
EOS_TOKEN = "</s>"
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

BOS_ID = 0
EOS_ID = 1
PAD_ID = 2
UNK_ID = 3

_NUM_RESERVED = 4


@dataclass(frozen=True)
class QuestionType:
    """One question-type label with its contiguous integer id."""

    id: int
    label: str


@dataclass
class QAInstance:
    """A single QA example: question, context sentences, gold evidence.

    ``answer`` is carried through parsing for fidelity but never consumed.
    """

    id: str
    question: list[str]
    sentences: list[list[str]]
    evidence: frozenset[int]
    qtype: QuestionType
    answerable: bool = True
    answer: str | None = None

    def __post_init__(self):
        m = len(self.sentences)
        self.evidence = frozenset(self.evidence)
        for j in self.evidence:
            if not (0 <= j < m):
                raise MalformedInstanceError(
                    f"instance {self.id}: evidence index {j} out of range for {m} sentences"
                )

    @property
    def num_sentences(self) -> int:
        return len(self.sentences)

    @property
    def eligible_for_contrast(self) -> bool:
        """True when the contrastive loss may use this instance: it must be
        answerable and carry at least one evidence sentence."""
        return self.answerable and len(self.evidence) > 0


@dataclass
class MarkerSequence:
    """Tokenized concatenation with recorded marker positions."""

    tokens: list[int]
    question_marker_pos: int
    sentence_marker_pos: list[int]
    qtype: QuestionType
    evidence: frozenset[int]


class Vocabulary:
    """Bijective token <-> id map with four reserved ids."""

    def __init__(self, tokens=()):
        self._token_to_id: dict[str, int] = {}
        self._id_to_token: list[str] = [BOS_TOKEN, EOS_TOKEN, PAD_TOKEN, UNK_TOKEN]
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token in (BOS_TOKEN, EOS_TOKEN, PAD_TOKEN, UNK_TOKEN):
            raise ConfigError(f"token {token!r} collides with a reserved marker")
        tid = self._token_to_id.get(token)
        if tid is None:
            tid = len(self._id_to_token)
            self._token_to_id[token] = tid
            self._id_to_token.append(token)
        return tid

    def id_of(self, token: str) -> int:
        return self._token_to_id.get(token, UNK_ID)

    def token_of(self, tid: int) -> str:
        return self._id_to_token[tid]

    def __len__(self) -> int:
        return len(self._id_to_token)

    @classmethod
    def from_instances(cls, instances) -> "Vocabulary":
        vocab = cls()
        for inst in instances:
            for tok in inst.question:
                vocab.add(tok)
            for sent in inst.sentences:
                for tok in sent:
                    vocab.add(tok)
        return vocab


def assemble_sequence(inst: QAInstance, vocab: Vocabulary) -> MarkerSequence:
    """Build the concatenated marker-token sequence for one instance.

    ``question_marker_pos`` points at the leading ``<s>``;
    ``sentence_marker_pos[j]`` points at the ``</s>`` immediately preceding
    sentence j's tokens.
    """
    if not inst.question:
        raise MalformedInstanceError(f"instance {inst.id}: empty question")
    if not inst.sentences:
        raise MalformedInstanceError(f"instance {inst.id}: empty sentence list")
    for j, sent in enumerate(inst.sentences):
        if not sent:
            raise MalformedInstanceError(f"instance {inst.id}: sentence {j} is empty")

    tokens = [BOS_ID]
    tokens.extend(vocab.id_of(t) for t in inst.question)
    marker_pos = []
    for sent in inst.sentences:
        marker_pos.append(len(tokens))
        tokens.append(EOS_ID)
        tokens.extend(vocab.id_of(t) for t in sent)
    return MarkerSequence(
        tokens=tokens,
        question_marker_pos=0,
        sentence_marker_pos=marker_pos,
        qtype=inst.qtype,
        evidence=inst.evidence,
    )


def tokenize(text: str) -> list[str]:
    """Whitespace tokenization, lowercased."""
    return text.lower().split()


# ---------------------------------------------------------------------------
# Parsing: native line-delimited format plus hotpot-like / qasper-like adapters
# ---------------------------------------------------------------------------

FORMATS = ("native", "hotpot-like", "qasper-like")


def _types_from_labels(labels, declared=None) -> dict[str, QuestionType]:
    if declared is not None:
        table = {qt.label: qt for qt in declared}
        for lab in labels:
            if lab not in table:
                raise SchemaError(f"unknown question-type label {lab!r}")
        return table
    return {lab: QuestionType(i, lab) for i, lab in enumerate(sorted(set(labels)))}


def _native_record(rec: dict) -> dict:
    for key in ("id", "question", "question_type", "sentences", "evidence", "answerable"):
        if key not in rec:
            raise SchemaError(f"missing field {key!r}")
    if not isinstance(rec["sentences"], list) or not all(
        isinstance(s, str) for s in rec["sentences"]
    ):
        raise SchemaError("'sentences' must be a list of strings")
    if not isinstance(rec["evidence"], list):
        raise SchemaError("'evidence' must be a list of integers")
    return {
        "id": str(rec["id"]),
        "question": rec["question"],
        "question_type": rec["question_type"],
        "sentences": rec["sentences"],
        "evidence": [int(j) for j in rec["evidence"]],
        "answerable": bool(rec["answerable"]),
        "answer": rec.get("answer"),
    }


def _hotpot_record(rec: dict) -> dict:
    for key in ("_id", "question", "context", "supporting_facts", "type"):
        if key not in rec:
            raise SchemaError(f"missing field {key!r}")
    sentences = []
    offsets = {}
    for entry in rec["context"]:
        if not (isinstance(entry, list) and len(entry) == 2):
            raise SchemaError("'context' entries must be [title, [sentences]] pairs")
        title, sents = entry
        offsets[title] = len(sentences)
        sentences.extend(sents)
    evidence = []
    for entry in rec["supporting_facts"]:
        if not (isinstance(entry, list) and len(entry) == 2):
            raise SchemaError("'supporting_facts' entries must be [title, index] pairs")
        title, idx = entry
        if title not in offsets:
            raise SchemaError(f"supporting fact references unknown title {title!r}")
        evidence.append(offsets[title] + int(idx))
    return {
        "id": str(rec["_id"]),
        "question": rec["question"],
        "question_type": rec["type"],
        "sentences": sentences,
        "evidence": evidence,
        "answerable": True,
        "answer": rec.get("answer"),
    }


def _qasper_record(rec: dict) -> dict:
    for key in ("question_id", "question", "question_type", "full_text", "evidence"):
        if key not in rec:
            raise SchemaError(f"missing field {key!r}")
    sentences = rec["full_text"]
    lookup = {}
    for j, sent in enumerate(sentences):
        lookup.setdefault(sent, j)
    evidence = []
    for span in rec["evidence"]:
        if span not in lookup:
            raise SchemaError("evidence span not found in full_text")
        evidence.append(lookup[span])
    return {
        "id": str(rec["question_id"]),
        "question": rec["question"],
        "question_type": rec["question_type"],
        "sentences": sentences,
        "evidence": evidence,
        "answerable": not rec.get("unanswerable", False),
        "answer": rec.get("answer"),
    }


_ADAPTERS = {
    "native": _native_record,
    "hotpot-like": _hotpot_record,
    "qasper-like": _qasper_record,
}


def parse_dataset(
    data: bytes | str,
    format: str = "native",
    type_labels: list[QuestionType] | None = None,
) -> list[QAInstance]:
    """Parse line-delimited records into QA instances.

    Records that fail schema validation are collected and reported together
    in a ParseError carrying 1-based line numbers.
    """
    if format not in _ADAPTERS:
        raise ConfigError(f"unknown format {format!r}; expected one of {FORMATS}")
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    adapter = _ADAPTERS[format]

    normalized = []
    failures = []
    for lineno, line in enumerate(data.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            failures.append((lineno, f"invalid JSON: {exc.msg}"))
            continue
        try:
            normalized.append((lineno, adapter(rec)))
        except SchemaError as exc:
            failures.append((lineno, str(exc)))

    types = _types_from_labels(
        [rec["question_type"] for _, rec in normalized], declared=type_labels
    )

    instances = []
    for lineno, rec in normalized:
        try:
            instances.append(
                QAInstance(
                    id=rec["id"],
                    question=tokenize(rec["question"]),
                    sentences=[tokenize(s) for s in rec["sentences"]],
                    evidence=frozenset(rec["evidence"]),
                    qtype=types[rec["question_type"]],
                    answerable=rec["answerable"],
                    answer=rec["answer"],
                )
            )
        except MalformedInstanceError as exc:
            failures.append((lineno, str(exc)))
    if failures:
        raise ParseError(sorted(failures))
    return instances


def serialize(instances: list[QAInstance]) -> str:
    """Emit the native line-delimited format; inverse of native parsing."""
    lines = []
    for inst in instances:
        lines.append(
            json.dumps(
                {
                    "id": inst.id,
                    "question": " ".join(inst.question),
                    "question_type": inst.qtype.label,
                    "sentences": [" ".join(s) for s in inst.sentences],
                    "evidence": sorted(inst.evidence),
                    "answerable": inst.answerable,
                    "answer": inst.answer,
                },
                sort_keys=True,
            )
        )
    return "\n".join(lines) + ("\n" if lines else "")


# ---------------------------------------------------------------------------
# Synthetic planted-structure generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for the planted-structure generator.

    Evidence sentences share a fraction ``overlap_strength`` of their tokens
    with the question; all remaining sentence tokens come from a filler pool
    disjoint from every question-content pool. Each question type draws its
    content tokens from its own pool and opens with a type-specific prefix
    token, so type-conditional structure exists by construction.
    """

    num_instances: int
    num_sentences: int  # M
    num_evidence: int  # N
    vocab_size: int
    num_types: int  # K
    overlap_strength: float
    seed: int
    question_len: int = 6
    sentence_len: int = 6
    confuser_frac: float = 0.5  # distractors drawn from another type's pool

    def __post_init__(self):
        if self.num_evidence > self.num_sentences:
            raise ConfigError("num_evidence must not exceed num_sentences")
        if not (0.0 <= self.overlap_strength <= 1.0):
            raise ConfigError("overlap_strength must lie in [0, 1]")
        if not (0.0 <= self.confuser_frac <= 1.0):
            raise ConfigError("confuser_frac must lie in [0, 1]")
        if self.num_types < 1 or self.num_instances < 0:
            raise ConfigError("num_types >= 1 and num_instances >= 0 required")


def _synth_pools(cfg: SynthConfig):
    """Partition the token space into per-type content pools and a filler pool.

    Depends only on (vocab_size, num_types), never on the seed, so datasets
    drawn with different seeds share one vocabulary structure.
    """
    usable = cfg.vocab_size - cfg.num_types  # prefix tokens are spent first
    per_pool = usable // (cfg.num_types + 1)
    if per_pool < max(cfg.question_len, cfg.sentence_len):
        raise ConfigError(
            f"vocab_size {cfg.vocab_size} too small for {cfg.num_types} disjoint "
            f"content pools plus a filler pool"
        )
    prefixes = [f"qt{k}" for k in range(cfg.num_types)]
    content = [
        [f"w{k}_{i}" for i in range(per_pool)] for k in range(cfg.num_types)
    ]
    filler = [f"f{i}" for i in range(per_pool)]
    return prefixes, content, filler


def generate_synthetic(cfg: SynthConfig) -> list[QAInstance]:
    """Generate a deterministic planted-overlap dataset."""
    prefixes, content, filler = _synth_pools(cfg)
    rng = np.random.default_rng(cfg.seed)
    types = [QuestionType(k, f"type{k}") for k in range(cfg.num_types)]

    n_overlap = int(round(cfg.overlap_strength * cfg.sentence_len))
    instances = []
    for i in range(cfg.num_instances):
        k = int(rng.integers(cfg.num_types))
        pool = content[k]
        q_content = [pool[j] for j in rng.choice(len(pool), cfg.question_len - 1, replace=False)]
        question = [prefixes[k]] + q_content

        evidence = frozenset(
            int(j) for j in rng.choice(cfg.num_sentences, cfg.num_evidence, replace=False)
        )
        sentences = []
        for j in range(cfg.num_sentences):
            fill = [filler[t] for t in rng.choice(len(filler), cfg.sentence_len, replace=False)]
            if j in evidence and n_overlap > 0:
                shared = [
                    q_content[t]
                    for t in rng.choice(len(q_content), min(n_overlap, len(q_content)), replace=False)
                ]
                sent = shared + fill[: cfg.sentence_len - len(shared)]
            elif (
                cfg.num_types > 1
                and j not in evidence
                and rng.random() < cfg.confuser_frac
            ):
                # confuser distractor: content tokens of a different question
                # type, sharing nothing with this question
                other = int(rng.integers(cfg.num_types - 1))
                if other >= k:
                    other += 1
                opool = content[other]
                n_conf = max(1, n_overlap)
                conf = [opool[t] for t in rng.choice(len(opool), n_conf, replace=False)]
                sent = conf + fill[: cfg.sentence_len - len(conf)]
            else:
                sent = fill
            sentences.append(sent)

        instances.append(
            QAInstance(
                id=f"synth-{cfg.seed}-{i}",
                question=question,
                sentences=sentences,
                evidence=evidence,
                qtype=types[k],
                answerable=True,
                answer=None,
            )
        )
    return instances


def question_types_of(instances: list[QAInstance]) -> list[QuestionType]:
    """The sorted distinct question types present in a dataset."""
    seen = {}
    for inst in instances:
        seen[inst.qtype.id] = inst.qtype
    return [seen[i] for i in sorted(seen)]
