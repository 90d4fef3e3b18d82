"""Single-file checkpoint container.

An ``.npz`` archive holding every weight as a float64 array keyed by name
(``enc.embed``, ``enc.layer0.wq``, ..., ``bank.type0.ws``, ``clf.w``,
``clf.b``) plus a ``meta`` entry: UTF-8 JSON bytes describing the encoder
config, similarity kind, temperatures, vocabulary, and question types.
Round-trips bit-exactly.
"""

from __future__ import annotations

import json

import numpy as np

from .corpus import QuestionType, Vocabulary
from .encoder import EncoderConfig, init_params
from .loss import EvidenceClassifier
from .similarity import SimilarityKind, init_bank
from .trainer import Model


def save_checkpoint(model: Model, path: str) -> None:
    meta = {
        "encoder": {
            "hidden_dim": model.enc.config.hidden_dim,
            "layers": model.enc.config.layers,
            "ffn_mult": model.enc.config.ffn_mult,
            "max_len": model.enc.config.max_len,
            "seed": model.enc.config.seed,
            "marker_attention_bias": model.enc.config.marker_attention_bias,
        },
        "kind": {"name": model.kind.name, "rank": model.kind.rank},
        "taus": model.bank.taus,
        "dropout_rate": model.bank.dropout_rate,
        "tied": model.bank.tied,
        "types": [{"id": t.id, "label": t.label} for t in model.types],
        "vocab": [model.vocab.token_of(i) for i in range(4, len(model.vocab))],
    }
    arrays = dict(model.to_flat())
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str) -> Model:
    with np.load(path) as archive:
        arrays = {k: archive[k] for k in archive.files}
    meta = json.loads(bytes(arrays.pop("meta")).decode("utf-8"))

    enc_cfg = EncoderConfig(**meta["encoder"])
    vocab = Vocabulary(meta["vocab"])
    types = [QuestionType(t["id"], t["label"]) for t in meta["types"]]
    kind = SimilarityKind(meta["kind"]["name"], meta["kind"]["rank"])

    enc = init_params(enc_cfg, len(vocab))
    bank = init_bank(
        kind,
        len(meta["taus"]),
        enc_cfg.hidden_dim,
        meta["taus"],
        dropout_rate=meta["dropout_rate"],
        tied=meta["tied"],
    )
    clf = EvidenceClassifier.init(enc_cfg.hidden_dim)

    enc.load_flat(arrays)
    bank.load_flat(arrays)
    clf.load_flat(arrays)
    return Model(enc=enc, bank=bank, clf=clf, vocab=vocab, types=types)
