"""Command-line entry point.

Subcommands: synth | ingest | train | eval | sweep | embed. Every run writes
its resolved flag set as ``runspec.json`` next to its outputs so any artifact
can be reproduced bit-exactly from disk.

Exit codes: 0 success, 2 usage error, 3 missing input file, 4 parse/schema
violation, 1 any other failure. Failures print one machine-readable line to
stderr: ``qecontrast-error code=<n> kind=<exception> msg=<text>``.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import corpus, evaluation, trainer
from .encoder import EncoderConfig, encode
from .errors import ParseError, QEContrastError, SchemaError
from .loss import LossConfig
from .similarity import KIND_NAMES, PROJECTED_COSINE, SimilarityKind

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_SCHEMA = 4

_EPILOG = (
    "exit codes: 0 ok, 2 usage error, 3 missing file, 4 schema/parse violation, "
    "1 other failure (one 'qecontrast-error' line on stderr)"
)


def _write_runspec(outdir: Path, args: argparse.Namespace) -> None:
    spec = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "runspec.json").write_text(json.dumps(spec, indent=2, sort_keys=True) + "\n")


def _read_dataset(path: str, format: str = "native") -> list[corpus.QAInstance]:
    return corpus.parse_dataset(Path(path).read_bytes(), format)


def _loss_config(args) -> LossConfig:
    rank = args.rank if args.sim == PROJECTED_COSINE else None
    return LossConfig(
        mix=args.mix,
        kind=SimilarityKind(args.sim, rank=rank),
        augment_wrong_type=args.augment,
        skip_no_evidence=True,
    )


def _train_config(args) -> trainer.TrainConfig:
    return trainer.TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        peak_lr=args.peak_lr,
        warmup_frac=args.warmup_frac,
        seed=args.seed,
        loss=_loss_config(args),
        encoder=EncoderConfig(
            hidden_dim=args.d,
            layers=args.layers,
            ffn_mult=args.ffn_mult,
            max_len=args.max_len,
        ),
        taus=tuple(args.tau),
        dropout_rate=args.dropout,
        tied_projection=args.tied_projection,
        tau_grid=tuple(args.tau_grid) if hasattr(args, "tau_grid") else (0.2, 0.4, 0.6, 0.8, 1.0),
        lambda_grid=tuple(args.lambda_grid) if hasattr(args, "lambda_grid") else (0.2, 0.4, 0.6, 0.8, 1.0),
        rank_divisors=tuple(args.rank_divisors) if hasattr(args, "rank_divisors") else (1, 2, 4, 8),
        tie_tau_in_sweep=getattr(args, "tie_tau", True),
    )


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    enc = p.add_argument_group("encoder")
    enc.add_argument("--d", type=int, default=32, help="hidden dimension (default 32)")
    enc.add_argument("--layers", type=int, default=1, help="encoder layers (default 1)")
    enc.add_argument("--ffn-mult", type=int, default=2, help="feed-forward width multiplier")
    enc.add_argument("--max-len", type=int, default=512, help="maximum sequence length")
    lo = p.add_argument_group("loss")
    lo.add_argument("--lambda", dest="mix", type=float, default=0.4,
                    help="contrastive mixing weight in [0,1] (default 0.4)")
    lo.add_argument("--sim", choices=KIND_NAMES, default=PROJECTED_COSINE,
                    help="similarity kind (default projected-cosine)")
    lo.add_argument("--rank", type=int, default=8,
                    help="projection rank for projected-cosine (default 8)")
    lo.add_argument("--augment", action=argparse.BooleanOptionalAction, default=True,
                    help="score wrong-type projected pairs as extra negatives")
    lo.add_argument("--tied-projection", action="store_true",
                    help="share one projection across all question types")
    lo.add_argument("--tau", type=float, nargs="+", default=[0.4],
                    help="temperature(s): one shared value or one per type (default 0.4)")
    lo.add_argument("--dropout", type=float, default=0.1,
                    help="dropout rate on projected vectors (default 0.1)")
    tr = p.add_argument_group("optimization")
    tr.add_argument("--epochs", type=int, default=5)
    tr.add_argument("--batch-size", type=int, default=8)
    tr.add_argument("--peak-lr", type=float, default=3e-3)
    tr.add_argument("--warmup-frac", type=float, default=0.10,
                    help="triangular schedule warmup fraction (default 0.10)")
    p.add_argument("--seed", type=int, default=0)


def _cmd_synth(args) -> int:
    cfg = corpus.SynthConfig(
        num_instances=args.num,
        num_sentences=args.m,
        num_evidence=args.n,
        vocab_size=args.vocab_size,
        num_types=args.types,
        overlap_strength=args.overlap,
        seed=args.seed,
        question_len=args.question_len,
        sentence_len=args.sentence_len,
    )
    instances = corpus.generate_synthetic(cfg)
    out = Path(args.out)
    _write_runspec(out.parent if out.suffix else out, args)
    target = out if out.suffix else out / "dataset.jsonl"
    target.write_text(corpus.serialize(instances))
    print(f"wrote {len(instances)} instances to {target}")
    return EXIT_OK


def _cmd_ingest(args) -> int:
    instances = _read_dataset(args.input, args.format)
    out = Path(args.out)
    _write_runspec(out.parent if out.suffix else out, args)
    target = out if out.suffix else out / "dataset.jsonl"
    target.write_text(corpus.serialize(instances))
    print(f"converted {len(instances)} instances ({args.format}) to {target}")
    return EXIT_OK


def _cmd_train(args) -> int:
    dataset = _read_dataset(args.data)
    val = _read_dataset(args.val) if args.val else None
    cfg = _train_config(args)
    outdir = Path(args.out)
    _write_runspec(outdir, args)
    model, metrics = trainer.train(dataset, cfg, val_dataset=val)
    ckpt.save_checkpoint(model, str(outdir / "checkpoint.npz"))
    (outdir / "metrics.csv").write_text(metrics.to_csv())
    print(f"trained {cfg.epochs} epochs; wrote {outdir / 'checkpoint.npz'}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    model = ckpt.load_checkpoint(args.checkpoint)
    dataset = _read_dataset(args.data)
    outdir = Path(args.out)
    _write_runspec(outdir, args)

    rows = evaluation.per_instance_ap(model, dataset)
    by_type: dict[str, list[float]] = {}
    for _, label, ap in rows:
        by_type.setdefault(label, []).append(ap)
    f1 = evaluation.mean_evidence_f1(model, dataset)

    with open(outdir / "report.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["question_type", "n", "map", "evidence_f1"])
        for label in sorted(by_type):
            writer.writerow([label, len(by_type[label]), f"{np.mean(by_type[label]):.6f}", ""])
        writer.writerow(["all", len(rows), f"{np.mean([r[2] for r in rows]):.6f}", f"{f1:.6f}"])
    with open(outdir / "per_instance_ap.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "question_type", "ap"])
        for rid, label, ap in rows:
            writer.writerow([rid, label, f"{ap:.10f}"])

    if args.bootstrap_a and args.bootstrap_b:
        a = _read_per_example(args.bootstrap_a)
        b = _read_per_example(args.bootstrap_b)
        p = evaluation.paired_bootstrap(a, b, resamples=args.resamples, seed=args.seed)
        (outdir / "bootstrap.json").write_text(
            json.dumps({"p_value_a_gt_b": p, "resamples": args.resamples}) + "\n"
        )
        print(f"bootstrap p-value (a > b): {p:.4f}")
    print(f"wrote {outdir / 'report.csv'}")
    return EXIT_OK


def _read_per_example(path: str) -> list[float]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    col = "ap" if rows and "ap" in rows[0] else None
    if col is None:
        raise SchemaError(f"{path}: expected a CSV with an 'ap' column")
    return [float(r[col]) for r in rows]


def _cmd_sweep(args) -> int:
    dataset = _read_dataset(args.data)
    val = _read_dataset(args.val) if args.val else None
    cfg = _train_config(args)
    outdir = Path(args.out)
    _write_runspec(outdir, args)
    cells = trainer.grid_search(dataset, cfg, val_dataset=val)
    with open(outdir / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank_order", "taus", "lambda", "proj_rank", "joint_metric", "map_all", "evidence_f1"])
        for i, c in enumerate(cells):
            writer.writerow([
                i,
                "/".join(f"{t:g}" for t in c.taus),
                f"{c.mix:g}",
                c.rank if c.rank is not None else "",
                f"{c.joint_metric:.6f}",
                f"{c.map_all:.6f}",
                f"{c.evidence_f1:.6f}",
            ])
    best = cells[0]
    print(f"swept {len(cells)} cells; best: {best.describe()} joint={best.joint_metric:.4f}")
    return EXIT_OK


def _cmd_embed(args) -> int:
    model = ckpt.load_checkpoint(args.checkpoint)
    dataset = _read_dataset(args.data)
    outdir = Path(args.out)
    _write_runspec(outdir, args)

    vectors, roles, qtypes = [], [], []
    for inst in dataset:
        seq = corpus.assemble_sequence(inst, model.vocab)
        reps = encode(seq, model.enc)
        vectors.append(reps.q)
        roles.append("question")
        qtypes.append(inst.qtype.label)
        for j in range(inst.num_sentences):
            vectors.append(reps.s[j])
            roles.append("positive-evidence" if j in inst.evidence else "wrong-evidence")
            qtypes.append(inst.qtype.label)

    result = evaluation.pca_embed(vectors, components=2)
    with open(outdir / "embedding.tsv", "w") as fh:
        fh.write("role\tqtype\tx\ty\n")
        for role, qt, xy in zip(roles, qtypes, result.coords):
            y = xy[1] if xy.shape[0] > 1 else 0.0
            fh.write(f"{role}\t{qt}\t{xy[0]:.8f}\t{y:.8f}\n")
    (outdir / "explained_variance.json").write_text(
        json.dumps({"ratios": result.explained_variance_ratio.tolist(),
                    "reduced": result.reduced}) + "\n"
    )
    if args.svg:
        _write_svg(outdir / "embedding.svg", roles, result.coords)
    print(f"wrote {outdir / 'embedding.tsv'} ({len(vectors)} points)")
    return EXIT_OK


def _write_svg(path: Path, roles, coords) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    colors = {"question": "tab:blue", "positive-evidence": "tab:green", "wrong-evidence": "tab:red"}
    fig, ax = plt.subplots(figsize=(6, 6))
    for role in colors:
        pts = np.array([xy for r, xy in zip(roles, coords) if r == role])
        if pts.size:
            ax.scatter(pts[:, 0], pts[:, 1], s=6, c=colors[role], label=role, alpha=0.6)
    ax.legend()
    ax.set_xlabel("PC1")
    ax.set_ylabel("PC2")
    fig.savefig(path, format="svg", bbox_inches="tight")
    plt.close(fig)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qecontrast", epilog=_EPILOG)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a planted-structure dataset", epilog=_EPILOG)
    p.add_argument("--num", type=int, default=1000, help="number of instances")
    p.add_argument("--m", type=int, default=8, help="sentences per instance")
    p.add_argument("--n", type=int, default=2, help="evidence sentences per instance")
    p.add_argument("--types", type=int, default=3, help="number of question types")
    p.add_argument("--vocab-size", type=int, default=400)
    p.add_argument("--overlap", type=float, default=0.6,
                   help="fraction of evidence tokens shared with the question")
    p.add_argument("--question-len", type=int, default=6)
    p.add_argument("--sentence-len", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output file (.jsonl) or directory")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("ingest", help="convert hotpot-like/qasper-like input to native", epilog=_EPILOG)
    p.add_argument("--format", choices=("hotpot-like", "qasper-like"), required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("train", help="train a model", epilog=_EPILOG)
    p.add_argument("--data", required=True, help="native dataset (jsonl)")
    p.add_argument("--val", help="optional validation dataset")
    p.add_argument("--out", required=True, help="output directory")
    _add_model_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="write the mAP/F1 report for a checkpoint", epilog=_EPILOG)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bootstrap-a", help="per-example AP csv, hypothesis side")
    p.add_argument("--bootstrap-b", help="per-example AP csv, baseline side")
    p.add_argument("--resamples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", help="grid search over tau/lambda/rank", epilog=_EPILOG)
    p.add_argument("--data", required=True)
    p.add_argument("--val")
    p.add_argument("--out", required=True)
    _add_model_flags(p)
    p.add_argument("--tau-grid", type=float, nargs="+", default=[0.2, 0.4, 0.6, 0.8, 1.0])
    p.add_argument("--lambda-grid", type=float, nargs="+", default=[0.2, 0.4, 0.6, 0.8, 1.0])
    p.add_argument("--rank-divisors", type=int, nargs="+", default=[1, 2, 4, 8],
                   help="projection ranks searched as d divided by these")
    p.add_argument("--tie-tau", action=argparse.BooleanOptionalAction, default=True,
                   help="share one tau across types inside the sweep")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("embed", help="PCA dump of marker representations", epilog=_EPILOG)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--svg", action="store_true", help="also render an SVG scatter")
    p.set_defaults(func=_cmd_embed)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"qecontrast-error code={EXIT_MISSING_FILE} kind=FileNotFoundError msg={exc}",
              file=sys.stderr)
        return EXIT_MISSING_FILE
    except (ParseError, SchemaError) as exc:
        print(f"qecontrast-error code={EXIT_SCHEMA} kind={type(exc).__name__} msg={exc}",
              file=sys.stderr)
        return EXIT_SCHEMA
    except QEContrastError as exc:
        print(f"qecontrast-error code={EXIT_OTHER} kind={type(exc).__name__} msg={exc}",
              file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
