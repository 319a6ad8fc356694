"""Command-line entry point: ``rest-zsar <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import encoder as E
from . import pipeline as PL
from .attention import Scheme, SequenceLayout, build_mask, format_mask
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .evaluation import ProtocolError, emit_report, hubness, run_split_protocol
from .labels import (CoverageError, DisjointnessError, FormatError, embed_labels,
                     load_word_vectors, read_labels, save_embeddings, load_embeddings,
                     write_word_vectors)
from .synth import DatasetFormatError, generate, load_dataset, save_dataset
from .training import TrainingError, write_log
from .transfer import (CompositionError, FoldError, ScaleError, TransferParams,
                       cv_select_params)

log = logging.getLogger("rest_zsar")

EXPECTED_ERRORS = (FileNotFoundError, IsADirectoryError, PL.RunConfigError, E.ConfigError,
                   FormatError, CoverageError, DisjointnessError, DatasetFormatError,
                   CheckpointError, TrainingError, ProtocolError, CompositionError, FoldError,
                   ScaleError, KeyError, ValueError)


def cmd_synth(args):
    run = PL.load_run_config(args.config)
    seed = run.require_seed(args.seed)
    data = generate(run.synth_config(seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(data.train, out / "train.json")
    save_dataset(data.test, out / "test.json")
    (out / "seen_labels.txt").write_text("\n".join(data.seen_labels) + "\n")
    (out / "unseen_labels.txt").write_text("\n".join(data.unseen_labels) + "\n")
    write_word_vectors(data.seen_vectors, out / "seen_vectors.txt")
    write_word_vectors(data.unseen_vectors, out / "unseen_vectors.txt")
    PL.dump_json({"anchors": data.anchors.tolist(), "weights": data.weights.tolist()},
                 out / "composition.json")
    print(f"wrote {len(data.train.instances)} seen and {len(data.test.instances)} unseen "
          f"instances to {out}")


def cmd_embed_labels(args):
    table = load_word_vectors(args.vectors)
    embs = embed_labels(table, read_labels(args.labels))
    save_embeddings(embs, args.out)
    partial = sum(e.covered_tokens < e.total_tokens for e in embs)
    print(f"embedded {len(embs)} labels ({partial} with uncovered tokens)")


def cmd_train(args):
    run = PL.load_run_config(args.config)
    seed = run.require_seed(args.seed)
    data = load_dataset(args.data)
    params, config, vocab, history = PL.train_encoder(data, run, seed)
    save_checkpoint(params, config, vocab, args.out)
    if args.log:
        write_log(history, args.log)
    if args.figures:
        from .plotting import plot_training
        plot_training(history, Path(args.figures) / "training.png")
    last = history[-1]
    print(f"epochs={last['epoch']} loss={last['loss_total']:.4f} "
          f"train_top1={last['train_top1']:.3f}")


def cmd_represent(args):
    params, config, _ = load_checkpoint(args.model)
    data = load_dataset(args.data)
    X = E.represent_many(params, config, [i.frames for i in data.instances])
    PL.dump_json(PL.reps_doc(data, X), args.out)
    print(f"wrote {len(X)} representations of dim {X.shape[1]}")


def cmd_prototypes(args):
    reps = PL.parse_reps(PL.read_json(args.reps, "representation file"))
    PL.dump_json(PL.prototypes_doc(reps), args.out)
    print(f"wrote {len(reps.labels)} prototypes")


def cmd_transfer(args):
    labels, protos = PL.parse_prototypes(PL.read_json(args.protos, "prototype file"))
    seen_emb = load_embeddings(args.seen_emb)
    unseen_emb = load_embeddings(args.unseen_emb)
    if [e.label_text for e in seen_emb] != labels:
        raise PL.RunConfigError("seen embeddings and prototypes list different labels")
    explicit = [args.theta, args.k, args.rho]
    cv = None
    if args.cv:
        if any(v is not None for v in explicit):
            raise PL.RunConfigError("--cv conflicts with --theta/--k/--rho")
        if not args.reps:
            raise PL.RunConfigError("--cv needs --reps (seen-instance representations)")
        reps = PL.parse_reps(PL.read_json(args.reps, "representation file"))
        grid = None
        if args.grid:
            grid = [TransferParams.from_dict(p) for p in PL.read_json(args.grid, "grid")]
        cv = cv_select_params(seen_emb, protos, reps.vectors, reps.class_ids, grid=grid,
                              folds=args.folds, seed=args.seed)
        params = cv.params
    elif all(v is not None for v in explicit):
        params = TransferParams(args.theta, args.k, args.rho)
    else:
        raise PL.RunConfigError("give all of --theta --k --rho, or --cv")
    doc = PL.transfer_doc(labels, protos, seen_emb, unseen_emb, params, cv)
    PL.dump_json(doc, args.out)
    fallbacks = sum(r["fallback"] for r in doc["rows"])
    print(f"theta={params.theta} k={params.k} rho={params.rho} "
          f"objective={doc['objective']:.6f} fallback_rows={fallbacks}")


def cmd_eval(args):
    run = PL.load_run_config(args.config)
    seed = run.require_seed(args.seed)
    reps = PL.parse_reps(PL.read_json(args.reps, "representation file"))
    params, protos, seen_emb, unseen_emb = PL.parse_transfer(
        PL.read_json(args.unseen_protos, "transfer file"))
    if len(unseen_emb) != len(reps.labels):
        raise PL.RunConfigError(f"{len(unseen_emb)} unseen classes in the transfer file, "
                                f"{len(reps.labels)} in the representation file")
    fraction = args.fraction if args.fraction is not None else run.eval.get("fraction", 0.5)
    splits = args.splits if args.splits is not None else run.eval.get("splits", 10)
    report = run_split_protocol(reps.vectors, reps.class_ids, unseen_emb, protos, seen_emb,
                                params, fraction=fraction, num_splits=splits, seed=seed,
                                instance_ids=reps.ids,
                                hubness_k=run.eval.get("hubness_k", 1))
    written = emit_report(report, args.out, args.format)
    if args.figures:
        from .plotting import plot_report
        written += plot_report(report, Path(args.figures))
    print(f"top1={report.mean_top1:.4f}±{report.std_top1:.4f} "
          f"top5={report.mean_top5:.4f}±{report.std_top5:.4f} "
          f"baseline_top1={report.mean_baseline_top1:.4f} "
          f"skewness={report.hubness['skewness']:.4f}")
    for p in written:
        log.info("wrote %s", p)


def cmd_hubness(args):
    reps = PL.parse_reps(PL.read_json(args.reps, "representation file"))
    _, P = PL.parse_prototypes(PL.read_json(args.protos, "prototype file"))
    psi, skew = hubness(reps.vectors, P, args.k)
    PL.dump_json({"k": args.k, "psi": psi.tolist(), "skewness": skew}, args.out)
    print(f"skewness={skew:.6f}")


def cmd_mask_dump(args):
    print(format_mask(build_mask(SequenceLayout(args.t, args.words), Scheme.parse(args.scheme))))


def build_parser():
    p = argparse.ArgumentParser(prog="rest-zsar", description=(
        "Zero-shot action recognition by composing visual prototypes of seen classes."))
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic compositional dataset")
    s.add_argument("--config", help="run config JSON (synth section and seed)")
    s.add_argument("--seed", type=int, help="overrides the config seed")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("embed-labels", help="average word vectors into label embeddings")
    s.add_argument("--vectors", required=True, help="word-vector text file")
    s.add_argument("--labels", required=True, help="one label per line")
    s.add_argument("--out", required=True, help="label-embedding JSON")
    s.set_defaults(func=cmd_embed_labels)

    s = sub.add_parser("train", help="train the encoder on a seen-class dataset")
    s.add_argument("--data", required=True, help="dataset JSON")
    s.add_argument("--config", help="run config JSON (encoder/training sections and seed)")
    s.add_argument("--seed", type=int, help="overrides the config seed")
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--log", help="per-epoch CSV log")
    s.add_argument("--figures", help="directory for a training-curve PNG")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("represent", help="encode every instance of a dataset")
    s.add_argument("--model", required=True, help="checkpoint")
    s.add_argument("--data", required=True, help="dataset JSON")
    s.add_argument("--out", required=True, help="representation JSON")
    s.set_defaults(func=cmd_represent)

    s = sub.add_parser("prototypes", help="per-class mean representations")
    s.add_argument("--reps", required=True, help="representation JSON")
    s.add_argument("--out", required=True, help="prototype JSON")
    s.set_defaults(func=cmd_prototypes)

    s = sub.add_parser("transfer", help="compose unseen prototypes from seen ones")
    s.add_argument("--protos", required=True, help="seen prototype JSON")
    s.add_argument("--seen-emb", required=True, help="seen label-embedding JSON")
    s.add_argument("--unseen-emb", required=True, help="unseen label-embedding JSON")
    s.add_argument("--theta", type=float, help="relative-distance threshold in [0, 1]")
    s.add_argument("--k", type=int, help="semantic neighbours per unseen class")
    s.add_argument("--rho", type=int, help="maximum seen classes per unseen class")
    s.add_argument("--cv", action="store_true", help="choose theta/k/rho by cross-validation")
    s.add_argument("--grid", help="JSON list of {theta,k,rho} for --cv (default grid otherwise)")
    s.add_argument("--reps", help="seen-instance representation JSON, needed by --cv")
    s.add_argument("--folds", type=int, default=5, help="CV folds (default 5)")
    s.add_argument("--seed", type=int, default=0, help="fold shuffle seed (default 0)")
    s.add_argument("--out", required=True, help="transfer JSON")
    s.set_defaults(func=cmd_transfer)

    s = sub.add_parser("eval", help="zero-shot evaluation over random class splits")
    s.add_argument("--reps", required=True, help="unseen-instance representation JSON")
    s.add_argument("--unseen-protos", required=True, help="transfer JSON")
    s.add_argument("--config", help="run config JSON (eval section and seed)")
    s.add_argument("--fraction", type=float, help="fraction of unseen classes per split (0.5)")
    s.add_argument("--splits", type=int, help="number of splits (10)")
    s.add_argument("--seed", type=int, help="split seed; required unless set in the config")
    s.add_argument("--out", required=True, help="report path")
    s.add_argument("--format", choices=["json", "csv"], default="json")
    s.add_argument("--figures", help="directory for report PNGs")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("hubness", help="nearest-prototype counts and their skewness")
    s.add_argument("--reps", required=True, help="representation JSON")
    s.add_argument("--protos", required=True, help="prototype or transfer JSON")
    s.add_argument("--k", type=int, default=1, help="neighbourhood size (default 1)")
    s.add_argument("--out", required=True, help="output JSON")
    s.set_defaults(func=cmd_hubness)

    s = sub.add_parser("mask-dump", help="print an attention mask as a 0/1 grid")
    s.add_argument("--t", type=int, required=True, help="number of visual tokens")
    s.add_argument("--words", type=int, required=True, help="number of word tokens")
    s.add_argument("--scheme", default="modality", help="modality or cross")
    s.set_defaults(func=cmd_mask_dump)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except EXPECTED_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
