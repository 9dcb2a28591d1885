"""Command-line entry point: gen-data, stats, train, eval, report.

Exit codes: 0 success, 2 usage or input error, 3 training divergence.
"""

import argparse
import fcntl
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

from slueco.checkpoint import load_checkpoint, save_checkpoint
from slueco.corpus import compute_stats, format_stats, generate_synthetic, load_corpus, save_corpus
from slueco.curriculum import STRATEGIES, plan, run_strategy, user_turn_error
from slueco.energy import EnergyMeter, RunRecord, build_report, render_records, render_table
from slueco.estimator import SLUTagger
from slueco.exceptions import DivergenceError, SLUError

SPLITS = ("train", "dev", "test")
EXIT_OK, EXIT_USAGE, EXIT_DIVERGED = 0, 2, 3

logger = logging.getLogger("slueco")


class UsageError(Exception):
    pass


def _corpus_files(directory):
    directory = Path(directory)
    files = {name: directory / f"{name}.jsonl" for name in SPLITS}
    missing = [str(p) for p in files.values() if not p.is_file()]
    if missing:
        raise UsageError(f"missing corpus files: {', '.join(missing)}")
    return files


def load_corpus_dir(directory):
    return {name: load_corpus(path) for name, path in _corpus_files(directory).items()}


# ------------------------------------------------------------------ ledger

def read_ledger(path):
    path = Path(path)
    if not path.exists():
        return []
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(RunRecord.from_json(line))
            except (ValueError, TypeError) as exc:
                raise UsageError(f"{path}:{lineno}: bad ledger record ({exc})") from None
    return records


def append_ledger(path, record):
    """Append ``record`` under an exclusive lock, replacing the file atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(str(path) + ".lock", "w") as lock:
        fcntl.flock(lock, fcntl.LOCK_EX)
        old = path.read_text(encoding="utf-8") if path.exists() else ""
        if old and not old.endswith("\n"):
            old += "\n"
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(old + record.to_json() + "\n")
        os.replace(tmp, path)


# ---------------------------------------------------------------- commands

def cmd_gen_data(args):
    if args.concepts < 2:
        raise UsageError("--concepts must be at least 2")
    if args.utts < 10:
        raise UsageError("--utts must be at least 10")
    splits = generate_synthetic(args.seed, args.utts, args.concepts, args.dim, args.noise,
                                wizard_fraction=args.wizard_fraction, feature_family=args.family)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for name, split in splits.items():
            save_corpus(split, out / f"{name}.jsonl")
    except OSError as exc:
        raise UsageError(f"cannot write corpus to {out}: {exc}") from None
    print(" ".join(f"{name}={len(split)}" for name, split in splits.items()))


def cmd_stats(args):
    path = Path(args.corpus)
    if path.is_dir():
        splits = load_corpus_dir(path)
    elif path.is_file():
        splits = {path.stem: load_corpus(path)}
    else:
        raise UsageError(f"no such corpus: {path}")
    reference = splits.get("train", next(iter(splits.values())))
    vocabs = (set(reference.word_vocab), set(reference.label_vocab))
    stats = {name: compute_stats(split, vocabs) for name, split in splits.items()}
    sys.stdout.write(format_stats(stats))


def _hyperparams(args):
    hp = {"n_epochs": args.epochs, "lr": args.lr}
    for key in ("hidden_dim", "embed_dim", "attention_dim", "num_layers", "pyramid_layers",
                "clip_norm"):
        value = getattr(args, key)
        if value is not None:
            hp[key] = value
    return hp


def _apply_manifest(args):
    with open(args.manifest, encoding="utf-8") as fh:
        manifest = json.load(fh)
    for key in ("strategy", "seed", "corpus", "meter", "transfer_from", "out_ckpt", "ledger"):
        if getattr(args, key, None) is None and manifest.get(key) is not None:
            setattr(args, key, manifest[key])
    hp = manifest.get("hyperparams", {})
    if args.epochs is None:
        args.epochs = hp.get("n_epochs")
    if args.lr is None:
        args.lr = hp.get("lr")
    for key in ("hidden_dim", "embed_dim", "attention_dim", "num_layers", "pyramid_layers",
                "clip_norm"):
        if getattr(args, key) is None and key in hp:
            setattr(args, key, hp[key])


def cmd_train(args):
    if args.manifest:
        _apply_manifest(args)
    for key in ("strategy", "corpus", "out_ckpt", "ledger"):
        if getattr(args, key) is None:
            raise UsageError(f"--{key.replace('_', '-')} is required")
    if args.strategy not in STRATEGIES:
        raise UsageError(f"unknown strategy {args.strategy!r}")
    args.seed = 0 if args.seed is None else args.seed
    args.meter = args.meter or "simulated:100"
    args.epochs = 30 if args.epochs is None else args.epochs
    args.lr = 0.05 if args.lr is None else args.lr
    try:
        meter = EnergyMeter.parse(args.meter)
    except (ValueError, SLUError) as exc:
        raise UsageError(str(exc)) from None
    corpora = load_corpus_dir(args.corpus)
    source = None
    if args.transfer_from:
        if not Path(args.transfer_from).is_file():
            raise UsageError(f"no such checkpoint: {args.transfer_from}")
        source = load_checkpoint(args.transfer_from)
        dim = corpora["train"].utterances[0].features.shape[1]
        if source.config.get("n_features_in") != dim:
            raise UsageError(
                f"transfer checkpoint expects {source.config.get('n_features_in')} features, "
                f"corpus has {dim}"
            )
    hp = _hyperparams(args)
    strategy = plan(args.strategy, hp, transfer_source=source)
    corpus_tag = args.corpus_tag or Path(args.corpus).resolve().name
    result = run_strategy(strategy, corpora, meter, seed=args.seed, run_id=args.run_id,
                          corpus_tag=corpus_tag)
    Path(args.out_ckpt).parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.checkpoint, args.out_ckpt)
    append_ledger(args.ledger, result.record)
    manifest = {
        "strategy": args.strategy,
        "seed": args.seed,
        "hyperparams": hp,
        "corpus": str(args.corpus),
        "meter": meter.describe(),
        "transfer_from": args.transfer_from,
        "out_ckpt": str(args.out_ckpt),
        "ledger": str(args.ledger),
    }
    with open(str(args.out_ckpt) + ".manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    r = result.record
    print(f"{r.run_id}: {r.kwh:.6f} kWh, dev {r.dev_cer:.2f}, test {r.test_cer:.2f}")


def cmd_eval(args):
    if not Path(args.ckpt).is_file():
        raise UsageError(f"no such checkpoint: {args.ckpt}")
    ckpt = load_checkpoint(args.ckpt)
    split = load_corpus(_corpus_files(args.corpus)[args.split])
    model = SLUTagger.from_checkpoint(ckpt)
    field_ = ckpt.provenance.get("target", "concepts")
    cer = user_turn_error(model, split, field_)
    label = "WER" if field_ == "transcript" else "CER"
    print(f"{label} ({args.split}, user turns): {cer:.2f}")


def cmd_report(args):
    records = read_ledger(args.ledger) if Path(args.ledger).exists() else None
    if records is None:
        raise UsageError(f"no such ledger: {args.ledger}")
    rows = build_report(records)
    if args.format == "records":
        sys.stdout.write(render_records(rows))
    else:
        sys.stdout.write(render_table(rows))


# ------------------------------------------------------------------ parser

def build_parser():
    parser = argparse.ArgumentParser(prog="slueco", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic train/dev/test corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--utts", type=int, default=300)
    p.add_argument("--concepts", type=int, default=5)
    p.add_argument("--dim", type=int, default=12)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--wizard-fraction", type=float, default=0.2)
    p.add_argument("--family", default="spectro", help="feature family tag")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("stats", help="print corpus statistics")
    p.add_argument("--corpus", required=True, help="corpus directory or single split file")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="run a training strategy and append to the ledger")
    p.add_argument("--strategy", choices=sorted(STRATEGIES))
    p.add_argument("--transfer-from", dest="transfer_from")
    p.add_argument("--corpus")
    p.add_argument("--corpus-tag", dest="corpus_tag")
    p.add_argument("--meter", help="simulated:WATTS or recorded:KWH (default simulated:100)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-ckpt", dest="out_ckpt")
    p.add_argument("--ledger")
    p.add_argument("--run-id", dest="run_id")
    p.add_argument("--manifest", help="read unset options from a run manifest")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    p.add_argument("--attention-dim", dest="attention_dim", type=int)
    p.add_argument("--num-layers", dest="num_layers", type=int)
    p.add_argument("--pyramid-layers", dest="pyramid_layers", type=int)
    p.add_argument("--clip-norm", dest="clip_norm", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="error rate of a checkpoint on user turns")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=("dev", "test"), default="dev")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="energy report from a run ledger")
    p.add_argument("--ledger", required=True)
    p.add_argument("--format", choices=("table", "records"), default="table")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (UsageError, SLUError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
