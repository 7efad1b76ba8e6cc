"""Command-line entry point.

Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage or config
error. Every command that writes outputs also writes the resolved config
next to them as ``resolved_config.yaml``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .archive import load_archive
from .audio_io import DatasetManifest, ManifestRecord
from .config import load_config, write_config
from .errors import ConfigError, InvalidArgument, SpoofbreakError

log = logging.getLogger("spoofbreak")

RESOLVED_NAME = "resolved_config.yaml"
DIGEST_NAME = "corpus.sha256"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="YAML run config")
    p.add_argument("--seed", type=int, help="overrides data.seed and training.seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted-path override, e.g. losses.lambda2=0.01 (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser():
    common = _common()
    parser = _Parser(prog="spoofbreak", description="Adversarial attacks on audio deepfake detectors.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("prepare-toy", parents=[common], help="synthesize the toy real/fake corpus")
    p.add_argument("--n", type=int, help="number of clips (even, >= 4)")
    p.set_defaults(func=cmd_prepare_toy)

    p = sub.add_parser("train-surrogate", parents=[common], help="train a toy detector")
    p.add_argument("--manifest", required=True)
    p.add_argument("--family", required=True)
    p.add_argument("--size", default="base", choices=("small", "base", "large"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--model-id")
    p.set_defaults(func=cmd_train_surrogate)

    p = sub.add_parser("train-attack", parents=[common], help="train the generator against an ensemble")
    p.add_argument("--manifest", required=True)
    p.add_argument("--member", action="append", default=[], metavar="WEIGHTS",
                   help="surrogate weights file (repeatable); replaces ensemble.members")
    p.add_argument("--steps", type=int, help="overrides training.total_steps")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_train_attack)

    p = sub.add_parser("attack", parents=[common], help="attack a corpus with a trained generator")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--subset", action="append", choices=("train", "dev", "eval"),
                   help="subsets to attack (repeatable; default eval)")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("evaluate", parents=[common], help="score victims before and after the attack")
    p.add_argument("--pairs", required=True, help="pairs.jsonl written by `attack`")
    p.add_argument("--victims", required=True, nargs="+",
                   help="SCENARIO=WEIGHTS tokens, or one YAML file mapping scenario to specs")
    p.add_argument("--manifest", help="manifest for clip labels/tags (default: derived from the pairs)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", parents=[common], help="lambda2 x ensemble-size sweep")
    p.add_argument("--manifest", required=True)
    p.add_argument("--grid-lambda2", help="comma-separated values (default evaluation.lambda2_grid)")
    p.add_argument("--grid-ensemble", help="comma-separated sizes (default evaluation.ensemble_sizes)")
    p.add_argument("--pool", action="append", default=[], metavar="WEIGHTS",
                   help="surrogate pool member (repeatable; default evaluation.surrogate_pool)")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("dump-samples", parents=[common], help="transcripts and plots for chosen clips")
    p.add_argument("--pairs", required=True)
    p.add_argument("--clip-ids", required=True, help="comma-separated clip ids")
    p.set_defaults(func=cmd_dump_samples)

    p = sub.add_parser("report", parents=[common], help="print a stored report as a table")
    p.add_argument("--input", required=True, help="report.json or ablation.csv")
    p.set_defaults(func=cmd_report)
    return parser


# -- helpers -------------------------------------------------------------------

def resolve_config(args):
    overrides = list(args.set)
    if args.seed is not None:
        overrides += [f"data.seed={args.seed}", f"training.seed={args.seed}"]
    return load_config(args.config, overrides)


def _out_dir(args, default=None):
    out = args.out or default
    if out is None:
        raise UsageError("--out is required for this command")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def surrogate_spec(path):
    """Spec for a saved surrogate archive; the family comes from its metadata."""
    _, meta = load_archive(path)
    if meta.get("kind") != "surrogate":
        raise ConfigError("not a surrogate weights archive", str(path))
    return {"family": meta["family"], "weights_path": str(Path(path).resolve())}


def parse_grid(text, cast):
    try:
        return [cast(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad grid value: {exc}") from exc


def parse_victims(tokens):
    """``SCENARIO=WEIGHTS`` tokens, or a single YAML file ``{scenario: [spec, ...]}``."""
    import yaml

    if len(tokens) == 1 and "=" not in tokens[0]:
        path = Path(tokens[0])
        if not path.is_file():
            raise ConfigError("victims file not found", str(path))
        doc = yaml.safe_load(path.read_text()) or {}
        if not isinstance(doc, dict):
            raise ConfigError("victims file must map scenario to a list of specs", str(path))
        return {k: list(v) for k, v in doc.items()}
    out = {}
    for tok in tokens:
        scenario, sep, weights = tok.partition("=")
        if not sep or not weights:
            raise ConfigError(f"victim {tok!r} is not SCENARIO=WEIGHTS", "--victims")
        out.setdefault(scenario, []).append(surrogate_spec(weights))
    return out


def manifest_from_pairs(pairs):
    records = [ManifestRecord(p.clip_id, p.original_path, p.label, "eval", "pairs") for p in pairs]
    return DatasetManifest(records, "/")


def corpus_digest(manifest_path):
    """SHA-256 over the manifest bytes and every audio file it lists, in order."""
    manifest = DatasetManifest.read(manifest_path)
    h = hashlib.sha256(Path(manifest_path).read_bytes())
    for rec in manifest:
        h.update(rec.clip_id.encode())
        h.update(Path(manifest.resolve(rec)).read_bytes())
    return h.hexdigest()


def _emit(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


# -- commands ------------------------------------------------------------------

def cmd_prepare_toy(args, cfg):
    from .toy import build_toy_dataset

    out = _out_dir(args)
    n = args.n if args.n is not None else cfg.data.n_clips
    digest_file = out / DIGEST_NAME
    previous = digest_file.read_text().strip() if digest_file.is_file() else None
    manifest = build_toy_dataset(n, cfg.data.frame_len, cfg.data.seed, out, cfg.data.sample_rate)
    digest = corpus_digest(out / "manifest.jsonl")
    digest_file.write_text(digest + "\n")
    write_config(cfg, out / RESOLVED_NAME)
    status = "new" if previous is None else ("identical" if previous == digest else "changed")
    print(f"wrote {len(manifest)} clips to {out}")
    print(f"corpus digest {digest} ({status}"
          + (", byte-identical to the previous run)" if status == "identical" else ")"))
    return 0


def cmd_train_surrogate(args, cfg):
    from .surrogates import train_toy_surrogate

    out = _out_dir(args)
    manifest = DatasetManifest.read(args.manifest)
    model_id = args.model_id or f"{args.family}-{args.size}"
    model = train_toy_surrogate(manifest, {
        "family": args.family, "size": args.size, "model_id": model_id,
        "epochs": args.epochs if args.epochs is not None else cfg.ensemble.epochs,
        "lr": args.lr if args.lr is not None else cfg.ensemble.lr,
        "batch_size": cfg.ensemble.batch_size, "seed": cfg.training.seed,
        "frame_len": cfg.data.frame_len, "sample_rate": cfg.data.sample_rate,
    }, log=log.info)
    path = model.save(out / f"{model_id}.sg")
    write_config(cfg, out / RESOLVED_NAME)
    _emit({"model_id": model_id, "weights_path": str(path), **model.metadata})
    return 0


def cmd_train_attack(args, cfg):
    from .training import train

    out = _out_dir(args)
    if args.member:
        cfg.ensemble.members = [surrogate_spec(p) for p in args.member]
    if args.steps is not None:
        cfg.training.total_steps = args.steps
    tc = cfg.train_config()
    write_config(cfg, out / RESOLVED_NAME)
    manifest = DatasetManifest.read(args.manifest)

    def progress(step, bd):
        if step % 50 == 0 or step == tc.total_steps:
            log.info("step %d: total %.5f forensics %.4f disc %.4f", step, bd.total, bd.forensics, bd.disc_loss)

    ckpt = train(tc, manifest, out, resume=args.resume, progress=progress)
    _emit({"checkpoint": str(ckpt), "steps": tc.total_steps})
    return 0


def cmd_attack(args, cfg):
    from .training import attack_corpus

    out = _out_dir(args)
    write_config(cfg, out / RESOLVED_NAME)
    manifest = DatasetManifest.read(args.manifest)
    index = attack_corpus(args.checkpoint, manifest, out, subsets=tuple(args.subset or ["eval"]),
                          frame_len=cfg.data.frame_len)
    _emit({"pairs": str(index)})
    return 0


def cmd_evaluate(args, cfg):
    from .evaluation import ScenarioSpec, evaluate_attack, quality_report, read_pairs
    from .transcription import make_backend, make_embedder

    out = _out_dir(args, Path(args.pairs).parent)
    pairs = read_pairs(args.pairs)
    manifest = DatasetManifest.read(args.manifest) if args.manifest else manifest_from_pairs(pairs)
    victims = parse_victims(args.victims)
    scenarios = [ScenarioSpec(name, specs) for name, specs in victims.items()]
    spec = {**vars(cfg.transcription), "sample_rate": cfg.data.sample_rate}
    quality = quality_report(pairs, make_backend(spec), make_embedder(spec), sample_rate=cfg.data.sample_rate)
    subset = cfg.evaluation.subset if args.manifest else "eval"
    report = evaluate_attack(scenarios, manifest, pairs, cfg.evaluation.threshold, subset, quality,
                             sample_rate=cfg.data.sample_rate)
    paths = report.write(out)
    write_config(cfg, out / RESOLVED_NAME)
    _emit({"report": [str(p) for p in paths], "scenario_averages": report.scenario_averages,
           "quality": quality})
    return 0


def cmd_ablate(args, cfg):
    from .evaluation import ablate

    out = _out_dir(args)
    grid_l = parse_grid(args.grid_lambda2, float) if args.grid_lambda2 else cfg.evaluation.lambda2_grid
    grid_m = parse_grid(args.grid_ensemble, int) if args.grid_ensemble else cfg.evaluation.ensemble_sizes
    pool = [surrogate_spec(p) for p in args.pool] if args.pool else cfg.evaluation.surrogate_pool
    write_config(cfg, out / RESOLVED_NAME)
    manifest = DatasetManifest.read(args.manifest)
    rows = ablate(cfg.train_config(), grid_l, grid_m, manifest, out, pool,
                  threshold=cfg.evaluation.threshold, subsets=(cfg.evaluation.subset,),
                  progress=lambda row: log.info("ablation row %s", row))
    _emit({"table": str(out / "ablation.csv"), "rows": len(rows)})
    return 0


def cmd_dump_samples(args, cfg):
    from .evaluation import dump_samples
    from .transcription import make_backend

    out = _out_dir(args)
    ids = [c.strip() for c in args.clip_ids.split(",") if c.strip()]
    backend = make_backend({**vars(cfg.transcription), "sample_rate": cfg.data.sample_rate})
    bundles = dump_samples(args.pairs, ids, out, backend, cfg.data.sample_rate)
    write_config(cfg, out / RESOLVED_NAME)
    _emit({"bundles": bundles})
    return 0


def format_table(header, rows):
    cells = [[str(h) for h in header]] + [[_fmt(v) for v in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def cmd_report(args, cfg):
    import csv

    from .evaluation import REPORT_COLUMNS, EvalReport

    path = Path(args.input)
    if not path.is_file():
        raise FileNotFoundError(f"no such report: {path}")
    if path.suffix == ".json":
        report = EvalReport.read(path)
        print(format_table(REPORT_COLUMNS, [[r[c] for c in REPORT_COLUMNS] for r in report.rows]))
        avg = report.scenario_averages
        if avg:
            print()
            cols = ("acc_ba", "acc_aa", "drop", "success_rate")
            print(format_table(("scenario",) + cols, [[s] + [avg[s][c] for c in cols] for s in avg]))
        if report.quality:
            print()
            print(format_table(tuple(report.quality), [list(report.quality.values())]))
    else:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise SpoofbreakError(f"{path} is empty")
        print(format_table(rows[0], [[_maybe_float(v) for v in r] for r in rows[1:]]))
    return 0


def _maybe_float(v):
    try:
        return int(v) if v.isdigit() else float(v)
    except ValueError:
        return v


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        return args.func(args, cfg)
    except (ConfigError, UsageError, InvalidArgument) as exc:
        print(f"spoofbreak {args.command}: config error: {exc}", file=sys.stderr)
        return 2
    except (SpoofbreakError, OSError, ValueError) as exc:
        print(f"spoofbreak {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
