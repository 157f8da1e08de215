"""Command-line entry point: preprocess, train, eval, sweep, project, report.

Exit status: 0 success, 1 usage error, 2 data or format error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from drosent import data, modelio, pipeline, report
from drosent.errors import DataFormatError, DroError, UsageError
from drosent.projections import ProjectionSpec, project

log = logging.getLogger("drosent")

DEFAULTS = {
    "mode": pipeline.ERM,
    "set": "l2",
    "radius": 1.0,
    "learning_rate": None,
    "epochs": 20,
    "batch_size": 32,
    "seed": 0,
    "encoder": "meanpool",
    "hidden_dim": 64,
    "dropout_rate": 0.1,
    "features": "hashed",
    "feature_dim": data.DEFAULT_HASH_DIM,
    "embedding_file": None,
    "in_dist_embedding_file": None,
    "shifted_embedding_file": None,
    "radii": ",".join(f"{r:g}" for r in pipeline.DEFAULT_RADII),
    "kinds": ",".join(pipeline.DEFAULT_KINDS),
    "replicates": 1,
    "jobs": 1,
    "holdout": 0.1,
}
INT_KEYS = {"epochs", "batch_size", "seed", "hidden_dim", "feature_dim", "replicates", "jobs"}
FLOAT_KEYS = {"radius", "learning_rate", "dropout_rate", "holdout"}


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def read_config(path):
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    settings = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise UsageError(f"--config {path}: cannot read ({exc.strerror})") from exc
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or not key:
            raise UsageError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        if key not in DEFAULTS:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        settings[key] = value.strip()
    return settings


def _coerce(key, value, origin):
    if value is None or key not in INT_KEYS | FLOAT_KEYS:
        return value
    try:
        return int(value) if key in INT_KEYS else float(value)
    except (TypeError, ValueError):
        raise UsageError(f"{origin}: {key} must be a number, got {value!r}") from None


def effective_settings(args):
    """Defaults, overridden by the config file, overridden by flags."""
    settings = dict(DEFAULTS)
    if getattr(args, "config", None):
        for key, value in read_config(args.config).items():
            settings[key] = _coerce(key, value, args.config)
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = _coerce(key, value, f"--{key.replace('_', '-')}")
    return settings


def _feature_source(settings, key="embedding_file"):
    if settings["features"] == "embedding":
        if not settings.get(key):
            raise UsageError(f"--{key.replace('_', '-')} is required when features = embedding")
        return data.FeatureSource.embedding(settings[key])
    if settings["features"] != "hashed":
        raise UsageError(f"features must be 'hashed' or 'embedding', got {settings['features']!r}")
    return data.FeatureSource.hashed(settings["feature_dim"])


def train_config(settings):
    spec = None
    if settings["mode"] != pipeline.ERM:
        spec = ProjectionSpec.from_name(settings["set"], settings["radius"])
    return pipeline.TrainConfig(
        mode=settings["mode"], projection=spec, learning_rate=settings["learning_rate"],
        epochs=settings["epochs"], batch_size=settings["batch_size"], seed=settings["seed"],
        encoder=settings["encoder"], hidden_dim=settings["hidden_dim"],
        dropout_rate=settings["dropout_rate"], features=_feature_source(settings))


def _dataset(path, source):
    examples = data.load_parsed_csv(path)
    if not examples:
        raise DataFormatError(f"{path}: no examples")
    return pipeline.Dataset.from_examples(examples, source)


def _parse_list(text, flag, convert=str):
    try:
        items = [convert(x.strip()) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"{flag}: cannot parse {text!r}") from None
    if not items:
        raise UsageError(f"{flag}: empty list")
    return items


# -- subcommands ----------------------------------------------------------------

def cmd_preprocess(args):
    reviews = data.load_corpus_csv(args.input, args.scale)
    examples, excluded = data.preprocess(reviews)
    data.write_parsed_csv(examples, args.output)
    print(f"kept {len(examples)} reviews, excluded {excluded} neutral reviews -> {args.output}")


def cmd_train(args):
    settings = effective_settings(args)
    log.info("effective config: %s", json.dumps(settings, sort_keys=True))
    config = train_config(settings)
    train_set = _dataset(args.train, config.features)
    params, history = pipeline.train(config, train_set)
    modelio.save_model(params, args.out, features=config.features.describe())
    acc = pipeline.evaluate(params, train_set)
    print(f"final objective {history[-1]:.6f}, training accuracy {acc:.4f} -> {args.out}")


def cmd_eval(args):
    params, features = modelio.load_model(args.model)
    if features is None:
        raise DataFormatError(f"{args.model}: model does not record its feature source")
    if features["kind"] == "embedding":
        path = args.embedding_file or features.get("path")
        source = data.FeatureSource.embedding(path, features["dim"])
    else:
        source = data.FeatureSource.hashed(features["dim"])
    test_set = _dataset(args.test, source)
    print(f"accuracy {pipeline.evaluate(params, test_set):.4f} on {len(test_set)} examples")


def cmd_sweep(args):
    settings = effective_settings(args)
    log.info("effective config: %s", json.dumps(settings, sort_keys=True))
    radii = _parse_list(str(settings["radii"]), "--radii", float)
    kinds = _parse_list(str(settings["kinds"]), "--kinds")
    for kind in kinds:
        ProjectionSpec.from_name(kind, 1.0)
    config = train_config(settings)
    if config.mode == pipeline.ERM:
        config = pipeline.replace(config, mode=pipeline.DRO_REPR)
    source = config.features
    train_set = _dataset(args.train, source)
    if args.in_dist:
        in_source = source
        if settings["features"] == "embedding":
            in_source = _feature_source(settings, "in_dist_embedding_file")
        in_dist = _dataset(args.in_dist, in_source)
    else:
        train_set, in_dist = pipeline.holdout_split(train_set, settings["holdout"], settings["seed"])
    shifted_source = source
    if settings["features"] == "embedding":
        shifted_source = _feature_source(settings, "shifted_embedding_file")
    shifted = _dataset(args.shifted, shifted_source)

    baseline, _ = pipeline.train(pipeline.replace(config, mode=pipeline.ERM, projection=None), train_set)
    erm_in = pipeline.evaluate(baseline, in_dist)
    erm_ood = pipeline.evaluate(baseline, shifted)
    rep = pipeline.radius_sweep(config, kinds, radii, train_set, in_dist, shifted,
                                replicates=settings["replicates"], jobs=settings["jobs"])
    rep.metadata["erm_in_dist_acc"] = f"{erm_in:.4f}"
    rep.metadata["erm_ood_acc"] = f"{erm_ood:.4f}"
    report.write_report_csv(rep, args.out, timestamp=not args.no_timestamp)
    if args.svg:
        report.write_svg(rep, args.svg)
    _print_summary(rep, erm_in, erm_ood)
    print(f"{len(rep.rows)} rows -> {args.out}")


def _print_summary(rep, erm_in, erm_ood):
    failed = [r for r in rep.rows if r.error is not None]
    for r in failed:
        print(f"failed: {r.set_kind} R={r.radius:g}: {r.error}")
    if len(failed) == len(rep.rows):
        return
    cmp = pipeline.compare_to_baseline(rep, erm_in, erm_ood)
    print(f"ERM baseline: in-distribution {erm_in:.4f}, out-of-distribution {erm_ood:.4f}")
    for kind, radius in cmp.best_radius.items():
        print(f"{kind:>8}: best R={radius:g}, mean ood {cmp.mean_ood[kind]:.4f}")
    print(f"best kind by mean out-of-distribution accuracy: {cmp.best_kind}")


def cmd_project(args):
    spec = ProjectionSpec.from_name(args.set, args.radius)
    if args.vectors:
        try:
            text = Path(args.vectors).read_text(encoding="utf-8")
        except OSError as exc:
            raise DataFormatError(f"--vectors {args.vectors}: cannot read ({exc.strerror})") from exc
        origin = args.vectors
    else:
        text, origin = sys.stdin.read(), "<stdin>"
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            v = np.array([float(x) for x in line.split()])
        except ValueError:
            raise DataFormatError(f"{origin}:{lineno}: not a whitespace-separated vector") from None
        print(" ".join(f"{x:.12g}" for x in project(v, spec)))


def cmd_report(args):
    rep = report.read_report_csv(args.input)
    if args.svg:
        report.write_svg(rep, args.svg)
    erm_in = args.erm_in if args.erm_in is not None else rep.metadata.get("erm_in_dist_acc")
    erm_ood = args.erm_ood if args.erm_ood is not None else rep.metadata.get("erm_ood_acc")
    if erm_in is None or erm_ood is None:
        for r in rep.rows:
            print(f"{r.set_kind:>8} R={r.radius:<6g} in-dist {r.in_dist_acc:.4f}  ood {r.ood_acc:.4f}")
        return
    erm_in, erm_ood = float(erm_in), float(erm_ood)
    _print_summary(rep, erm_in, erm_ood)
    for kind, radius, d_in, d_ood in pipeline.compare_to_baseline(rep, erm_in, erm_ood).deltas:
        print(f"{kind:>8} R={radius:<6g} delta in-dist {d_in:+.4f}  delta ood {d_ood:+.4f}")


# -- parser ---------------------------------------------------------------------

def _training_flags(p):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--mode", choices=pipeline.MODES, help="training mode (default erm)")
    p.add_argument("--set", help="projection set: simplex, l1, l2, l4 or l<p>")
    p.add_argument("--radius", help="projection radius")
    p.add_argument("--learning-rate", dest="learning_rate", help="SGD step size")
    p.add_argument("--epochs", help="training epochs (default 20)")
    p.add_argument("--batch-size", dest="batch_size", help="batch size (default 32)")
    p.add_argument("--seed", help="random seed (default 0)")
    p.add_argument("--encoder", choices=("meanpool", "bilstm2"), help="encoder (default meanpool)")
    p.add_argument("--hidden-dim", dest="hidden_dim", help="biLSTM hidden size (default 64)")
    p.add_argument("--dropout", dest="dropout_rate", help="dropout rate (default 0.1)")
    p.add_argument("--features", choices=("hashed", "embedding"), help="feature source (default hashed)")
    p.add_argument("--feature-dim", dest="feature_dim", help="hashed feature dimension (default 2048)")
    p.add_argument("--embedding-file", dest="embedding_file", help="embeddings for the training CSV")


def build_parser():
    parser = ArgumentParser(prog="drosent", description=__doc__.splitlines()[0])
    parser.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=ArgumentParser)
    sub.required = True

    p = sub.add_parser("preprocess", help="label and filter a scored corpus",
                       description="Apply the score thresholds and write a text,label CSV.")
    p.add_argument("--scale", choices=("ten", "five"), required=True, help="score scale of the input")
    p.add_argument("input", help="corpus CSV with header text,score")
    p.add_argument("output", help="parsed CSV to write (text,label)")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train one model", description="Train one model and save it.")
    _training_flags(p)
    p.add_argument("--train", required=True, help="parsed training CSV")
    p.add_argument("--out", required=True, help="model file to write")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="test accuracy of a saved model",
                       description="Report the accuracy of a saved model on a parsed CSV.")
    p.add_argument("--model", required=True, help="model file from 'train'")
    p.add_argument("--test", required=True, help="parsed test CSV")
    p.add_argument("--embedding-file", dest="embedding_file", help="embeddings for the test CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="radius sweep over projection sets",
                       description="Train one model per (set kind, radius) and write a report CSV.")
    _training_flags(p)
    p.add_argument("--train", required=True, help="parsed training CSV")
    p.add_argument("--in-dist", dest="in_dist",
                   help="in-distribution test CSV (default: seeded held-out split of --train)")
    p.add_argument("--shifted", required=True, help="shifted (out-of-distribution) test CSV")
    p.add_argument("--radii", help="comma-separated radii (default 1,2,5,10,15)")
    p.add_argument("--kinds", help="comma-separated set kinds (default simplex,l1,l2,l4)")
    p.add_argument("--replicates", help="seeds averaged per cell (default 1)")
    p.add_argument("--jobs", help="parallel worker processes (default 1)")
    p.add_argument("--holdout", help="held-out fraction when --in-dist is absent (default 0.1)")
    p.add_argument("--in-dist-embeddings", dest="in_dist_embedding_file",
                   help="embeddings for the in-distribution CSV")
    p.add_argument("--shifted-embeddings", dest="shifted_embedding_file",
                   help="embeddings for the shifted CSV")
    p.add_argument("--out", required=True, help="report CSV to write")
    p.add_argument("--svg", help="also write an accuracy-vs-radius SVG")
    p.add_argument("--no-timestamp", action="store_true", help="omit the timestamp metadata line")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("project", help="project vectors onto a convex set",
                       description="Project whitespace-separated vectors, one per line.")
    p.add_argument("--set", required=True, help="simplex, l1, l2, l4 or l<p>")
    p.add_argument("--radius", required=True, type=float, help="set radius")
    p.add_argument("--vectors", help="input file (default: standard input)")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("report", help="summarize a sweep report",
                       description="Summarize a sweep report CSV and optionally plot it.")
    p.add_argument("--in", dest="input", required=True, help="report CSV from 'sweep'")
    p.add_argument("--svg", help="SVG file to write")
    p.add_argument("--erm-in", dest="erm_in", type=float, help="ERM in-distribution accuracy")
    p.add_argument("--erm-ood", dest="erm_ood", type=float, help="ERM out-of-distribution accuracy")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except DroError as exc:
        print(f"drosent {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_status
    except OSError as exc:
        print(f"drosent {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
