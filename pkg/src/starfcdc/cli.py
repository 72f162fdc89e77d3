"""Command-line entry point: ``starfcdc <command> ...``.

Commands::

    generate         write a synthetic coarse/fine dataset (train.csv, test.csv, manifest.json)
    train            pretrain + contrastive training into a run directory
    eval             score a trained run with clustering or centroid inference
    export-clusters  one file of member ids (and text) per fine pseudo-label
    compare          train+eval every (config, seed) pair and tabulate mean +- std

Config files are JSON objects whose keys are :class:`StarConfig` fields. A
run directory's ``config.json`` is also accepted, so any run can be repeated
from its snapshot. Flags given on the command line override the file.

Exit codes: 0 success, 2 configuration error, 3 data or artifact error,
4 runtime error. ``STARFCDC_LOG`` sets the logging level (default WARNING).
"""

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .config import ConfigError, StarConfig
from .data import DataFormatError, generate_synthetic, load_dataset, save_dataset
from .encoder import ShapeMismatchError, init_encoder, load_checkpoint
from .experiment import BENCHMARK_TRAIN, benchmark_data, evaluate, summarize
from .inference import build_centroids, kmeans
from .training import embed_dataset, fit

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4
METRICS = ("acc", "ari", "nmi", "silhouette")
PRESETS = {"paper": {}, "benchmark": BENCHMARK_TRAIN}

log = logging.getLogger("starfcdc")


class ArtifactError(Exception):
    """A run directory or checkpoint needed by the command is missing or inconsistent."""


# config assembly ----------------------------------------------------------------

def read_config_file(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    # a run directory snapshot nests the fields under "config"
    return dict(doc["config"]) if "config" in doc and isinstance(doc["config"], dict) else doc


def build_config(args, dataset=None, file_fields=None):
    fields = dict(PRESETS[getattr(args, "preset", "paper")])
    fields.update(file_fields or {})
    fields.pop("name", None)
    for flag, key in (("objective", "objective"), ("gamma", "gamma"), ("fix_base", "fix_base"),
                      ("seed", "seed")):
        value = getattr(args, flag, None)
        if value is not None:
            fields[key] = value
    for flag in ("no_ce", "no_kl_loss", "no_kl_weight"):
        if getattr(args, flag, False):
            fields[flag] = True
    for item in getattr(args, "set", None) or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        try:
            fields[key] = json.loads(raw)
        except json.JSONDecodeError:
            fields[key] = raw
    if dataset is not None:
        for key, value in (("M", dataset.M), ("K", dataset.K), ("d_in", dataset.d_in)):
            if key in fields and fields[key] != value:
                raise ConfigError(f"{key}={fields[key]} disagrees with the dataset ({value})")
            fields[key] = value
    return StarConfig.from_dict(fields)


def _load_data(path):
    if not os.path.isdir(path):
        raise DataFormatError(f"dataset directory not found: {path}")
    try:
        return load_dataset(path)
    except FileNotFoundError as exc:
        raise DataFormatError(f"missing dataset file: {exc.filename}") from None


def load_run(run_dir, which="best"):
    """Config and parameters of a finished run."""
    cfg_path = os.path.join(run_dir, "config.json")
    ckpt_path = os.path.join(run_dir, "checkpoints", f"{which}.npz")
    for p in (cfg_path, ckpt_path):
        if not os.path.exists(p):
            raise ArtifactError(f"missing run artifact: {p}")
    config = StarConfig.from_dict(read_config_file(cfg_path))
    template = init_encoder(config.d_in, config.hidden, config.d, config.M, seed=0)
    params, _, meta = load_checkpoint(ckpt_path, expected=template)
    if meta.get("config_hash") != config.config_hash():
        raise ArtifactError(f"{ckpt_path} was written under config {meta.get('config_hash')}, "
                            f"but config.json hashes to {config.config_hash()}")
    return config, params


# commands -------------------------------------------------------------------------

def cmd_generate(args):
    try:
        train, test, manifest = generate_synthetic(
            M=args.coarse, K=args.fine, n_per_fine=args.per_fine, d_latent=args.d_latent,
            d_in=args.d_in, coarse_sep=args.coarse_sep, fine_sep=args.fine_sep, noise=args.noise,
            seed=args.seed, test_fraction=args.test_fraction)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    save_dataset(train, test, manifest, args.out)
    print(f"wrote {len(train)} train / {len(test)} test samples to {args.out}")
    return EXIT_OK


def cmd_train(args):
    train, _, _ = _load_data(args.data)
    file_fields = read_config_file(args.config) if args.config else None
    config = build_config(args, train, file_fields)
    result = fit(train, config, run_dir=args.run_dir)
    last = result.history[-1]
    print(f"run {config.config_hash()}: {len(result.history) - 1} training epochs, "
          f"best epoch {result.best_epoch}, silhouette {last['silhouette']:.4f} (last)")
    return EXIT_OK


def _print_report(rep):
    print(f"{rep.mechanism:10s} ACC {rep.acc:.4f}  ARI {rep.ari:.4f}  NMI {rep.nmi:.4f}  "
          f"silhouette {rep.silhouette:.4f}  (n={rep.n}, K={rep.K}, config {rep.config_hash})")


def cmd_eval(args):
    train, test, _ = _load_data(args.data)
    config, params = load_run(args.run_dir, args.checkpoint)
    rep = evaluate(params, train, test, config, args.mechanism)
    if args.mechanism == "centroid":
        bank = build_centroids(embed_dataset(params, train), train.coarse, config.K,
                               seed=config.seed, renormalize=config.renormalize_centroids)
        bank.save(os.path.join(args.run_dir, "centroids.json"))
    out = args.out or os.path.join(args.run_dir, f"eval_{args.mechanism}.json")
    with open(out, "w") as fh:
        fh.write(rep.to_json() + "\n")
    _print_report(rep)
    return EXIT_OK


def cmd_export_clusters(args):
    train, _, _ = _load_data(args.data)
    config, params = load_run(args.run_dir, args.checkpoint)
    labels = kmeans(embed_dataset(params, train), config.K, seed=config.seed).assignments
    os.makedirs(args.out, exist_ok=True)
    width = len(str(config.K - 1))
    for c in range(config.K):
        with open(os.path.join(args.out, f"cluster_{c:0{width}d}.tsv"), "w") as fh:
            for i in np.flatnonzero(labels == c):
                if train.texts is not None:
                    fh.write(f"{train.ids[i]}\t{train.texts[i]}\n")
                else:
                    fh.write(f"{train.ids[i]}\n")
    print(f"wrote {config.K} cluster files to {args.out}")
    return EXIT_OK


def _compare_job(job):
    name, fields, seed, data_dir, mechanisms, run_root = job
    if data_dir is None:
        train, test, _ = benchmark_data(seed)
    else:
        train, test, _ = _load_data(data_dir)
    fields = dict(fields, seed=seed, M=train.M, K=train.K, d_in=train.d_in)
    config = StarConfig.from_dict(fields)
    run_dir = None if run_root is None else os.path.join(run_root, f"{name}-seed{seed}")
    result = fit(train, config, run_dir=run_dir)
    return {m: evaluate(result.params, train, test, config, m).as_dict() for m in mechanisms}


def cmd_compare(args):
    if (args.data is None) == (not args.benchmark):
        raise ConfigError("give exactly one of --data or --benchmark")
    configs = []
    for path in args.configs:
        fields = dict(PRESETS[args.preset])
        fields.update(read_config_file(path))
        name = fields.pop("name", os.path.splitext(os.path.basename(path))[0])
        for key in ("M", "K", "d_in", "seed"):
            fields.pop(key, None)
        StarConfig.from_dict(fields)  # validate before launching anything
        configs.append((name, fields))
    mechanisms = tuple(args.mechanism)
    jobs = [(name, fields, seed, args.data, mechanisms, args.run_root)
            for name, fields in configs for seed in args.seeds]
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            futures = [pool.submit(_compare_job, job) for job in jobs]
            outcomes = [_outcome(f.result) for f in futures]
    else:
        outcomes = [_outcome(lambda job=job: _compare_job(job)) for job in jobs]

    rows, failed = [], 0
    for job, (reports, err) in zip(jobs, outcomes):
        if err is not None:
            failed += 1
            print(f"run {job[0]} seed {job[2]} failed: {err}", file=sys.stderr)
            continue
        for mech, rep in reports.items():
            rows.append(dict(config=job[0], seed=job[2], mechanism=mech,
                             **{k: rep[k] for k in METRICS}))
    table = aggregate(rows)
    os.makedirs(args.out, exist_ok=True)
    write_csv(os.path.join(args.out, "runs.csv"), rows,
              ["config", "seed", "mechanism", *METRICS])
    write_csv(os.path.join(args.out, "summary.csv"), table,
              ["config", "mechanism", "n", *[f"{m}_{s}" for m in METRICS for s in ("mean", "std")]])
    text = format_table(table)
    with open(os.path.join(args.out, "summary.txt"), "w") as fh:
        fh.write(text)
    print(text, end="")
    return EXIT_RUNTIME if failed else EXIT_OK


def _outcome(call):
    try:
        return call(), None
    except Exception as exc:  # one failed run must not sink the others
        return None, f"{type(exc).__name__}: {exc}"


def aggregate(rows):
    """Mean and sample std per (config, mechanism), in first-seen order."""
    groups = {}
    for r in rows:
        groups.setdefault((r["config"], r["mechanism"]), []).append(r)
    out = []
    for (config, mech), members in groups.items():
        entry = {"config": config, "mechanism": mech, "n": len(members)}
        for m in METRICS:
            entry[f"{m}_mean"], entry[f"{m}_std"] = summarize([r[m] for r in members])
        out.append(entry)
    return out


def write_csv(path, rows, columns):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, columns, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def format_table(table):
    header = f"{'config':<16}{'mechanism':<12}{'n':>3}" + "".join(f"{m.upper():>18}" for m in METRICS)
    lines = [header, "-" * len(header)]
    for e in table:
        cells = "".join(f"{e[m + '_mean']:>10.4f} ± {e[m + '_std']:.3f}" for m in METRICS)
        lines.append(f"{e['config']:<16}{e['mechanism']:<12}{e['n']:>3}{cells}")
    return "\n".join(lines) + "\n"


# argument parsing -------------------------------------------------------------------

def _add_train_flags(p):
    p.add_argument("--config", help="JSON file of StarConfig fields (or a run's config.json)")
    p.add_argument("--preset", choices=sorted(PRESETS), default="paper",
                   help="defaults to start from before the config file and flags")
    p.add_argument("--objective", choices=("pretrain", "down", "star"))
    p.add_argument("--gamma", type=float)
    p.add_argument("--fix-base", type=float, help="hold B fixed at this value")
    p.add_argument("--no-ce", action="store_true", help="drop the coarse cross-entropy term")
    p.add_argument("--no-kl-loss", action="store_true", help="drop the KL-space contrastive term")
    p.add_argument("--no-kl-weight", action="store_true", help="drop the B^d_KL reweighting")
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config field (value parsed as JSON when possible)")


def build_parser():
    parser = argparse.ArgumentParser(prog="starfcdc", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--coarse", type=int, default=3, help="number of coarse classes M")
    g.add_argument("--fine", type=int, default=9, help="number of fine classes K")
    g.add_argument("--per-fine", type=int, default=250)
    g.add_argument("--d-latent", type=int, default=8)
    g.add_argument("--d-in", type=int, default=32)
    g.add_argument("--coarse-sep", type=float, default=4.0)
    g.add_argument("--fine-sep", type=float, default=2.0)
    g.add_argument("--noise", type=float, default=0.5)
    g.add_argument("--test-fraction", type=float, default=0.2)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train an encoder into a run directory")
    t.add_argument("--data", required=True, help="dataset directory")
    t.add_argument("--run-dir", required=True)
    _add_train_flags(t)
    t.set_defaults(func=cmd_train)

    for name, func, helptext in (("eval", cmd_eval, "evaluate a run on the test split"),
                                 ("export-clusters", cmd_export_clusters,
                                  "list training samples per fine pseudo-label")):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("--data", required=True)
        e.add_argument("--run-dir", required=True)
        e.add_argument("--checkpoint", choices=("best", "final"), default="best")
        if name == "eval":
            e.add_argument("--mechanism", choices=("clustering", "centroid"), default="clustering")
            e.add_argument("--out", help="report path (default RUN_DIR/eval_MECHANISM.json)")
        else:
            e.add_argument("--out", required=True, help="output directory")
        e.set_defaults(func=func)

    c = sub.add_parser("compare", help="mean +- std over configs x seeds")
    c.add_argument("--configs", nargs="+", required=True)
    c.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2])
    c.add_argument("--data", help="dataset directory shared by all runs")
    c.add_argument("--benchmark", action="store_true",
                   help="regenerate the standard synthetic benchmark per seed instead of --data")
    c.add_argument("--preset", choices=sorted(PRESETS), default="paper")
    c.add_argument("--mechanism", nargs="+", choices=("clustering", "centroid"),
                   default=["clustering"])
    c.add_argument("--workers", type=int, default=1)
    c.add_argument("--run-root", help="keep each run's directory under this path")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compare)
    return parser


def main(argv=None):
    logging.basicConfig(level=os.environ.get("STARFCDC_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, ArtifactError, ShapeMismatchError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
