"""Command line: ``dhn train | eval | predict | synth``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical divergence.
The default seed is read from ``DHN_SEED`` when set (otherwise 0).
"""

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .data import GenConfig, Schema, generate_synthetic, load_csv, read_columns, split, write_csv
from .errors import DataError, DhnError, DivergenceError, UsageError
from .metrics import ALPHA_SWEEP, DEFAULT_ALPHA, evaluate
from .model import ABLATIONS, DhnConfig, load_model, predict, save_model, train

log = logging.getLogger("dhn")

SEED_ENV = "DHN_SEED"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _default_seed():
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _alphas(text):
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad alpha list {text!r}") from None
    if not vals or any(not 0 <= a <= 1 for a in vals):
        raise argparse.ArgumentTypeError("alphas must lie in [0, 1]")
    return vals


def _dims(text):
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad layer widths {text!r}") from None


def build_parser():
    seed = _default_seed()
    p = _Parser(prog="dhn", description="Deep hurdle network for zero-inflated multi-target data.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="fit a model")
    t.add_argument("--data", required=True, help="CSV with feature and target columns")
    t.add_argument("--schema", required=True, help="JSON schema naming the columns")
    t.add_argument("--kind", choices=("continuous", "count"),
                   help="data kind (default: taken from the schema)")
    t.add_argument("--out", default="dhn_run", help="output prefix (default: dhn_run)")
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--batch-size", type=int, default=256)
    t.add_argument("--seed", type=int, default=seed, help=f"default {seed} (env {SEED_ENV})")
    t.add_argument("--ablation", choices=ABLATIONS, default="full")
    t.add_argument("--cov-penalty", type=float, default=None,
                   help="covariance coupling weight (default 1.0; 0 under penalty-free ablations)")
    t.add_argument("--k-train", type=int, default=64, help="Monte-Carlo samples per row in training")
    t.add_argument("--k-eval", type=int, default=1024, help="samples per row when scoring NLL")
    t.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--decay", type=float, default=0.0, help="lr / (1 + decay * step)")
    t.add_argument("--encoder-dims", type=_dims, default=(512, 256))
    t.add_argument("--latent-dim", type=int, default=256)
    t.add_argument("--head-hidden", type=int, default=256)
    t.add_argument("--threads", type=int, default=1, help="1 is the deterministic reference mode")
    t.add_argument("--no-plot", action="store_true", help="skip the PNG figure")

    e = sub.add_parser("eval", help="score a model")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--schema", required=True)
    e.add_argument("--split", choices=("test", "all"), default="test",
                   help="rows to score: the seeded test split or every row (default test)")
    e.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    e.add_argument("--alpha-sweep", type=_alphas, nargs="?", const=list(ALPHA_SWEEP),
                   default=None, metavar="A,B,...")
    e.add_argument("--k-eval", type=int, default=None)
    e.add_argument("--out", default=None, help="output prefix (default: next to the model)")
    e.add_argument("--no-plot", action="store_true")

    r = sub.add_parser("predict", help="hurdle-gated predictions for feature rows")
    r.add_argument("--model", required=True)
    r.add_argument("--data", required=True, help="CSV holding at least the feature columns")
    r.add_argument("--schema", required=True)
    r.add_argument("--out", required=True, help="output CSV")

    s = sub.add_parser("synth", help="sample a synthetic dataset")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--m", type=int, required=True)
    s.add_argument("--l", type=int, required=True)
    s.add_argument("--kind", choices=("continuous", "count"), default="continuous")
    s.add_argument("--seed", type=int, default=seed)
    s.add_argument("--corr", type=float, default=1.0, help="shared-factor loading")
    s.add_argument("--signal", type=float, default=1.0, help="scale of the presence map")
    s.add_argument("--head-signal", type=float, default=None,
                   help="scale of the log-mean map (default: --signal)")
    s.add_argument("--presence-offset", type=float, default=-0.3)
    s.add_argument("--log-mean-offset", type=float, default=0.5)
    s.add_argument("--out", default="synth", help="prefix for .csv, .schema and .truth.json")
    return p


def _write(path, text):
    Path(path).write_text(text, encoding="utf-8")
    log.info("wrote %s", path)


def _json(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def cmd_train(args):
    schema = Schema.load(args.schema)
    if args.kind and args.kind != schema.kind:
        schema = Schema(schema.features, schema.targets, args.kind)
    ds = load_csv(args.data, schema)
    config = DhnConfig(
        M=ds.n_features, L=ds.n_targets, kind=schema.kind, encoder_dims=args.encoder_dims,
        latent_dim=args.latent_dim, head_hidden=args.head_hidden, k_train=args.k_train,
        k_eval=args.k_eval, cov_penalty=args.cov_penalty, epochs=args.epochs,
        batch_size=args.batch_size, optimizer=args.optimizer, lr=args.lr, decay=args.decay,
        seed=args.seed, ablation=args.ablation, threads=args.threads)
    out = args.out
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    effective = {"command": "train", "data": str(args.data), "schema": str(args.schema),
                 "config": config.to_dict()}
    _write(f"{out}.config.json", _json(effective))
    log.info("effective config: %s", json.dumps(effective, sort_keys=True))
    t0 = time.perf_counter()
    try:
        model, report = train(ds, config)
    except DivergenceError as exc:
        rep = getattr(exc, "report", None)
        if rep is not None:
            _write(f"{out}.report.txt", rep.to_text() + f"diverged = {exc}\n")
        raise
    save_model(model, f"{out}.model")
    log.info("wrote %s.model", out)
    _write(f"{out}.report.txt", report.to_text())
    _write(f"{out}.timing.json", _json({"total_seconds": time.perf_counter() - t0,
                                        "epoch_seconds": report.seconds}))
    if not args.no_plot:
        from .plotting import plot_training_curve
        plot_training_curve(report, f"{out}.curve.png")
    print(report.to_text(), end="")
    return 0


def _load_for(args):
    schema = Schema.load(args.schema)
    ds = load_csv(args.data, schema)
    model = load_model(args.model, expect_m=ds.n_features, expect_l=ds.n_targets)
    if model.config.kind != ds.kind:
        raise DataError(f"model was trained on {model.config.kind} data, dataset is {ds.kind}")
    return model, ds


def cmd_eval(args):
    model, ds = _load_for(args)
    rows = split(ds, model.config.seed).test if args.split == "test" else None
    report = evaluate(model, ds, rows, alpha=args.alpha, k_eval=args.k_eval,
                      alphas=args.alpha_sweep)
    out = args.out or str(Path(args.model).with_suffix(""))
    _write(f"{out}.eval.txt", report.to_text())
    if args.alpha_sweep:
        lines = ["alpha,zrmse"] + [f"{a:.12g},{v:.12g}" for a, v in sorted(report.sweep.items())]
        _write(f"{out}.sweep.csv", "\n".join(lines) + "\n")
        if not args.no_plot:
            from .plotting import plot_alpha_sweep
            plot_alpha_sweep(report.sweep, f"{out}.sweep.png")
    print(report.to_text(), end="")
    return 0


def cmd_predict(args):
    schema = Schema.load(args.schema)
    model = load_model(args.model)
    if len(schema.features) != model.config.M:
        raise DataError(f"schema lists {len(schema.features)} features, model expects "
                        f"{model.config.M}")
    x = read_columns(args.data, list(schema.features))
    L = model.config.L
    header = [f"p_{j + 1}" for j in range(L)] + [f"yhat_{j + 1}" for j in range(L)]
    with Path(args.out).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        if len(x):
            yhat, p = predict(model, x)
            for pr, yr in zip(p, yhat):
                w.writerow([repr(float(v)) for v in pr] + [repr(float(v)) for v in yr])
    log.info("wrote %d rows to %s", len(x), args.out)
    return 0


def cmd_synth(args):
    cfg = GenConfig(args.n, args.m, args.l, kind=args.kind, seed=args.seed, corr=args.corr,
                    signal=args.signal, head_signal=args.head_signal,
                    presence_offset=args.presence_offset, log_mean_offset=args.log_mean_offset)
    ds, truth = generate_synthetic(cfg)
    out = args.out
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    write_csv(ds, f"{out}.csv")
    ds.schema.dump(f"{out}.schema")
    truth["gen_config"] = {"n": args.n, "m": args.m, "l": args.l, "kind": args.kind,
                           "seed": args.seed, "corr": args.corr, "signal": args.signal,
                           "head_signal": args.head_signal,
                           "presence_offset": args.presence_offset,
                           "log_mean_offset": args.log_mean_offset}
    _write(f"{out}.truth.json", _json(truth))
    print(f"wrote {out}.csv ({ds.n_rows} rows, nonzero fraction {ds.nonzero_fraction:.4f})")
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "predict": cmd_predict, "synth": cmd_synth}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        return COMMANDS[args.command](args)
    except DhnError as exc:
        print(f"dhn: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"dhn: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
