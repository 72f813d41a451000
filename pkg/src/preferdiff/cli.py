"""``preferdiff {synth,train,evaluate,inspect}`` command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical abort.
Failures print a single ``preferdiff: error code=<n> kind=<kind>: <message>`` line.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import pipeline
from .checkpoint import CheckpointError, load_checkpoint, manifest_path, save_checkpoint
from .config import ConfigError, RunConfig, parse_config, parse_overrides
from .data import DataError, gen_synthetic, write_synthetic, write_text_embeddings
from .evaluation import KS, covariance_diagnostic
from .objective import gradient_weight
from .trainer import NumericalAbort

log = logging.getLogger("preferdiff")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    return out


def _checkpoint_prefix(cfg: RunConfig, given: str | None) -> Path:
    return Path(given) if given else Path(cfg.out) / "checkpoint"


def cmd_synth(cfg: RunConfig, checkpoint=None) -> int:
    _out_dir(cfg)
    data = gen_synthetic(cfg.n_users, cfg.n_items, cfg.d_latent, cfg.noise, cfg.seed, cfg.n_clusters)
    path, side = write_synthetic(cfg.interactions, data)
    write_text_embeddings(Path(str(path) + ".emb"), data.latent)
    print(f"wrote {len(data.log)} interactions for {data.log.n_users} users / {data.log.n_items} items to {path}")
    print(f"wrote cluster sidecar {side} and latent item vectors {path}.emb")
    return EXIT_OK


def cmd_train(cfg: RunConfig, checkpoint=None) -> int:
    out = _out_dir(cfg)
    splits = pipeline.load_splits(cfg)
    log.info("split sizes train=%d valid=%d test=%d items=%d",
             len(splits.train), len(splits.valid), len(splits.test), splits.n_items)
    params, table, result = pipeline.train_model(cfg, splits, out / "train_log.csv", out / "train_time.csv")
    prefix = _checkpoint_prefix(cfg, checkpoint)
    save_checkpoint(prefix, params, table, result.opt,
                    {"config_hash": cfg.structural_hash(), "best_epoch": result.best_epoch})
    print(f"best epoch {result.best_epoch}: valid recall@5={result.best_recall5:.4f}; "
          f"checkpoint {manifest_path(prefix)}")
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig, checkpoint=None) -> int:
    out = _out_dir(cfg)
    prefix = _checkpoint_prefix(cfg, checkpoint)
    if not manifest_path(prefix).exists():
        raise CheckpointError(f"checkpoint not found: {manifest_path(prefix)}")
    ck = load_checkpoint(prefix, cfg.structural_hash())
    splits = pipeline.load_splits(cfg)
    if splits.n_items != ck.params.config.n_items:
        raise DataError(f"checkpoint has {ck.params.config.n_items} items, data has {splits.n_items}")
    rows = []
    for name, examples in (("valid", splits.valid), ("test", splits.test)):
        res = pipeline.evaluate_model(cfg, ck.params, ck.table, examples)
        for k in KS:
            rows.append((name, k, res.metrics[f"recall@{k}"], res.metrics[f"ndcg@{k}"]))
    with (out / "metrics.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["split", "K", "recall", "ndcg"])
        w.writerows([s, k, repr(r), repr(n)] for s, k, r, n in rows)
    print(f"{'split':<6} {'K':>3} {'recall':>8} {'ndcg':>8}")
    for s, k, r, n in rows:
        print(f"{s:<6} {k:>3} {r:8.4f} {n:8.4f}")
    return EXIT_OK


def cmd_inspect(cfg: RunConfig, checkpoint=None) -> int:
    out = _out_dir(cfg) / "inspect"
    out.mkdir(exist_ok=True)
    schedule = pipeline.schedule_of(cfg)
    with (out / "schedule.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "beta", "alpha", "alpha_bar"])
        w.writerows([t, repr(float(b)), repr(float(a)), repr(float(ab))] for t, b, a, ab in schedule.rows())
    print(f"wrote {out / 'schedule.csv'}")
    if checkpoint is None:
        return EXIT_OK

    prefix = Path(checkpoint)
    if not manifest_path(prefix).exists():
        raise CheckpointError(f"checkpoint not found: {manifest_path(prefix)}")
    ck = load_checkpoint(prefix, cfg.structural_hash())
    cov = covariance_diagnostic(ck.table)
    np.savetxt(out / "covariance.csv", cov.covariance, delimiter=",", fmt="%.10g")
    summary = (f"items={ck.table.count} dim={ck.table.dim}\n"
               f"covariance diagonal mean={cov.diag_mean:.6f}\n"
               f"covariance off-diagonal rms={cov.offdiag_rms:.6f}\n")
    (out / "report.txt").write_text(summary, encoding="utf-8")
    margins = np.linspace(-10.0, 10.0, 101)  # log p(neg) - log p(pos)
    with (out / "gradient_weight.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["neg_minus_pos", "weight"])
        w.writerows([repr(float(m)), repr(gradient_weight(0.0, m))] for m in margins)
    print(summary, end="")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "evaluate": cmd_evaluate, "inspect": cmd_inspect}


def _fail(code: int, kind: str, msg) -> int:
    text = " ".join(str(msg).split())
    print(f"preferdiff: error code={code} kind={kind}: {text}", file=sys.stderr)
    return code


def _blas_limit(threads: int):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return nullcontext()
    # one BLAS thread per worker keeps reductions, and so results, bit-stable
    return threadpool_limits(limits=1)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="preferdiff", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--checkpoint", help="checkpoint prefix (default <out>/checkpoint)")
    parser.add_argument("-v", "--verbose", action="store_true")
    args, rest = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config, parse_overrides(rest))
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    log.info("resolved config:\n%s", cfg.to_text())
    try:
        with _blas_limit(cfg.threads):
            return COMMANDS[args.command](cfg, args.checkpoint)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    except (DataError, CheckpointError, FileNotFoundError) as exc:
        return _fail(EXIT_DATA, "data", exc)
    except NumericalAbort as exc:
        return _fail(EXIT_NUMERIC, "numerical", exc)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
