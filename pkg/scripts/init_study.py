"""Standard-normal ID embeddings against a 0.01-scaled normal init."""
from _common import base_parser, make_cfg, write_rows

from preferdiff.pipeline import synthetic_run


def main():
    ap = base_parser(__doc__)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--scales", type=float, nargs="+", default=[1.0, 0.01])
    args = ap.parse_args()
    rows = []
    for seed in args.seeds:
        for scale in args.scales:
            run = synthetic_run(make_cfg(args.config, seed=seed, lr=args.lr, epochs=args.epochs, init_scale=scale))
            m = run.test.metrics
            rows.append([seed, scale, run.fit.best_epoch, m["recall@5"], m["ndcg@5"]])
            print(f"seed {seed} scale {scale:<5} best_epoch={run.fit.best_epoch:>2} R@5={m['recall@5']:.3f}", flush=True)
    write_rows(args.csv, ["seed", "init_scale", "best_epoch", "recall@5", "ndcg@5"], rows)


if __name__ == "__main__":
    main()
