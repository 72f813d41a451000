"""Test Recall/NDCG of one trained model as the number of sampler steps varies."""
from _common import base_parser, make_cfg, write_rows

from preferdiff import pipeline
from preferdiff.data import gen_synthetic, user_split


def main():
    ap = base_parser(__doc__)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--steps", type=int, nargs="+", default=[1, 2, 4, 10, 20, 50, 100])
    args = ap.parse_args()
    rows = []
    for seed in args.seeds:
        cfg = make_cfg(args.config, seed=seed, lr=args.lr, epochs=args.epochs)
        data = gen_synthetic(cfg.n_users, cfg.n_items, cfg.d_latent, cfg.noise, cfg.seed, cfg.n_clusters)
        tr, va, te = user_split(data.log, cfg.split_ratios, cfg.max_len)
        params, table, _ = pipeline.train_model(cfg, pipeline.Splits(tr, va, te, data.log.n_items))
        for s in args.steps:
            m = pipeline.evaluate_model(cfg, params, table, te, ddim_steps=s).metrics
            rows.append([seed, s, m["recall@5"], m["ndcg@5"], m["recall@10"], m["ndcg@10"]])
            print(f"seed {seed} steps {s:>3} R@5={m['recall@5']:.3f} N@5={m['ndcg@5']:.3f}", flush=True)
    write_rows(args.csv, ["seed", "ddim_steps", "recall@5", "ndcg@5", "recall@10", "ndcg@10"], rows)


if __name__ == "__main__":
    main()
