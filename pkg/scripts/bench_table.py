"""Minutes-to-200-ESS table for both samplers over a range of catalog sizes.

Example::

    python scripts/bench_table.py --sizes 100,200,500,1000 --out bench
"""

import argparse
from pathlib import Path

from bayes_etas.cli import synthetic_catalog
from bayes_etas.diagnostics import benchmark
from bayes_etas.model import EtasParams
from bayes_etas.posterior import McmcConfig
from bayes_etas.tuning import pilot_tune


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--sizes", default="100,200,500")
    ap.add_argument("--theta", default="0.2,0.5,1.0,0.03,1.3", help="mu,K,alpha,c,p")
    ap.add_argument("--beta", type=float, default=2.3)
    ap.add_argument("--samples", type=int, default=5500)
    ap.add_argument("--burn-in", type=int, default=500)
    ap.add_argument("--inner-steps", type=int, default=10)
    ap.add_argument("--seed", type=int, default=2)
    ap.add_argument("--out", default="bench")
    args = ap.parse_args()

    theta = EtasParams(*map(float, args.theta.split(",")))
    sizes = [int(s) for s in args.sizes.split(",")]
    base = McmcConfig(n_samples=args.samples, burn_in=args.burn_in, seed=args.seed)
    catalogs = {n: synthetic_catalog(theta, args.beta, 3.0, n, seed=args.seed + k) for k, n in enumerate(sizes)}
    configs = {}
    for n, cat in catalogs.items():
        configs[(n, "latent")] = pilot_tune(cat, "latent", config=base.replace(inner_mh_steps=args.inner_steps))[0]
        configs[(n, "direct")] = pilot_tune(cat, "direct", config=base)[0]
        print(f"tuned n={n}", flush=True)
    table = benchmark(catalogs, config=base, configs=configs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "table.csv").write_text(table.to_csv(), encoding="utf-8")
    (out / "table.txt").write_text(table.to_text(), encoding="utf-8")
    print(table.to_text())


if __name__ == "__main__":
    main()
