"""Steady-state MSD across penalty weights for two smoothing levels."""

from dataclasses import replace

from _common import load, parser

from diffadapt.harness import sweep


def main():
    p = parser(__doc__, "sparse_estimation.json")
    p.add_argument("--rho", type=float, nargs="+", default=[0.0, 1.0, 2.0, 3.0, 4.0])
    p.add_argument("--epsilon", type=float, nargs="+", default=[1e-2, 1.0])
    p.add_argument("--horizon", type=int, default=2000)
    p.add_argument("--strategy", default="atc")
    args = p.parse_args()
    base = load(args)
    base = replace(base, strategies=[s for s in base.strategies if s.label == args.strategy])
    base = replace(base, run=replace(base.run, horizon=args.horizon))
    for eps in args.epsilon:
        cfg = replace(base, cost=replace(base.cost, epsilon=eps))
        cfg = replace(cfg, output=replace(cfg.output, prefix=f"{cfg.output.prefix}_eps{eps:g}"))
        res = sweep(cfg, "rho", args.rho, write=True)
        ref = res.lookup(args.rho[0], args.strategy).per_trial
        print(f"epsilon = {eps:g}")
        for rho in args.rho:
            row = res.lookup(rho, args.strategy)
            d = row.per_trial - ref
            z = d.mean() / (d.std(ddof=1) / d.size**0.5) if d.any() else 0.0
            print(f"  rho {rho:4g}  {row.msd_db:8.2f} dB  paired change {z:+6.1f} s.e.")


if __name__ == "__main__":
    main()
