"""Localization: steady-state MSD versus step size for each strategy."""

from _common import load, parser

from diffadapt.harness import sweep


def main():
    p = parser(__doc__, "localization.json")
    p.add_argument("--mu", type=float, nargs="+", default=[0.01, 0.005, 0.0025])
    args = p.parse_args()
    res = sweep(load(args), "mu", args.mu, write=True)
    labels = list(dict.fromkeys(r.strategy for r in res.rows))
    print("mu        " + "".join(f"{lab:>14}" for lab in labels))
    for mu in args.mu:
        cells = []
        for lab in labels:
            v = res.lookup(mu, lab).msd_db
            cells.append(f"{'-' if v is None else f'{v:.2f}':>14}")
        print(f"{mu:<10g}" + "".join(cells))
    print("\n".join(str(f) for f in res.files))


if __name__ == "__main__":
    main()
