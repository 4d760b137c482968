"""Sparse estimation: learning curves, steady-state gain and bias split."""

from _common import load, parser

from diffadapt.harness import biased_reference_msd, run_experiment, to_db


def main():
    p = parser(__doc__, "sparse_estimation.json")
    p.add_argument("--bias", action="store_true", help="also estimate the bias/variance split")
    args = p.parse_args()
    cfg = load(args)
    res = run_experiment(cfg, write=True, with_theory=False)
    for row in res.summary_rows():
        print(f"{row['strategy']:>12}  {row['msd_db']:8.2f} dB  diverged={row['diverged']}")
    nc = res.steady["noncoop"].msd_db if "noncoop" in res.steady else None
    if nc is not None and "atc" in res.steady:
        print(f"ATC gain over non-cooperative: {nc - res.steady['atc'].msd_db:.2f} dB")
    if args.bias:
        dec = biased_reference_msd(cfg)
        print(f"bias ||w_true - w_hat||^2 = {dec.bias:.3e} ({to_db(dec.bias):.2f} dB)")
        for lab, total in dec.total.items():
            print(f"{lab:>12}  total {to_db(total):7.2f} dB  variance {to_db(dec.variance[lab]):7.2f} dB")
    print("\n".join(str(f) for f in res.files))


if __name__ == "__main__":
    main()
