"""Moving-target localization: constant step sizes against a decaying schedule."""

from _common import load, parser

from diffadapt.harness import to_db, tracking_experiment


def main():
    p = parser(__doc__, "tracking.json")
    p.add_argument("--after", type=int, default=1000, help="average MSD from this iteration on")
    args = p.parse_args()
    res = tracking_experiment(load(args), write=True)
    curve = res.curve
    late = curve.iterations >= args.after
    for lab, msd in curve.msd.items():
        print(f"{lab:>20}  mean MSD after {args.after}: {to_db(msd[late].mean()):8.2f} dB")
    print("\n".join(str(f) for f in res.experiment.files))


if __name__ == "__main__":
    main()
