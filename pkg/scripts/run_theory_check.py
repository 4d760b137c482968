"""Compare simulated steady-state MSD with the closed-form prediction and bound."""

from _common import load, parser

from diffadapt.harness import run_experiment, to_db


def main():
    args = parser(__doc__, "quadratic_theory.json").parse_args()
    res = run_experiment(load(args), write=True)
    print(f"{'strategy':>10} {'sim dB':>8} {'theory dB':>10} {'diff':>6} {'worst node':>11} {'bound':>9}")
    for lab in res.curve.msd:
        ss = res.steady[lab]
        th = res.theory.get(lab)
        if ss is None or th is None or th.report is None:
            print(f"{lab:>10}  (no prediction)")
            continue
        bound = th.report.w_inf_bound
        print(
            f"{lab:>10} {ss.msd_db:8.2f} {th.network_msd_db:10.2f} {ss.msd_db - th.network_msd_db:6.2f} "
            f"{to_db(ss.worst_node_msd):11.2f} {'-' if bound is None else f'{to_db(bound):9.2f}'}"
        )
    print("\n".join(str(f) for f in res.files))


if __name__ == "__main__":
    main()
