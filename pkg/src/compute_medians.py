import argparse
import json

import pandas as pd

SUMMARY_COLUMNS = ["avg_cost", "regret_d", "fit_d"]


def summarize(df):
    """
    Median over seeds of each algorithm's final avg_cost, regret_d and fit_d.
    Works from the emitted rows alone, so anyone holding results.csv can
    recompute it.
    """
    if df.empty:
        return pd.DataFrame(columns=SUMMARY_COLUMNS + ["n_seeds"]).rename_axis("algorithm")
    final = df.sort_values(["algorithm", "seed", "t"]).groupby(["algorithm", "seed"]).last()
    medians = final[SUMMARY_COLUMNS].groupby(level="algorithm").median()
    medians["n_seeds"] = final.groupby(level="algorithm").size()
    return medians


def medians_at(df, t, columns=SUMMARY_COLUMNS):
    """Median over seeds of the given columns at slot t, per algorithm."""
    at = df[df["t"] == t]
    return at.groupby("algorithm")[list(columns)].median()


def window_costs(df, edges):
    """
    Per-slot cost split into slot windows: median over seeds of the mean cost
    inside each window. `edges` are the last slots of every window but the
    final one, which runs to the end of the horizon.
    """
    T = int(df["t"].max())
    bounds = [0] + sorted(int(e) for e in edges if 0 < int(e) < T) + [T]
    columns = {}
    for lo, hi in zip(bounds, bounds[1:]):
        window = df[(df["t"] > lo) & (df["t"] <= hi)]
        per_seed = window.groupby(["algorithm", "seed"])["cost"].mean()
        columns[f"{lo + 1}-{hi}"] = per_seed.groupby(level="algorithm").median()
    return pd.DataFrame(columns).rename_axis("algorithm")


def main(argv=None):
    parser = argparse.ArgumentParser(description="Median final metrics per algorithm")
    parser.add_argument("results", nargs="?", default="results/results.csv")
    parser.add_argument("--out", default=None, help="optional JSON output")
    parser.add_argument("--windows", default=None,
                        help="comma-separated window ends for a per-slot cost breakdown, e.g. 50,200")
    args = parser.parse_args(argv)

    print(f"Loading {args.results}...")
    try:
        df = pd.read_csv(args.results, float_precision="round_trip")
    except Exception as e:
        print(f"Error loading results: {e}")
        return 1

    print("Computing medians...")
    medians = summarize(df)
    print(medians.to_string(float_format=lambda v: f"{v:.6g}"))

    if args.windows and not df.empty:
        edges = [int(e) for e in args.windows.split(",") if e.strip()]
        print("\nMedian mean cost per slot window:")
        print(window_costs(df, edges).to_string(float_format=lambda v: f"{v:.6g}"))

    if args.out:
        with open(args.out, "w") as f:
            json.dump(medians.to_dict(orient="index"), f, indent=2)
        print(f"Saved medians for {len(medians)} algorithms to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
