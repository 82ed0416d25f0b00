import argparse

import numpy as np
import pandas as pd

from experiment import RESULT_COLUMNS


def check_results(df, T=None):
    """
    Sanity checks on a result table. Returns a list of (status, message)
    pairs with status in PASS / FAIL / INFO.
    """
    report = []
    if list(df.columns) != RESULT_COLUMNS:
        report.append(("FAIL", f"columns {list(df.columns)} differ from {RESULT_COLUMNS}"))
        return report
    report.append(("PASS", "column order matches the result schema"))
    if df.empty:
        report.append(("INFO", "no rows"))
        return report

    # 1. Row count per (seed, algorithm)
    counts = df.groupby(["seed", "algorithm"]).size()
    expected = T if T is not None else int(counts.max())
    short = counts[counts != expected]
    if len(short):
        report.append(("FAIL", f"{len(short)} (seed, algorithm) groups without {expected} rows"))
    else:
        report.append(("PASS", f"{len(counts)} groups of {expected} rows"))

    # 2. Slots contiguous 1..T
    broken = [key for key, group in df.groupby(["seed", "algorithm"])
              if not np.array_equal(group["t"].to_numpy(), np.arange(1, len(group) + 1))]
    if broken:
        report.append(("FAIL", f"non-contiguous slots in {broken[:5]}"))
    else:
        report.append(("PASS", "slot index contiguous in every group"))

    # 3. Fit is a norm
    negative = int((df["fit_d"] < 0).sum())
    if negative:
        report.append(("FAIL", f"{negative} rows with negative fit"))
    else:
        report.append(("PASS", "fit non-negative"))

    # 4. Non-finite values
    numeric = df[["cost", "cost_perslot", "regret_d", "fit_d", "lambda_norm", "queue_norm", "avg_cost"]]
    bad = int((~np.isfinite(numeric.to_numpy(dtype=float))).sum())
    if bad:
        report.append(("FAIL", f"{bad} non-finite metric values"))
    else:
        report.append(("PASS", "all metric values finite"))

    # 5. Per-slot benchmark has zero regret against itself
    perslot = df[df["algorithm"] == "perslot"]
    if len(perslot):
        report.append(("INFO", f"per-slot benchmark max |regret| = {perslot['regret_d'].abs().max():.3g}"))
    return report


def main(argv=None):
    parser = argparse.ArgumentParser(description="Check an emitted results.csv")
    parser.add_argument("results", nargs="?", default="results/results.csv")
    parser.add_argument("--T", type=int, default=None)
    args = parser.parse_args(argv)

    print(f"Loading {args.results}...")
    try:
        df = pd.read_csv(args.results, float_precision="round_trip")
    except FileNotFoundError:
        print(f"Error: {args.results} not found.")
        return 1

    print(f"Data Shape: {df.shape}")
    report = check_results(df, args.T)
    for status, message in report:
        print(f"   [{status}] {message}")
    return 1 if any(status == "FAIL" for status, _ in report) else 0


if __name__ == "__main__":
    raise SystemExit(main())
