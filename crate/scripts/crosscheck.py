#!/usr/bin/env python3
"""Recompute the trace section of summary.json from trace.csv.

usage: crosscheck.py OUT_DIR
Exits 1 and lists the mismatches if any recomputed value differs.
"""
import csv
import json
import math
import sys
from collections import defaultdict

REL_TOL = 1e-9
ABS_TOL = 1e-12


def quad(m, v):
    return sum(v[r] * m[r][c] * v[c] for r in range(2) for c in range(2))


def main(out_dir):
    with open(f"{out_dir}/summary.json") as f:
        summary = json.load(f)
    rows = defaultdict(dict)
    with open(f"{out_dir}/trace.csv", newline="") as f:
        for r in csv.DictReader(f):
            rows[int(r["step"])][int(r["agent"])] = r

    steps = max(rows)
    agents = summary["agents"]
    w = summary["weights"]
    cost, gamma = [], []
    for i in range(agents):
        j = 0.0
        sent = [0, 0]
        for k in range(steps + 1):
            r = rows[k][i]
            eps = [float(r["eps_x"]), float(r["eps_y"])]
            if k == steps:
                j += quad(w["qm"][i], eps)
                continue
            u = [float(r["u_x"]), float(r["u_y"])]
            j += quad(w["q"][i], eps) + quad(w["r"][i], u)
            sent[0] += int(r["sigma_x"])
            sent[1] += int(r["sigma_y"])
        cost.append(j)
        gamma.append([s / steps for s in sent])

    last = [(float(rows[steps][i]["x"]), float(rows[steps][i]["y"])) for i in range(agents)]
    spread = max(
        (math.dist(a, b) for n, a in enumerate(last) for b in last[n + 1:]),
        default=0.0,
    )

    t = summary["trace"]
    checks = [("steps", steps, t["steps"]), ("final_true_spread", spread, t["final_true_spread"])]
    for i in range(agents):
        checks.append((f"cost[{i}]", cost[i], t["cost"][i]))
        for a in range(2):
            checks.append((f"gamma[{i}][{a}]", gamma[i][a], t["gamma"][i][a]))

    bad = [c for c in checks if not math.isclose(c[1], c[2], rel_tol=REL_TOL, abs_tol=ABS_TOL)]
    for name, mine, theirs in bad:
        print(f"mismatch {name}: trace.csv gives {mine!r}, summary.json has {theirs!r}")
    print(f"{len(checks) - len(bad)}/{len(checks)} values agree")
    return 1 if bad else 0


if __name__ == "__main__":
    if len(sys.argv) != 2:
        sys.exit(__doc__)
    sys.exit(main(sys.argv[1]))
