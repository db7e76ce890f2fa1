"""Regenerates p2_oracle.json: random relaxed-assignment programs solved by HiGHS.

Run from this directory with `python3 gen_p2_oracle.py`. Links that are
unusable are written as null latency/energy.
"""
import itertools
import json

import numpy as np
from scipy.optimize import linprog


def build(inst):
    h = np.array(inst["histograms"], dtype=float)
    m, k = h.shape
    n = inst["num_edges"]
    pairs = inst["pairs"]
    nv = m * n + k * len(pairs)
    c = np.zeros(nv)
    c[m * n:] = 1.0
    a_ub, b_ub, a_eq, b_eq = [], [], [], []
    bounds = [(0.0, 1.0)] * (m * n) + [(0.0, None)] * (k * len(pairs))
    for cls in range(k):
        for p, (a, b) in enumerate(pairs):
            diff = np.zeros(nv)
            for i in range(m):
                diff[i * n + a] += h[i, cls]
                diff[i * n + b] -= h[i, cls]
            u = m * n + cls * len(pairs) + p
            row = diff.copy(); row[u] = -1.0; a_ub.append(row); b_ub.append(0.0)
            row = -diff; row[u] = -1.0; a_ub.append(row); b_ub.append(0.0)
    for i in range(m):
        lat, en = np.zeros(nv), np.zeros(nv)
        for j in range(n):
            l, e = inst["latency"][i][j], inst["energy"][i][j]
            if l is None or e is None:
                bounds[i * n + j] = (0.0, 0.0)
            else:
                lat[i * n + j], en[i * n + j] = l, e
        a_ub.append(lat); b_ub.append(inst["deadline"] - inst["compute_times"][i])
        a_ub.append(en); b_ub.append(inst["energy_budgets"][i])
    for i in range(m):
        row = np.zeros(nv); row[i * n:(i + 1) * n] = 1.0
        a_eq.append(row); b_eq.append(1.0)
    return c, np.array(a_ub), np.array(b_ub), np.array(a_eq), np.array(b_eq), bounds


def main():
    rng = np.random.default_rng(20240611)
    out = []
    while len(out) < 50:
        m = int(rng.integers(3, 9))
        n = int(rng.integers(2, 4))
        k = int(rng.integers(2, 4))
        hist = rng.integers(0, 60, size=(m, k))
        hist[hist.sum(axis=1) == 0, 0] = 1
        lat = rng.uniform(0.1, 1.8, size=(m, n)).round(6).tolist()
        en = rng.uniform(0.01, 0.6, size=(m, n)).round(6).tolist()
        for i in range(m):
            for j in range(n):
                if rng.random() < 0.05:
                    lat[i][j] = None
                    en[i][j] = None
        inst = {
            "histograms": hist.tolist(),
            "num_edges": n,
            "compute_times": rng.uniform(0.1, 0.5, size=m).round(6).tolist(),
            "deadline": 2.0,
            "latency": lat,
            "energy": en,
            "energy_budgets": rng.uniform(0.3, 1.0, size=m).round(6).tolist(),
            "pairs": [list(p) for p in itertools.combinations(range(n), 2)],
        }
        c, a_ub, b_ub, a_eq, b_eq, bounds = build(inst)
        res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq, bounds=bounds, method="highs")
        if res.status == 0:
            inst["status"] = "optimal"
            inst["objective"] = float(res.fun)
        elif res.status == 2:
            inst["status"] = "infeasible"
            inst["objective"] = None
        else:
            continue
        out.append(inst)
    with open("p2_oracle.json", "w") as f:
        json.dump(out, f, indent=1)
    print(sum(1 for x in out if x["status"] == "optimal"), "optimal of", len(out))


if __name__ == "__main__":
    main()
