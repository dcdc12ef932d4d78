"""Regenerate tests/golden/affiliation.json from the brute-force oracle.

Run once; the JSON is committed and the tests only read it.
"""

import json
from pathlib import Path

import numpy as np

from affiliation_bruteforce import affiliation


def random_binary(rng, T, n_events, max_len):
    y = np.zeros(T, dtype=int)
    for _ in range(n_events):
        L = int(rng.integers(1, max_len + 1))
        s = int(rng.integers(0, T - L + 1))
        y[s : s + L] = 1
    return y


def main():
    rng = np.random.default_rng(20240611)
    cases = []
    # the two fixed cases first
    T = 100
    gt = np.zeros(T, int); gt[40:60] = 1
    pred = np.zeros(T, int); pred[45:55] = 1
    cases.append({"T": T, "gt": gt.tolist(), "pred": pred.tolist()})
    cases.append({"T": T, "gt": gt.tolist(), "pred": gt.tolist()})
    while len(cases) < 50:
        T = int(rng.integers(30, 200))
        gt = random_binary(rng, T, int(rng.integers(1, 5)), 15)
        pred = random_binary(rng, T, int(rng.integers(0, 6)), 12)
        if not gt.any():
            continue
        cases.append({"T": T, "gt": gt.tolist(), "pred": pred.tolist()})
    for c in cases:
        p, r, f1 = affiliation(c["pred"], c["gt"])
        c.update({"p": p, "r": r, "f1": f1})
    out = Path(__file__).resolve().parents[1] / "golden" / "affiliation.json"
    out.write_text(json.dumps(cases) + "\n")
    print(f"wrote {len(cases)} cases to {out}")


if __name__ == "__main__":
    main()
