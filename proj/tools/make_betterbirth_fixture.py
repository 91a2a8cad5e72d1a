"""Writes tests/fixtures/betterbirth.csv: a synthetic three-stage trial shaped
like the BetterBirth study (113 / 2143 / 5086 births, launch days and coaching
visits, monthly birth volume per 100 as the center covariate).

Outcomes are mean + noise with the noise projected orthogonal to the logit
score columns at the target coefficients, so the estimating equations are
solved exactly at those coefficients. The noise is then scaled so the robust
standard error of the linear predictor at (5 days, 31 visits, z = 1.75)
equals TARGET_SE_ETA. Deterministic for a fixed seed.

Centers share a random effect. Outcomes are a continuous score and are not
confined to [0, 1].

usage: python3 tools/make_betterbirth_fixture.py [out.csv]
"""

import sys

import numpy as np

SEED = 20150301
# intercept, launch days, coaching visits (per visit), birth volume per 100
BETA = np.array([-0.138, 0.17, 0.172 / 5.0, -0.202])
TARGET_SE_ETA = 0.1112
X_EVAL = np.array([1.0, 5.0, 31.0, 1.75])

# (stage, arm, launch days, coaching visits, births)
CENTERS = [
    (1, "intervention", 1, 8, 41), (1, "intervention", 2, 14, 37), (1, "control", 0, 0, 35),
]
rng = np.random.default_rng(SEED)
for stage, n_int, n_ctl, births, days, visits in [
    (2, 14, 2, 2143, (1, 1), (18, 40)),
    (3, 24, 2, 5086, (1, 1), (20, 36)),
]:
    sizes = rng.multinomial(births - (n_int + n_ctl) * 40, np.ones(n_int + n_ctl) / (n_int + n_ctl)) + 40
    for j in range(n_int):
        CENTERS.append((stage, "intervention", int(rng.integers(days[0], days[1] + 1)),
                        int(rng.integers(visits[0], visits[1] + 1)), int(sizes[j])))
    for j in range(n_ctl):
        CENTERS.append((stage, "control", 0, 0, int(sizes[n_int + j])))


def build():
    rows, X, cluster = [], [], []
    for idx, (stage, arm, a1, a2, n) in enumerate(CENTERS):
        z = round(float(rng.uniform(0.8, 3.0)), 2)
        cid = f"s{stage}c{idx:02d}"
        for _ in range(n):
            rows.append((stage, cid, arm))
            X.append([1.0, a1, a2, z])
            cluster.append(idx)
    return rows, np.array(X), np.array(cluster)


def sandwich(X, mu, resid):
    D = X * (mu * (1 - mu))[:, None]
    Ji = np.linalg.inv(D.T @ D)
    return Ji @ ((D * resid[:, None] ** 2).T @ D) @ Ji


def main(out):
    rows, X, cluster = build()
    eta = X @ BETA
    mu = 1 / (1 + np.exp(-eta))
    D = X * (mu * (1 - mu))[:, None]
    e = rng.normal(0.0, 0.5, len(CENTERS))[cluster] + rng.normal(0.0, 1.0, len(X))
    e *= np.sqrt(mu * (1 - mu))
    # remove the component of e in the span of the score columns
    e = e - D @ np.linalg.lstsq(D, e, rcond=None)[0]
    se1 = np.sqrt(X_EVAL @ sandwich(X, mu, e) @ X_EVAL)
    e *= TARGET_SE_ETA / se1
    y = mu + e
    cov = sandwich(X, mu, e)
    print(f"rows {len(y)}  stage sizes {[sum(r[0] == k for r in rows) for k in (1, 2, 3)]}", file=sys.stderr)
    print(f"se {np.sqrt(np.diag(cov))}  se_eta {np.sqrt(X_EVAL @ cov @ X_EVAL):.5f}", file=sys.stderr)
    print(f"y range [{y.min():.3f}, {y.max():.3f}]  max |U| {np.abs(D.T @ (y - mu)).max():.2e}", file=sys.stderr)
    with open(out, "w") as f:
        f.write("stage,center_id,arm,y,a_1,a_2,z_1\n")
        for (stage, cid, arm), x, yi in zip(rows, X, y):
            a1, a2 = (int(x[1]), int(x[2]))
            f.write(f"{stage},{cid},{arm},{float(yi)!r},{a1},{a2},{float(x[3])!r}\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/fixtures/betterbirth.csv")
