"""
Independent recomputation of the canonical fixture's golden numbers.

Uses only math and itertools. Run: python scripts/brute_force_f1.py
"""

import itertools
import math

BEACON = [[1, 0, 1, 0], [1, 1, 0, 0]]
REFS = [[1, 1, 0, 0], [0, 0, 1, 0]]
AAF = [0.1, 0.2, 0.3, 0.25]
DELTA, N, M = 0.1, 2, 4

Dn = [(1 - f) ** (2 * N) for f in AAF]
Dn1 = [(1 - f) ** (2 * N - 2) for f in AAF]
A = [math.log((1 - Dn[j]) / (1 - DELTA * Dn1[j])) for j in range(M)]
B = [math.log(Dn[j] / (DELTA * Dn1[j])) for j in range(M)]
x = [int(any(row[j] for row in BEACON)) for j in range(M)]


def score(row, resp, queries=range(M)):
    return sum(row[j] * (A[j] if resp[j] else B[j]) for j in queries)


def published(flips):
    return [x[j] and j not in flips for j in range(M)]


def show(label, values):
    print(f"{label:<28}" + "  ".join(f"{v:.6f}" for v in values))


show("A", A)
show("B", B)
print(f"{'x':<28}{x}")
show("eta (members)", [score(r, x) for r in BEACON])
show("L (references)", [score(r, x) for r in REFS])
show("L after flipping SNV 0", [score(r, published({0})) for r in BEACON])

# adaptive attack, K = 2, B-bar chosen on the honest answers
K = 2
bottom = sorted(range(len(REFS)), key=lambda k: score(REFS[k], x))[:K]
eta_K = sum(score(REFS[k], x) for k in bottom) / K
delta_K = [(B[j] - A[j]) * sum(REFS[k][j] for k in bottom) / K if x[j] else 0.0 for j in range(M)]
show("eta_K (K=2)", [eta_K])
show("Delta_K (K=2)", delta_K)
eligible = [j for j in range(M) if x[j] and all(r[j] * (B[j] - A[j]) >= delta_K[j] for r in BEACON)]
print(f"{'eligible flips (K=2)':<28}{eligible}")

# delta bound
q1 = [j for j in range(M) if x[j]]
q0 = [j for j in range(M) if not x[j]]
d_n = min(math.log(Dn[j] / (1 - Dn[j])) for j in q1)
eta_w = min(
    sum(r[j] * math.log(1 - Dn[j]) for j in q1) + sum(r[j] * math.log(Dn[j] / (0.25 * Dn1[j])) for j in q0)
    for r in BEACON
)
bound = 1 / (1 + math.exp(0.0 - eta_w - d_n))
show("delta bound D_n, eta, bound", [d_n, eta_w, bound])

# exhaustive minimum flips against the fixed threshold 0
for size in range(M + 1):
    hits = [set(c) for c in itertools.combinations(q1, size) if all(score(r, published(set(c))) >= 0 for r in BEACON)]
    if hits:
        print(f"{'min flips, theta=0':<28}{size} {sorted(map(sorted, hits))}")
        break

# online greedy, theta = 0, order 2, 0, 1
flips, seen, answers = set(), [], []
for q in (2, 0, 1):
    seen.append(q)
    honest = published(flips)
    if x[q] and any(score(r, honest, seen) < 0 for r in BEACON):
        flips.add(q)
    answers.append(int(published(flips)[q]))
print(f"{'online answers (2,0,1)':<28}{answers}")


# unauthenticated worst case: min over every query subset
def worst(row, fl, theta):
    resp = published(fl)
    return min(
        score(row, resp, sub) - theta
        for size in range(M + 1)
        for sub in itertools.combinations(range(M), size)
    )


show("unauth margins, F={}", [worst(r, set(), -1.1) for r in BEACON])
show("unauth margins, F={0}", [worst(r, {0}, -1.1) for r in BEACON])

tiny = 1e-240
show("B_0 at delta=1e-240", [math.log(Dn[0] / Dn1[0]) - math.log(tiny)])
