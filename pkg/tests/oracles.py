"""Straight-line reference evaluations used as test oracles.

Everything here is written with plain Python loops and ``math`` so it shares
no code path with the vectorised implementations under test.
"""

import itertools
import math


def soft_assign(z, mu):
    out = []
    for zi in z:
        kern = []
        for mj in mu:
            d2 = sum((a - b) ** 2 for a, b in zip(zi, mj))
            kern.append(1.0 / (1.0 + d2))
        s = sum(kern)
        out.append([k / s for k in kern])
    return out


def target_distribution(q):
    k = len(q[0])
    f = [sum(row[j] for row in q) for j in range(k)]
    out = []
    for row in q:
        w = [row[j] ** 2 / f[j] for j in range(k)]
        s = sum(w)
        out.append([x / s for x in w])
    return out


def kl_loss(p, q):
    total = 0.0
    for prow, qrow in zip(p, q):
        for pij, qij in zip(prow, qrow):
            if pij > 0:
                total += pij * math.log(pij / qij)
    return total


def mse_loss(c, chat):
    """(1/M) sum_m ||C_m - Chat_m||^2 with M = number of rows."""
    m = len(c)
    total = 0.0
    for crow, hrow in zip(c, chat):
        total += sum((a - b) ** 2 for a, b in zip(crow, hrow))
    return total / m


def cross_entropy_loss(logits, labels):
    total = 0.0
    for row, y in zip(logits, labels):
        top = max(row)
        lse = top + math.log(sum(math.exp(v - top) for v in row))
        total += lse - row[y]
    return total / len(labels)


def matvec(x, w):
    """Row vector ``x`` times matrix ``w`` (list of rows)."""
    return [sum(x[i] * w[i][j] for i in range(len(x))) for j in range(len(w[0]))]


def aggregate_motion(x, y, alpha, theta, phi, sigma, value_of_j=False):
    """y_hat_i = y_i + alpha * sum_j softmax_j(<theta x_i, phi x_j> / sqrt(d)) * sigma(y_i or y_j)."""
    n = len(x)
    q = [matvec(xi, theta) for xi in x]
    k = [matvec(xi, phi) for xi in x]
    v = [matvec(yi, sigma) for yi in y]
    d = len(q[0])
    out = []
    for i in range(n):
        s = [sum(a * b for a, b in zip(q[i], k[j])) / math.sqrt(d) for j in range(n)]
        top = max(s)
        e = [math.exp(t - top) for t in s]
        z = sum(e)
        f = [t / z for t in e]
        acc = [0.0] * len(y[i])
        for j in range(n):
            val = v[j] if value_of_j else v[i]
            for c in range(len(acc)):
                acc[c] += f[j] * val[c]
        out.append([y[i][c] + alpha * acc[c] for c in range(len(acc))])
    return out


def nearest_centroid(points, centroids):
    labels = []
    for p in points:
        best, best_d = None, None
        for j, c in enumerate(centroids):
            d = sum((a - b) ** 2 for a, b in zip(p, c))
            if best_d is None or d < best_d:
                best, best_d = j, d
        labels.append(best)
    return labels


def cluster_accuracy(pred, truth, k):
    """Best accuracy over all relabelings (exhaustive matching)."""
    best = 0.0
    for perm in itertools.permutations(range(k)):
        hits = sum(1 for p, t in zip(pred, truth) if perm[p] == t)
        best = max(best, hits / len(truth))
    return best


def auroc(negatives, positives):
    """Probability that a random positive scores above a random negative (ties count half)."""
    wins = 0.0
    for p in positives:
        for n in negatives:
            if p > n:
                wins += 1.0
            elif p == n:
                wins += 0.5
    return wins / (len(positives) * len(negatives))


def polar_vector(joints_xy):
    """Mid-hip pole, radius / max radius, angle atan2(-dy, dx) in [0, 2pi) scaled to [0, 1)."""
    hx = (joints_xy[11][0] + joints_xy[12][0]) / 2.0
    hy = (joints_xy[11][1] + joints_xy[12][1]) / 2.0
    rel = [(x - hx, y - hy) for x, y in joints_xy]
    radii = [math.hypot(dx, dy) for dx, dy in rel]
    rmax = max(radii)
    out = []
    for (dx, dy), r in zip(rel, radii):
        if r == 0 or rmax == 0:
            out += [0.0, 0.0]
            continue
        theta = math.atan2(-dy, dx) % (2 * math.pi)
        out += [r / rmax, theta / (2 * math.pi)]
    return out
