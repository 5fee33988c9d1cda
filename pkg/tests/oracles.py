"""Independent reference implementations used as test oracles.

Deliberately naive: scalar loops, brute force and plain floats, sharing no
code with the package.
"""

import itertools
import math

import numpy as np


# --------------------------------------------------------------------------
# projection


def lstsq_coefficients(x, a, b):
    """argmin over (u, v) of |x - u a - v b| by dense least squares."""
    m = np.column_stack([a, b])
    coef, *_ = np.linalg.lstsq(m, np.asarray(x, float), rcond=None)
    return float(coef[0]), float(coef[1])


def vertex_bounds(coeff_u, coeff_v):
    """Extrema of two linear functionals over every vertex of [0,1]^n."""
    n = len(coeff_u)
    us, vs = [], []
    for bits in itertools.product((0.0, 1.0), repeat=n):
        us.append(sum(c * t for c, t in zip(coeff_u, bits)))
        vs.append(sum(c * t for c, t in zip(coeff_v, bits)))
    return min(us), max(us), min(vs), max(vs)


# --------------------------------------------------------------------------
# geometry


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _on_segment(p, a, b):
    return (_cross(a, b, p) == 0
            and min(a[0], b[0]) <= p[0] <= max(a[0], b[0])
            and min(a[1], b[1]) <= p[1] <= max(a[1], b[1]))


_TRIPLES = {}


def _triples(m):
    if m not in _TRIPLES:
        _TRIPLES[m] = np.array(list(itertools.combinations(range(m), 3)), dtype=np.int64).reshape(-1, 3)
    return _TRIPLES[m]


def extreme_points(points):
    """Hull vertices as the points outside the convex hull of all others.

    Carathéodory in the plane: p lies in conv(S - {p}) exactly when it lies in
    a triangle or on a segment of three or two other points. Exact for
    integer input (the triangle test runs in int64).
    """
    pts = sorted(set((int(x), int(y)) for x, y in points))
    if len(pts) <= 1:
        return set(pts)
    out = set()
    for i, p in enumerate(pts):
        others = pts[:i] + pts[i + 1:]
        if any(_on_segment(p, a, b) for a, b in itertools.combinations(others, 2)):
            continue
        o = np.array(others, dtype=np.int64)
        t = _triples(len(others))
        if len(t):
            a, b, c = o[t[:, 0]], o[t[:, 1]], o[t[:, 2]]
            px, py = p

            def cr(u, v):
                return (v[:, 0] - u[:, 0]) * (py - u[:, 1]) - (v[:, 1] - u[:, 1]) * (px - u[:, 0])

            area = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
            d1, d2, d3 = cr(a, b), cr(b, c), cr(c, a)
            neg = (d1 < 0) | (d2 < 0) | (d3 < 0)
            pos = (d1 > 0) | (d2 > 0) | (d3 > 0)
            if np.any((area != 0) & ~(neg & pos)):
                continue
        out.add(p)
    return out


def shoelace_area(poly):
    s = 0.0
    for (x0, y0), (x1, y1) in zip(poly, poly[1:] + poly[:1]):
        s += x0 * y1 - x1 * y0
    return s / 2.0


def point_in_convex(p, hull):
    """Closed containment in a counter-clockwise convex polygon."""
    if len(hull) == 1:
        return tuple(p) == tuple(hull[0])
    if len(hull) == 2:
        return _on_segment(p, hull[0], hull[1])
    return all(_cross(a, b, p) >= 0 for a, b in zip(hull, hull[1:] + hull[:1]))


# --------------------------------------------------------------------------
# bag of words


def scalar_tfidf(counts):
    """tf = n / row total, idf = ln(m / df) (0 when df = 0), product."""
    m = len(counts)
    k = len(counts[0])
    df = [sum(1 for row in counts if row[j] > 0) for j in range(k)]
    idf = [math.log(m / df[j]) if df[j] else 0.0 for j in range(k)]
    out = []
    for row in counts:
        total = sum(row)
        out.append([(row[j] / total if total else 0.0) * idf[j] for j in range(k)])
    return out, idf


def kmeans_objective(x, labels, k):
    total = 0.0
    for j in range(k):
        members = x[labels == j]
        if len(members):
            total += float(((members - members.mean(axis=0)) ** 2).sum())
    return total


def best_single_move(x, labels, k):
    """Largest objective decrease from moving one point, by full recomputation."""
    base = kmeans_objective(x, labels, k)
    best = 0.0
    for i in range(len(x)):
        if np.count_nonzero(labels == labels[i]) == 1:
            continue
        for j in range(k):
            if j == labels[i]:
                continue
            moved = labels.copy()
            moved[i] = j
            best = max(best, base - kmeans_objective(x, moved, k))
    return best


# --------------------------------------------------------------------------
# boosting


def scalar_nb(rows, ys, ws, floor=1e-9):
    """Weighted Gaussian naive Bayes; returns per-class (prior, means, vars)."""
    total = sum(ws)
    model = {}
    d = len(rows[0])
    for c in (-1, 1):
        idx = [i for i, y in enumerate(ys) if y == c]
        mass = sum(ws[i] for i in idx)
        means = [sum(ws[i] * rows[i][j] for i in idx) / mass for j in range(d)]
        var = [max(sum(ws[i] * (rows[i][j] - means[j]) ** 2 for i in idx) / mass, floor)
               for j in range(d)]
        model[c] = (mass / total, means, var)
    return model


def scalar_nb_decide(model, row):
    score = {}
    for c, (prior, means, var) in model.items():
        s = math.log(prior)
        for xj, mu, v in zip(row, means, var):
            s += -0.5 * math.log(2 * math.pi * v) - 0.5 * (xj - mu) ** 2 / v
        score[c] = s
    diff = score[1] - score[-1]
    return 1 if diff > 0 else (-1 if diff < 0 else 0)


def scalar_adaboost(rows, ys, rounds, clamp=1e-10):
    """Discrete AdaBoost trace: list of (error, alpha, learner) per kept round."""
    n = len(ys)
    w = [1.0 / n] * n
    trace = []
    for _ in range(rounds):
        model = scalar_nb(rows, ys, w)
        h = [scalar_nb_decide(model, r) for r in rows]
        # an abstention counts as a vote for legitimate (-1)
        wrong = [(1 if hi > 0 else -1) != y for hi, y in zip(h, ys)]
        eps = sum(wi for wi, bad in zip(w, wrong) if bad)
        if eps >= 0.5:
            break
        e = min(max(eps, clamp), 1 - clamp)
        alpha = 0.5 * math.log((1 - e) / e)
        trace.append((eps, alpha, model))
        if eps <= clamp:
            break
        w = [wi * math.exp(alpha) if bad else wi for wi, bad in zip(w, wrong)]
        s = sum(w)
        w = [wi / s for wi in w]
    return trace


def scalar_margin(trace, row):
    return sum(alpha * scalar_nb_decide(model, row) for _, alpha, model in trace)
