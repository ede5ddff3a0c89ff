"""Independent reference implementations used as test oracles.

Each oracle recomputes a library result by the most direct route available
(brute force, dense linear algebra, textbook recursion), sharing no code
with the implementation it checks.
"""

from __future__ import annotations

import math

import numpy as np

# -- robots.txt --------------------------------------------------------------


def wildcard_match(pattern: str, path: str) -> bool:
    """Prefix match with '*' (any run) and a trailing '$' (end anchor), by dynamic programming."""
    anchored = pattern.endswith("$")
    pat = pattern[:-1] if anchored else pattern
    m, n = len(pat), len(path)
    # ok[i][j]: pat[:i] matches path[:j] exactly
    ok = [[False] * (n + 1) for _ in range(m + 1)]
    ok[0][0] = True
    for i in range(1, m + 1):
        c = pat[i - 1]
        for j in range(n + 1):
            if c == "*":
                ok[i][j] = ok[i - 1][j] or (j > 0 and ok[i][j - 1])
            else:
                ok[i][j] = j > 0 and ok[i - 1][j - 1] and path[j - 1] == c
    if anchored:
        return ok[m][n]
    return any(ok[m][j] for j in range(n + 1))


def robots_oracle(groups, path: str, agent: str) -> bool:
    """Brute-force longest match.

    ``groups`` is a list of (agents, rules) with rules as (kind, pattern).
    The most specific named agent group(s) win, else the '*' groups. Every
    rule in the selected groups is scored by pattern length; the highest
    score decides and allow wins a tie.
    """
    token = agent.strip().split("/", 1)[0].split()[0].lower()
    named = [(a.lower(), gi) for gi, (agents, _) in enumerate(groups) for a in agents if a != "*"]
    fitting = [(a, gi) for a, gi in named if token.startswith(a)]
    if fitting:
        longest = max(len(a) for a, _ in fitting)
        selected = sorted({gi for a, gi in fitting if len(a) == longest})
    else:
        selected = [gi for gi, (agents, _) in enumerate(groups) if "*" in agents]
    scores = [(len(pat), kind) for gi in selected for kind, pat in groups[gi][1] if wildcard_match(pat, path)]
    if not scores:
        return True
    best = max(s for s, _ in scores)
    return any(kind == "allow" for s, kind in scores if s == best)


def render_robots_text(groups, delays=None) -> str:
    lines = []
    for gi, (agents, rules) in enumerate(groups):
        lines += [f"User-agent: {a}" for a in agents]
        if delays and delays[gi] is not None:
            lines.append(f"Crawl-delay: {delays[gi]}")
        lines += [f"{kind.capitalize()}: {pat}" for kind, pat in rules]
        if not rules:
            # an empty Disallow closes the group; without it the agent lines merge with the next group
            lines.append("Disallow:")
        lines.append("")
    return "\n".join(lines)


def random_robots_case(rng):
    """A random (groups, path, agent) triple over a small alphabet, so rules collide often."""
    segs = ["a", "b", "ab", "x", "p", "private", "q?x=1", ".html"]
    agent_pool = ["*", "geoharvest", "geo", "otherbot", "geoharvest-extra"]

    def pattern():
        parts = ["/" + rng.choice(segs) for _ in range(rng.integers(0, 3))]
        p = "".join(parts) or "/"
        if rng.random() < 0.25:
            i = int(rng.integers(1, len(p) + 1))
            p = p[:i] + "*" + p[i:]
        if rng.random() < 0.15:
            p += "$"
        return p

    groups = []
    for _ in range(int(rng.integers(1, 4))):
        agents = sorted(set(rng.choice(agent_pool, size=int(rng.integers(1, 3))).tolist()))
        rules = [(str(rng.choice(["allow", "disallow"])), pattern()) for _ in range(int(rng.integers(0, 6)))]
        groups.append((agents, rules))
    path = "".join("/" + rng.choice(segs) for _ in range(rng.integers(0, 4))) or "/"
    agent = str(rng.choice(["geoharvest/0.1 (research)", "GeoHarvest", "otherbot/2", "curl/8", "geo"]))
    return groups, path, agent


# -- splines and penalized least squares -------------------------------------


def cox_de_boor(x: float, knots, i: int, degree: int) -> float:
    """Value of the i-th B-spline of ``degree`` at x (right-closed on the last interval)."""
    t = knots
    if degree == 0:
        if t[i] <= x < t[i + 1]:
            return 1.0
        # close the final non-degenerate interval on the right
        if x == t[-1] and t[i] < t[i + 1] == t[-1]:
            return 1.0
        return 0.0
    out = 0.0
    d1 = t[i + degree] - t[i]
    if d1 > 0:
        out += (x - t[i]) / d1 * cox_de_boor(x, t, i, degree - 1)
    d2 = t[i + degree + 1] - t[i + 1]
    if d2 > 0:
        out += (t[i + degree + 1] - x) / d2 * cox_de_boor(x, t, i + 1, degree - 1)
    return out


def bspline_design_oracle(x, knots, degree: int = 3) -> np.ndarray:
    k = len(knots) - degree - 1
    return np.array([[cox_de_boor(float(v), list(knots), i, degree) for i in range(k)] for v in x])


def dense_penalized_solution(X: np.ndarray, y: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Closed form (X'X + P)^-1 X'y with an explicit dense inverse."""
    return np.linalg.inv(X.T @ X + P) @ (X.T @ y)


def dense_gcv(X: np.ndarray, y: np.ndarray, P: np.ndarray) -> float:
    """n * RSS / (n - tr H)^2 with the hat matrix H formed explicitly."""
    n = len(y)
    H = X @ np.linalg.inv(X.T @ X + P) @ X.T
    r = y - H @ y
    return n * float(r @ r) / (n - float(np.trace(H))) ** 2


# -- misc ----------------------------------------------------------------------


def binomial_interval_99(n: int, p: float) -> tuple[float, float]:
    """Normal-approximation 99% interval for a binomial count."""
    sd = math.sqrt(n * p * (1 - p))
    return n * p - 2.576 * sd, n * p + 2.576 * sd


def validate_geojson_grid(doc: dict, bbox) -> list[str]:
    """Structural GeoJSON checks for a polygon-cell FeatureCollection; returns a list of problems."""
    problems = []
    if doc.get("type") != "FeatureCollection":
        problems.append("top-level type is not FeatureCollection")
    feats = doc.get("features")
    if not isinstance(feats, list) or not feats:
        return problems + ["no features"]
    lat_min, lat_max, lon_min, lon_max = bbox
    eps = 1e-9
    for i, f in enumerate(feats):
        if f.get("type") != "Feature":
            problems.append(f"feature {i}: type")
        g = f.get("geometry") or {}
        if g.get("type") != "Polygon":
            problems.append(f"feature {i}: geometry is not a Polygon")
            continue
        rings = g.get("coordinates")
        if not rings or len(rings[0]) < 4 or rings[0][0] != rings[0][-1]:
            problems.append(f"feature {i}: ring not closed")
            continue
        for lon, lat in rings[0]:
            if not (lon_min - eps <= lon <= lon_max + eps and lat_min - eps <= lat <= lat_max + eps):
                problems.append(f"feature {i}: vertex outside bbox")
                break
        v = (f.get("properties") or {}).get("pred_eur_sqm")
        if not isinstance(v, float) or not math.isfinite(v):
            problems.append(f"feature {i}: pred_eur_sqm not a finite number")
    return problems
