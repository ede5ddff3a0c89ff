"""Additive models with penalized cubic B-spline smooths (P-splines).

Each smooth is a cubic B-spline basis on equally spaced knots with a
difference penalty on adjacent coefficients. Smooths carry a sum-to-zero
constraint so the intercept stays identifiable. Smoothing parameters are
picked by GCV, one grid search per penalty, cycling until nothing moves.

With ``shrinkage=True`` every smooth gets a second penalty on the null
space of its difference penalty (the part a difference penalty cannot
shrink, i.e. the linear trend). With both penalties large a term can be
removed entirely, so its effective degrees of freedom go to ~0.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.interpolate import BSpline

from .features import column, targets

logger = logging.getLogger(__name__)

DEGREE = 3


class GamError(ValueError):
    pass


def default_lambda_grid(n: int = 40, lo: float = 1e-4, hi: float = 1e6) -> tuple[float, ...]:
    return tuple(float(v) for v in np.logspace(math.log10(lo), math.log10(hi), n))


@dataclass(frozen=True)
class SmoothTerm:
    feature: str
    k: int = 10
    order: int = 2


@dataclass(frozen=True)
class GamSpec:
    smooths: tuple[SmoothTerm, ...]
    linear: tuple[str, ...] = ()
    shrinkage: bool = False
    lambda_grid: tuple[float, ...] = field(default_factory=default_lambda_grid)
    link: str = "identity"
    family: str = "gaussian"
    max_sweeps: int = 8

    def __post_init__(self):
        if not self.smooths and not self.linear:
            raise GamError("a GAM needs at least one term")
        names = [s.feature for s in self.smooths] + list(self.linear)
        if len(set(names)) != len(names):
            raise GamError("each feature may appear in one term only")
        for s in self.smooths:
            if s.k < 4:
                raise GamError(f"smooth {s.feature}: basis size k must be >= 4 (got {s.k})")
            if not 1 <= s.order <= s.k - 2:
                raise GamError(f"smooth {s.feature}: penalty order must be in [1, k-2]")
        if not self.lambda_grid or any(not (v > 0) for v in self.lambda_grid):
            raise GamError("lambda grid must be non-empty and positive")
        if self.link != "identity" or self.family != "gaussian":
            raise GamError("only the gaussian family with identity link is supported")

    def to_dict(self) -> dict:
        return {
            "smooths": [{"feature": s.feature, "k": s.k, "order": s.order} for s in self.smooths],
            "linear": list(self.linear),
            "shrinkage": self.shrinkage,
            "lambda_grid": list(self.lambda_grid),
            "link": self.link,
            "family": self.family,
            "max_sweeps": self.max_sweeps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> GamSpec:
        kw = {}
        if "lambda_grid" in d:
            kw["lambda_grid"] = tuple(float(v) for v in d["lambda_grid"])
        elif "lambda_range" in d:
            lo, hi, n = d["lambda_range"]
            kw["lambda_grid"] = default_lambda_grid(int(n), lo, hi)
        return cls(
            smooths=tuple(SmoothTerm(s["feature"], int(s.get("k", 10)), int(s.get("order", 2))) for s in d["smooths"]),
            linear=tuple(d.get("linear", ())),
            shrinkage=bool(d.get("shrinkage", False)),
            link=d.get("link", "identity"),
            family=d.get("family", "gaussian"),
            max_sweeps=int(d.get("max_sweeps", 8)),
            **kw,
        )


def simple_spec(k: int = 10) -> GamSpec:
    return GamSpec(tuple(SmoothTerm(f, k) for f in ("dist_center_m", "size_sqm", "year_built", "nfeatures")))


def shrinkage_spec(k: int = 10, amenities=("balcony", "parking", "basement", "kitchen", "senior_friendly",
                                           "renovated", "elevator", "garden")) -> GamSpec:
    return GamSpec(
        tuple(SmoothTerm(f, k) for f in ("dist_center_m", "size_sqm", "year_built")),
        linear=tuple(f"amen_{a}" for a in amenities),
        shrinkage=True,
    )


# -- bases -------------------------------------------------------------------


def bspline_knots(xl: float, xr: float, k: int) -> np.ndarray:
    nseg = k - DEGREE
    dx = (xr - xl) / nseg
    return xl + dx * np.arange(-DEGREE, nseg + DEGREE + 1, dtype=np.float64)


def bspline_basis(x: np.ndarray, knots: np.ndarray) -> np.ndarray:
    lo, hi = knots[DEGREE], knots[-DEGREE - 1]
    xc = np.clip(np.asarray(x, dtype=np.float64), lo, hi)
    return BSpline.design_matrix(xc, knots, DEGREE).toarray()


def difference_penalty(k: int, order: int) -> np.ndarray:
    D = np.diff(np.eye(k), n=order, axis=0)
    return D.T @ D


@dataclass
class SmoothBasis:
    feature: str
    k: int
    order: int
    knots: np.ndarray
    Z: np.ndarray  # k x (k-1) sum-to-zero reparametrization
    S: np.ndarray  # scaled wiggliness penalty in the constrained space
    S0: np.ndarray | None  # scaled null-space penalty (shrinkage only)

    @classmethod
    def build(cls, term: SmoothTerm, x: np.ndarray, shrinkage: bool) -> SmoothBasis:
        if not np.all(np.isfinite(x)):
            raise GamError(f"smooth {term.feature}: non-finite feature values")
        xl, xr = float(np.min(x)), float(np.max(x))
        if not xr > xl:
            raise GamError(f"smooth {term.feature}: feature is constant, design is singular")
        knots = bspline_knots(xl, xr, term.k)
        B = bspline_basis(x, knots)
        C = B.sum(axis=0)[:, None]
        Q, _ = np.linalg.qr(C, mode="complete")
        Z = Q[:, 1:]
        X = B @ Z
        S = Z.T @ difference_penalty(term.k, term.order) @ Z
        S = 0.5 * (S + S.T)
        xtx_norm = np.linalg.norm(X.T @ X)
        scale = xtx_norm / np.linalg.norm(S)
        S0 = None
        if shrinkage:
            w, U = np.linalg.eigh(S)
            null_dim = term.order - 1
            if null_dim > 0:
                U0 = U[:, :null_dim]
                S0 = U0 @ U0.T
                S0 = xtx_norm / np.linalg.norm(S0) * 0.5 * (S0 + S0.T)
        return cls(term.feature, term.k, term.order, knots, Z, S * scale, S0)

    def design(self, x: np.ndarray) -> np.ndarray:
        return bspline_basis(x, self.knots) @ self.Z

    @property
    def width(self) -> int:
        return self.k - 1


@dataclass
class LinearTerm:
    feature: str
    mean: float
    sd: float

    @classmethod
    def build(cls, feature: str, x: np.ndarray) -> LinearTerm:
        if not np.all(np.isfinite(x)):
            raise GamError(f"linear term {feature}: non-finite feature values")
        sd = float(np.std(x))
        if sd == 0:
            raise GamError(f"linear term {feature}: feature is constant, design is singular")
        return cls(feature, float(np.mean(x)), sd)

    def design(self, x: np.ndarray) -> np.ndarray:
        return ((np.asarray(x, dtype=np.float64) - self.mean) / self.sd)[:, None]


# -- fitting -----------------------------------------------------------------


def _as_data(rows_or_data, names) -> dict[str, np.ndarray]:
    if isinstance(rows_or_data, dict):
        return {n: np.asarray(rows_or_data[n], dtype=np.float64) for n in names}
    return {n: column(rows_or_data, n) for n in names}


@dataclass
class PenalizedFit:
    coef: np.ndarray
    edf_total: float
    edf_diag: np.ndarray
    rss: float
    gcv: float


class GamModel:
    """A fitted additive model. Build with :func:`fit_gam`."""

    kind = "gam"

    def __init__(self, spec: GamSpec, smooths: list[SmoothBasis], linear: list[LinearTerm]):
        self.spec = spec
        self.smooths = smooths
        self.linear = linear
        self.kind = "gam_shrinkage" if spec.shrinkage else "gam"
        self.coef: np.ndarray | None = None
        self.lambdas: np.ndarray | None = None
        self.edf: dict[str, float] = {}
        self.edf_total = float("nan")
        self.gcv = float("nan")
        self.train_metrics: dict[str, float] = {}
        self.train_ids: list[str] = []

    # layout
    def slices(self) -> list[tuple[str, slice]]:
        out = []
        j = 1
        for s in self.smooths:
            out.append((s.feature, slice(j, j + s.width)))
            j += s.width
        for t in self.linear:
            out.append((t.feature, slice(j, j + 1)))
            j += 1
        return out

    @property
    def n_coef(self) -> int:
        return 1 + sum(s.width for s in self.smooths) + len(self.linear)

    @property
    def features(self) -> list[str]:
        return [s.feature for s in self.smooths] + [t.feature for t in self.linear]

    def design(self, rows_or_data) -> np.ndarray:
        data = _as_data(rows_or_data, self.features)
        n = len(next(iter(data.values())))
        blocks = [np.ones((n, 1))]
        blocks += [s.design(data[s.feature]) for s in self.smooths]
        blocks += [t.design(data[t.feature]) for t in self.linear]
        return np.hstack(blocks)

    def penalty_parts(self) -> list[tuple[str, slice, np.ndarray]]:
        """One (term, column slice, matrix) entry per smoothing parameter."""
        parts = []
        sl = dict(self.slices())
        for s in self.smooths:
            parts.append((s.feature, sl[s.feature], s.S))
            if s.S0 is not None:
                parts.append((s.feature + ":null", sl[s.feature], s.S0))
        return parts

    def penalty(self, lambdas=None) -> np.ndarray:
        lambdas = self.lambdas if lambdas is None else np.asarray(lambdas, dtype=np.float64)
        P = np.zeros((self.n_coef, self.n_coef))
        for lam, (_, sl, S) in zip(lambdas, self.penalty_parts()):
            P[sl, sl] += lam * S
        return P

    def predict(self, rows_or_data) -> np.ndarray:
        return self.design(rows_or_data) @ self.coef

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "edf": dict(self.edf),
            "edf_total": self.edf_total,
            "lambdas": {name: float(l) for (name, _, _), l in zip(self.penalty_parts(), self.lambdas)},
            "gcv": self.gcv,
            **self.train_metrics,
        }


def _solve(XtX, Xty, X, y, P) -> PenalizedFit:
    A = XtX + P
    c = linalg.cho_factor(A, lower=True, check_finite=False)
    coef = linalg.cho_solve(c, Xty, check_finite=False)
    F = linalg.cho_solve(c, XtX, check_finite=False)
    edf_diag = np.diag(F).copy()
    tau = float(edf_diag.sum())
    resid = y - X @ coef
    rss = float(resid @ resid)
    n = len(y)
    gcv = n * rss / (n - tau) ** 2 if n - tau > 0 else math.inf
    return PenalizedFit(coef, tau, edf_diag, rss, gcv)


def fit_gam(rows, spec: GamSpec, seed: int = 0, lambdas=None, y=None, ids=None) -> GamModel:
    """Fit an additive model by penalized least squares.

    ``rows`` is a list of FeatureRow or a dict of feature arrays (then ``y``
    is required). With ``lambdas`` given the smoothing parameters are fixed;
    otherwise each is chosen from ``spec.lambda_grid`` by GCV. ``seed`` is
    accepted for interface symmetry; the fit is deterministic.
    """
    names = [s.feature for s in spec.smooths] + list(spec.linear)
    data = _as_data(rows, names)
    if y is None:
        if isinstance(rows, dict):
            raise GamError("y is required when fitting from arrays")
        y = targets(rows)
        ids = [r.id for r in rows]
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(y)):
        raise GamError("target contains non-finite values")
    n = len(y)
    smooths = [SmoothBasis.build(t, data[t.feature], spec.shrinkage) for t in spec.smooths]
    linear = [LinearTerm.build(f, data[f]) for f in spec.linear]
    model = GamModel(spec, smooths, linear)
    X = model.design(data)
    if n <= X.shape[1]:
        logger.warning("GAM with %d coefficients fitted on only %d rows", X.shape[1], n)
    XtX = X.T @ X
    Xty = X.T @ y
    parts = model.penalty_parts()
    grid = np.asarray(spec.lambda_grid, dtype=np.float64)

    def attempt(lams):
        try:
            return _solve(XtX, Xty, X, y, model.penalty(lams))
        except linalg.LinAlgError:
            return None

    if lambdas is not None:
        lams = np.asarray(lambdas, dtype=np.float64)
        if lams.shape != (len(parts),):
            raise GamError(f"expected {len(parts)} smoothing parameter(s), got {lams.shape}")
        fit = attempt(lams)
    else:
        idx = np.full(len(parts), int(np.argmin(np.abs(np.log(grid)))))
        fit = attempt(grid[idx])
        best = fit.gcv if fit else math.inf
        for _ in range(spec.max_sweeps):
            moved = False
            for i in range(len(parts)):
                for g in range(len(grid)):
                    if g == idx[i]:
                        continue
                    trial = idx.copy()
                    trial[i] = g
                    f = attempt(grid[trial])
                    if f is not None and f.gcv < best:
                        best, fit, idx, moved = f.gcv, f, trial, True
            if not moved:
                break
        lams = grid[idx]
    if fit is None:
        raise GamError(f"penalized design is singular; offending term: {_offending_term(model, XtX, lams)}")

    model.coef = fit.coef
    model.lambdas = lams
    model.edf = {name: float(fit.edf_diag[sl].sum()) for name, sl in model.slices()}
    model.edf_total = fit.edf_total
    model.gcv = fit.gcv
    tss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - fit.rss / tss if tss > 0 else float("nan")
    r2_adj = 1.0 - (fit.rss / (n - fit.edf_total)) / (tss / (n - 1)) if tss > 0 and n > fit.edf_total else float("nan")
    model.train_metrics = {"rmse": math.sqrt(fit.rss / n), "r2": r2, "r2_adj": r2_adj, "n_train": n}
    model.train_ids = list(ids) if ids is not None else []
    return model


def _offending_term(model: GamModel, XtX, lams) -> str:
    P = model.penalty(lams)
    worst, worst_cond = "intercept", 0.0
    for name, sl in model.slices():
        block = XtX[sl, sl] + P[sl, sl]
        cond = np.linalg.cond(block)
        if not np.isfinite(cond) or cond > worst_cond:
            worst, worst_cond = name, (cond if np.isfinite(cond) else math.inf)
    return worst


def objective(model: GamModel, X: np.ndarray, y: np.ndarray, coef: np.ndarray) -> float:
    r = y - X @ coef
    return float(r @ r + coef @ model.penalty() @ coef)


def to_arrays(model: GamModel) -> tuple[dict, dict[str, np.ndarray]]:
    meta = {
        "spec": model.spec.to_dict(),
        "smooths": [{"feature": s.feature, "k": s.k, "order": s.order} for s in model.smooths],
        "linear": [{"feature": t.feature, "mean": t.mean, "sd": t.sd} for t in model.linear],
        "edf": model.edf,
        "edf_total": model.edf_total,
        "gcv": model.gcv,
        "train_metrics": model.train_metrics,
        "train_ids": model.train_ids,
    }
    arrays = {"coef": model.coef, "lambdas": model.lambdas}
    for i, s in enumerate(model.smooths):
        arrays[f"s{i}_knots"] = s.knots
        arrays[f"s{i}_Z"] = s.Z
        arrays[f"s{i}_S"] = s.S
        if s.S0 is not None:
            arrays[f"s{i}_S0"] = s.S0
    return meta, arrays


def from_arrays(meta: dict, arrays: dict[str, np.ndarray]) -> GamModel:
    spec = GamSpec.from_dict(meta["spec"])
    smooths = []
    for i, s in enumerate(meta["smooths"]):
        smooths.append(SmoothBasis(s["feature"], s["k"], s["order"], arrays[f"s{i}_knots"], arrays[f"s{i}_Z"],
                                   arrays[f"s{i}_S"], arrays.get(f"s{i}_S0")))
    linear = [LinearTerm(t["feature"], t["mean"], t["sd"]) for t in meta["linear"]]
    m = GamModel(spec, smooths, linear)
    m.coef = arrays["coef"]
    m.lambdas = arrays["lambdas"]
    m.edf = meta["edf"]
    m.edf_total = meta["edf_total"]
    m.gcv = meta["gcv"]
    m.train_metrics = meta["train_metrics"]
    m.train_ids = meta["train_ids"]
    return m
