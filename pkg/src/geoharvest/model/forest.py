"""Random forest regression (bootstrap CART ensembles with feature subsetting).

The tree builder runs in the compiled ``_forest_core`` extension when it is
available and falls back to the pure numpy ``_forest_py`` otherwise. Set
``GEOHARVEST_PURE=1`` to force the fallback. Both backends grow identical
trees for the same seed.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _forest_py
from .features import FeatureSchema, targets

logger = logging.getLogger(__name__)

if os.environ.get("GEOHARVEST_PURE"):
    _core = None
else:
    try:
        from . import _forest_core as _core
    except ImportError:  # extension not built
        _core = None

BACKEND = "cython" if _core is not None else "python"


def get_backend(name: str | None = None):
    name = name or BACKEND
    if name == "cython":
        if _core is None:
            raise RuntimeError("compiled forest backend is not available")
        return _core
    if name == "python":
        return _forest_py
    raise ValueError(f"unknown forest backend {name!r}")


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 500
    mtry: int | None = None  # default ceil(p / 3)
    min_node: int = 5

    def to_dict(self) -> dict:
        return {"n_trees": self.n_trees, "mtry": self.mtry, "min_node": self.min_node}


class ForestModel:
    kind = "random_forest"

    def __init__(self, params: ForestParams, schema: FeatureSchema | None = None):
        self.params = params
        self.schema = schema
        self.trees: list[tuple[np.ndarray, ...]] = []
        self.mtry: int = 0
        self.seed: int = 0
        self.oob_rmse = float("nan")
        self.train_metrics: dict[str, float] = {}
        self.train_ids: list[str] = []
        self.backend = BACKEND

    def _matrix(self, rows_or_X) -> np.ndarray:
        if isinstance(rows_or_X, np.ndarray):
            return rows_or_X
        if self.schema is None:
            raise ValueError("model has no feature schema; pass a matrix")
        return self.schema.matrix(rows_or_X)

    def predict(self, rows_or_X, backend: str | None = None) -> np.ndarray:
        return get_backend(backend or self.backend).predict_forest(self._matrix(rows_or_X), self.trees)

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "n_trees": len(self.trees),
            "mtry": self.mtry,
            "min_node": self.params.min_node,
            "oob_rmse": self.oob_rmse,
            "seed": self.seed,
            **self.train_metrics,
        }


def _max_nodes(n: int, min_node: int) -> int:
    return 2 * max(1, n // min_node) + 1


def fit_random_forest(rows, params: ForestParams = ForestParams(), seed: int = 0, schema: FeatureSchema | None = None,
                      X=None, y=None, ids=None, backend: str | None = None, n_jobs: int = 1) -> ForestModel:
    """Fit a forest on FeatureRows (encoded with ``schema``) or on an explicit matrix ``X``.

    Every tree draws its bootstrap sample and per-node feature subsets from
    its own generator, spawned from ``seed``; results do not depend on
    ``n_jobs``.
    """
    if X is None:
        if not rows:
            raise ValueError("no training rows")
        schema = schema or FeatureSchema.extended_for(rows)
        X = schema.matrix(rows)
        y = targets(rows)
        ids = [r.id for r in rows]
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    n, p = X.shape
    if n == 0:
        raise ValueError("no training rows")
    if not np.all(np.isfinite(y)):
        raise ValueError("target contains non-finite values")
    if np.all(y == y[0]):
        logger.warning("constant target: forest degenerates to predicting %r", float(y[0]))
    mtry = params.mtry or max(1, math.ceil(p / 3))
    mtry = min(mtry, p)
    kernel = get_backend(backend)
    max_nodes = _max_nodes(n, params.min_node)
    children = np.random.SeedSequence(seed).spawn(params.n_trees)

    def grow(child):
        rng = np.random.default_rng(child)
        sample = rng.integers(0, n, size=n)
        keys = rng.random((max_nodes, p))
        return sample, kernel.build_tree(X, y, sample, keys, mtry, params.min_node)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            grown = list(ex.map(grow, children))
    else:
        grown = [grow(c) for c in children]

    model = ForestModel(params, schema)
    model.backend = backend or BACKEND
    model.trees = [t for _, t in grown]
    model.mtry = mtry
    model.seed = seed
    model.train_ids = list(ids) if ids is not None else []

    # out-of-bag error, accumulated in tree order
    oob_sum = np.zeros(n)
    oob_cnt = np.zeros(n)
    for sample, tree in grown:
        inbag = np.zeros(n, dtype=bool)
        inbag[sample] = True
        oob = ~inbag
        if oob.any():
            oob_sum[oob] += kernel.predict_tree(X[oob], *tree)
            oob_cnt[oob] += 1
    has = oob_cnt > 0
    if has.any():
        model.oob_rmse = float(np.sqrt(np.mean((oob_sum[has] / oob_cnt[has] - y[has]) ** 2)))
    fitted = model.predict(X)
    model.train_metrics = {
        "rmse": float(np.sqrt(np.mean((fitted - y) ** 2))),
        "oob_rmse": model.oob_rmse,
        "n_train": n,
    }
    return model


def to_arrays(model: ForestModel) -> tuple[dict, dict[str, np.ndarray]]:
    sizes = np.array([len(t[0]) for t in model.trees], dtype=np.int64)
    arrays = {
        "sizes": sizes,
        "feature": np.concatenate([t[0] for t in model.trees]),
        "threshold": np.concatenate([t[1] for t in model.trees]),
        "left": np.concatenate([t[2] for t in model.trees]),
        "right": np.concatenate([t[3] for t in model.trees]),
        "value": np.concatenate([t[4] for t in model.trees]),
    }
    meta = {
        "params": model.params.to_dict(),
        "schema": model.schema.to_dict() if model.schema else None,
        "mtry": model.mtry,
        "seed": model.seed,
        "oob_rmse": model.oob_rmse,
        "train_metrics": model.train_metrics,
        "train_ids": model.train_ids,
    }
    return meta, arrays


def from_arrays(meta: dict, arrays: dict[str, np.ndarray]) -> ForestModel:
    params = ForestParams(**meta["params"])
    schema = FeatureSchema.from_dict(meta["schema"]) if meta["schema"] else None
    m = ForestModel(params, schema)
    bounds = np.concatenate([[0], np.cumsum(arrays["sizes"])])
    m.trees = [
        tuple(arrays[k][bounds[i]:bounds[i + 1]].copy() for k in ("feature", "threshold", "left", "right", "value"))
        for i in range(len(arrays["sizes"]))
    ]
    m.mtry = meta["mtry"]
    m.seed = meta["seed"]
    m.oob_rmse = meta["oob_rmse"]
    m.train_metrics = meta["train_metrics"]
    m.train_ids = meta["train_ids"]
    return m
