"""Held-out evaluation and spatial prediction grids."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..geo import GeoPoint, distance_to_center, to_local_xy
from .features import Profile, targets

logger = logging.getLogger(__name__)


def predict(model, rows) -> np.ndarray:
    """Predictions in EUR per square metre for a list of FeatureRows."""
    return np.asarray(model.predict(rows), dtype=np.float64)


def evaluate(model, rows) -> dict:
    """RMSE and (adjusted) R-squared on holdout rows.

    The adjustment uses the model's training effective degrees of freedom.
    Forests have no such count, so for them ``r2_adj`` is None and only the
    plain R-squared is reported.
    """
    if not rows:
        raise ValueError("no holdout rows")
    overlap = set(model.train_ids) & {r.id for r in rows}
    if overlap:
        logger.warning("%d holdout row(s) were used in training", len(overlap))
    y = targets(rows)
    pred = predict(model, rows)
    n = len(y)
    rss = float(np.sum((y - pred) ** 2))
    tss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - rss / tss if tss > 0 else float("nan")
    out = {"kind": model.kind, "n": n, "rmse": math.sqrt(rss / n), "r2": r2, "r2_adj": None,
           "train_overlap": len(overlap)}
    edf = getattr(model, "edf_total", None)
    if edf is not None and math.isfinite(edf) and n > edf and tss > 0:
        out["r2_adj"] = 1.0 - (rss / (n - edf)) / (tss / (n - 1))
    return out


@dataclass
class PredictionGrid:
    """Regular lat/lon grid tiling a bbox; one prediction per cell centre."""

    bbox: tuple[float, float, float, float]
    n_rows: int  # along latitude, south to north
    n_cols: int  # along longitude, west to east
    center: GeoPoint
    profile: Profile
    dist_center_m: np.ndarray = field(repr=False)  # (n_rows, n_cols)
    pred: np.ndarray = field(repr=False)  # (n_rows, n_cols)
    postal_codes: list | None = field(default=None, repr=False)

    @property
    def dlat(self) -> float:
        return (self.bbox[1] - self.bbox[0]) / self.n_rows

    @property
    def dlon(self) -> float:
        return (self.bbox[3] - self.bbox[2]) / self.n_cols

    def cell_center(self, i: int, j: int) -> tuple[float, float]:
        return self.bbox[0] + (i + 0.5) * self.dlat, self.bbox[2] + (j + 0.5) * self.dlon

    def cells(self):
        for i in range(self.n_rows):
            for j in range(self.n_cols):
                yield i, j

    def to_geojson(self) -> dict:
        feats = []
        for i, j in self.cells():
            s = self.bbox[0] + i * self.dlat
            n = s + self.dlat if i + 1 < self.n_rows else self.bbox[1]
            w = self.bbox[2] + j * self.dlon
            e = w + self.dlon if j + 1 < self.n_cols else self.bbox[3]
            lat, lon = self.cell_center(i, j)
            props = {
                "row": i,
                "col": j,
                "center_lat": lat,
                "center_lon": lon,
                "dist_center_m": float(self.dist_center_m[i, j]),
                "pred_eur_sqm": float(self.pred[i, j]),
            }
            if self.postal_codes is not None:
                props["postal_code"] = self.postal_codes[i][j]
            feats.append({
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [[[w, s], [e, s], [e, n], [w, n], [w, s]]]},
                "properties": props,
            })
        return {
            "type": "FeatureCollection",
            "properties": {
                "bbox": list(self.bbox),
                "shape": [self.n_rows, self.n_cols],
                "profile": {
                    "size_sqm": self.profile.size_sqm,
                    "year_built": self.profile.year_built,
                    "rooms": self.profile.rooms,
                    "amenities": sorted(self.profile.amenities),
                },
            },
            "features": feats,
        }

    def geojson_text(self) -> str:
        return json.dumps(self.to_geojson(), sort_keys=True, separators=(",", ":")) + "\n"

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", "col", "lat", "lon", "dist_center_m", "pred_eur_sqm"])
        for i, j in self.cells():
            lat, lon = self.cell_center(i, j)
            w.writerow([i, j, repr(lat), repr(lon), repr(float(self.dist_center_m[i, j])),
                        repr(float(self.pred[i, j]))])
        return buf.getvalue()

    def write(self, geojson_path: str | Path | None = None, csv_path: str | Path | None = None) -> None:
        if geojson_path:
            Path(geojson_path).write_text(self.geojson_text(), encoding="utf-8")
        if csv_path:
            Path(csv_path).write_text(self.csv_text(), encoding="utf-8")


def grid_shape(bbox, cell_m: float, center: GeoPoint) -> tuple[int, int]:
    """Rows and columns needed so that no cell is larger than ``cell_m`` on a side."""
    lat_min, lat_max, lon_min, lon_max = bbox
    x0, y0 = to_local_xy(lat_min, lon_min, center)
    x1, y1 = to_local_xy(lat_max, lon_max, center)
    # to_local_xy returns (east, north)
    return max(1, math.ceil(abs(y1 - y0) / cell_m)), max(1, math.ceil(abs(x1 - x0) / cell_m))


def nearest_postal(centroids: dict[str, GeoPoint]) -> Callable[[float, float], str]:
    codes = sorted(centroids)
    pts = [centroids[c] for c in codes]

    def lookup(lat: float, lon: float) -> str:
        p = GeoPoint(lat, lon)
        d = [distance_to_center(p, q) for q in pts]
        return codes[int(np.argmin(d))]

    return lookup


def prediction_grid(model, bbox, center: GeoPoint, profile: Profile = Profile(), cell_m: float | None = None,
                    shape: tuple[int, int] | None = None,
                    postal_of: Callable[[float, float], str] | None = None) -> PredictionGrid:
    """Predict the fixed ``profile`` at every cell centre of a grid over ``bbox``.

    Give either ``cell_m`` (target cell size in metres) or an explicit
    ``shape`` (rows, cols). Only the location-derived features vary between
    cells: the distance to ``center`` and, when ``postal_of`` is given, the
    postal code.
    """
    lat_min, lat_max, lon_min, lon_max = bbox
    if not (lat_min < lat_max and lon_min < lon_max):
        raise ValueError(f"bbox not well ordered: {bbox}")
    if (cell_m is None) == (shape is None):
        raise ValueError("give exactly one of cell_m or shape")
    if shape is None:
        if not cell_m > 0:
            raise ValueError("cell_m must be positive")
        shape = grid_shape(bbox, cell_m, center)
    n_rows, n_cols = shape
    g = PredictionGrid(tuple(bbox), n_rows, n_cols, center, profile,
                       np.zeros((n_rows, n_cols)), np.zeros((n_rows, n_cols)))
    rows = []
    codes = [[None] * n_cols for _ in range(n_rows)] if postal_of else None
    for i, j in g.cells():
        lat, lon = g.cell_center(i, j)
        d = distance_to_center(GeoPoint(lat, lon), center)
        g.dist_center_m[i, j] = d
        plz = postal_of(lat, lon) if postal_of else None
        if codes is not None:
            codes[i][j] = plz
        rows.append(profile.row(d, plz, id=f"cell_{i}_{j}"))
    g.pred = predict(model, rows).reshape(n_rows, n_cols)
    g.postal_codes = codes
    if not np.all(np.isfinite(g.pred)):
        raise ValueError("non-finite prediction in grid")
    return g
