"""Feature rows for the hedonic models and their matrix encodings."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..extractor import AMENITY_VOCABULARY
from ..geo import GeoPoint, distance_to_center

logger = logging.getLogger(__name__)

# amenities counted into ``nfeatures``
DEFAULT_VOCAB = ("balcony", "parking", "basement", "kitchen", "senior_friendly", "elevator")

SIMPLE_COLUMNS = ("dist_center_m", "size_sqm", "year_built", "nfeatures")


@dataclass(frozen=True)
class FeatureRow:
    id: str
    target: float  # net rent per square metre
    dist_center_m: float
    size_sqm: float
    year_built: float
    nfeatures: int
    rooms: float | None = None
    postal_code: str | None = None
    amenities: frozenset[str] = frozenset()

    def __post_init__(self):
        if not (math.isfinite(self.target) and self.target > 0):
            raise ValueError(f"{self.id}: target must be positive and finite, got {self.target}")


@dataclass(frozen=True)
class Profile:
    """Everything but location; used for prediction maps."""

    size_sqm: float = 55.0
    year_built: float = 2000.0
    rooms: float = 2.0
    amenities: frozenset[str] = frozenset({"balcony", "parking", "basement"})
    vocab: tuple[str, ...] = DEFAULT_VOCAB

    def row(self, dist_center_m: float, postal_code: str | None = None, id: str = "profile") -> FeatureRow:
        return FeatureRow(
            id=id,
            target=1.0,
            dist_center_m=dist_center_m,
            size_sqm=self.size_sqm,
            year_built=self.year_built,
            nfeatures=len(self.amenities & set(self.vocab)),
            rooms=self.rooms,
            postal_code=postal_code,
            amenities=self.amenities,
        )


def build_features(corpus, center: GeoPoint, vocab=DEFAULT_VOCAB) -> tuple[list[FeatureRow], int]:
    """Turn retained records into feature rows; returns (rows, n_dropped)."""
    rows: list[FeatureRow] = []
    dropped = 0
    vocab = set(vocab)
    for r in corpus:
        dist = r.dist_center_m
        if dist is None and r.coords is not None:
            dist = distance_to_center(r.coords, center)
        if r.rent_net_eur is None or r.size_sqm is None or r.year_built is None or dist is None:
            dropped += 1
            continue
        rows.append(
            FeatureRow(
                id=r.id,
                target=r.rent_net_eur.value / r.size_sqm.value,
                dist_center_m=float(dist),
                size_sqm=r.size_sqm.value,
                year_built=float(r.year_built),
                nfeatures=len(r.amenities & vocab),
                rooms=r.rooms.value if r.rooms else None,
                postal_code=r.postal_code,
                amenities=frozenset(r.amenities),
            )
        )
    if dropped:
        logger.info("build_features: dropped %d record(s) with missing core features", dropped)
    return rows, dropped


@dataclass
class FeatureSchema:
    """Column layout of a design matrix; saved with every fitted model."""

    kind: str = "simple"  # simple | extended
    amenities: tuple[str, ...] = AMENITY_VOCABULARY
    plz_levels: tuple[str, ...] = ()
    columns: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if not self.columns:
            cols = list(SIMPLE_COLUMNS)
            if self.kind == "extended":
                cols.append("rooms")
                cols += [f"amen_{a}" for a in self.amenities]
                cols += [f"plz_{p}" for p in self.plz_levels]
            elif self.kind != "simple":
                raise ValueError(f"unknown schema kind {self.kind!r}")
            self.columns = tuple(cols)

    @classmethod
    def extended_for(cls, rows, amenities=AMENITY_VOCABULARY) -> FeatureSchema:
        levels = sorted({r.postal_code for r in rows if r.postal_code})
        return cls("extended", tuple(amenities), tuple(levels))

    def matrix(self, rows) -> np.ndarray:
        X = np.empty((len(rows), len(self.columns)), dtype=np.float64)
        for i, r in enumerate(rows):
            X[i, :4] = (r.dist_center_m, r.size_sqm, r.year_built, r.nfeatures)
            if self.kind == "extended":
                # missing rooms become -1: trees split it off, no NaN handling needed
                X[i, 4] = r.rooms if r.rooms is not None else -1.0
                j = 5
                for a in self.amenities:
                    X[i, j] = 1.0 if a in r.amenities else 0.0
                    j += 1
                for p in self.plz_levels:
                    X[i, j] = 1.0 if r.postal_code == p else 0.0
                    j += 1
        return X

    def to_dict(self) -> dict:
        return {"kind": self.kind, "amenities": list(self.amenities), "plz_levels": list(self.plz_levels),
                "columns": list(self.columns)}

    @classmethod
    def from_dict(cls, d: dict) -> FeatureSchema:
        return cls(d["kind"], tuple(d["amenities"]), tuple(d["plz_levels"]), tuple(d["columns"]))


def targets(rows) -> np.ndarray:
    return np.array([r.target for r in rows], dtype=np.float64)


def column(rows, name: str) -> np.ndarray:
    """Single named feature as float array; amenity booleans as ``amen_<tag>``."""
    if name.startswith("amen_"):
        tag = name[5:]
        return np.array([1.0 if tag in r.amenities else 0.0 for r in rows])
    if name == "rooms":
        return np.array([r.rooms if r.rooms is not None else np.nan for r in rows], dtype=np.float64)
    return np.array([getattr(r, name) for r in rows], dtype=np.float64)


FEATURE_CSV_COLUMNS = ("id", "rent_per_sqm", "dist_center_m", "size_sqm", "year_built", "nfeatures", "rooms",
                       "postal_code", "amenities")


def _f(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_features_csv(rows, path_or_buf) -> None:
    own = isinstance(path_or_buf, (str, Path))
    fh = open(path_or_buf, "w", newline="", encoding="utf-8") if own else path_or_buf
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FEATURE_CSV_COLUMNS)
        for r in rows:
            w.writerow([r.id, _f(r.target), _f(r.dist_center_m), _f(r.size_sqm), _f(r.year_built), r.nfeatures,
                        _f(r.rooms), _f(r.postal_code), ";".join(sorted(r.amenities))])
    finally:
        if own:
            fh.close()


def features_to_csv(rows) -> str:
    buf = io.StringIO()
    write_features_csv(rows, buf)
    return buf.getvalue()


def read_features_csv(path: str | Path) -> list[FeatureRow]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.DictReader(fh)
        missing = set(FEATURE_CSV_COLUMNS) - set(rd.fieldnames or ())
        if missing:
            raise ValueError(f"feature CSV lacks column(s): {', '.join(sorted(missing))}")
        for d in rd:
            rows.append(
                FeatureRow(
                    id=d["id"],
                    target=float(d["rent_per_sqm"]),
                    dist_center_m=float(d["dist_center_m"]),
                    size_sqm=float(d["size_sqm"]),
                    year_built=float(d["year_built"]),
                    nfeatures=int(d["nfeatures"]),
                    rooms=float(d["rooms"]) if d["rooms"] else None,
                    postal_code=d["postal_code"] or None,
                    amenities=frozenset(a for a in d["amenities"].split(";") if a),
                )
            )
    return rows


def train_test_split(rows, train_n: int, seed: int) -> tuple[list[FeatureRow], list[FeatureRow]]:
    if train_n >= len(rows):
        raise ValueError(f"train_n={train_n} leaves no holdout rows (have {len(rows)})")
    rng = np.random.default_rng(seed)
    idx = rng.permutation(len(rows))
    train_idx = np.sort(idx[:train_n])
    test_idx = np.sort(idx[train_n:])
    return [rows[i] for i in train_idx], [rows[i] for i in test_idx]
