"""Finitely supported probability measures and the ways to build them.

A :class:`DiscreteMeasure` is a support matrix (atoms in R^d, one per row)
plus a weight vector on the simplex.  Everything else in the package
(targets, controls, projections, counterfactual mixtures) is one of these.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    AllRowsDroppedError,
    AllZeroImageError,
    BadWeightsError,
    DimensionMismatchError,
    EmptyInputError,
    MissingColumnError,
    NonFiniteError,
    ParseError,
)

logger = logging.getLogger(__name__)

SIMPLEX_TOL = 1e-9
TRANSFORMS = ("identity", "log")
MISSING_TOKENS = frozenset({"", "na", "nan", "null", "none", "."})


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Probability measure sum_i w_i delta_{x_i} on R^d.

    Atoms are kept as given: duplicates are legal and never merged.  All
    weights must be strictly positive, which keeps the disintegration of a
    transport plan well defined on every atom.
    """

    support: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.support, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise DimensionMismatchError(f"support must be n x d, got shape {x.shape}")
        if x.shape[0] == 0:
            raise EmptyInputError("a measure needs at least one atom")
        if x.shape[1] == 0:
            raise DimensionMismatchError("support dimension must be at least 1")
        if w.shape != (x.shape[0],):
            raise DimensionMismatchError(
                f"{x.shape[0]} atoms but weight vector of shape {w.shape}"
            )
        if not np.all(np.isfinite(x)):
            raise NonFiniteError("support contains NaN or Inf")
        if not np.all(np.isfinite(w)):
            raise NonFiniteError("weights contain NaN or Inf")
        if np.any(w <= 0):
            raise BadWeightsError("weights must be strictly positive")
        if abs(math.fsum(w) - 1.0) > SIMPLEX_TOL:
            raise BadWeightsError(f"weights sum to {math.fsum(w)!r}, not 1")
        object.__setattr__(self, "support", _frozen(x))
        object.__setattr__(self, "weights", _frozen(w))

    @property
    def n(self) -> int:
        return self.support.shape[0]

    @property
    def dim(self) -> int:
        return self.support.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.support

    def __len__(self) -> int:
        return self.n

    def __repr__(self) -> str:
        return f"DiscreteMeasure(n={self.n}, dim={self.dim})"

    def same_as(self, other: "DiscreteMeasure") -> bool:
        """Bitwise equality of support and weights (atom order matters)."""
        return (
            self.support.shape == other.support.shape
            and np.array_equal(self.support, other.support)
            and np.array_equal(self.weights, other.weights)
        )


@dataclass(frozen=True)
class UnitPanel:
    """Per-period outcome measures for one unit (state, firm, ...)."""

    unit_id: str
    periods: Mapping[object, DiscreteMeasure]
    variable_names: tuple[str, ...]
    variable_transforms: tuple[str, ...] = ()
    dropped_rows: Mapping[object, int] = field(default_factory=dict)

    def __post_init__(self):
        dims = {m.dim for m in self.periods.values()}
        if len(dims) > 1:
            raise DimensionMismatchError(
                f"unit {self.unit_id!r}: periods have differing dimensions {sorted(dims)}"
            )
        if dims and dims.pop() != len(self.variable_names):
            raise DimensionMismatchError(
                f"unit {self.unit_id!r}: {len(self.variable_names)} variable names "
                "do not match the data dimension"
            )
        if not self.variable_transforms:
            object.__setattr__(
                self, "variable_transforms", ("identity",) * len(self.variable_names)
            )


# -- constructors -------------------------------------------------------------


def from_samples(samples) -> DiscreteMeasure:
    """Empirical measure of the rows of ``samples`` (uniform weights 1/n)."""
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.size == 0 or x.shape[0] == 0:
        raise EmptyInputError("no samples")
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("samples contain NaN or Inf")
    n = x.shape[0]
    return DiscreteMeasure(x, np.full(n, 1.0 / n))


def from_weighted(support, weights) -> DiscreteMeasure:
    """Measure with the given atoms and nonnegative weights, normalized.

    Zero-weight atoms are dropped.
    """
    x = np.asarray(support, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    w = np.asarray(weights, dtype=float)
    if x.shape[0] == 0:
        raise EmptyInputError("no atoms")
    if w.shape != (x.shape[0],):
        raise DimensionMismatchError("support and weights disagree in length")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise BadWeightsError("weights must be finite and nonnegative")
    keep = w > 0
    if not keep.any():
        raise BadWeightsError("all weights are zero")
    w = w[keep]
    return DiscreteMeasure(x[keep], w / math.fsum(w))


@dataclass(frozen=True)
class CsvSchema:
    """Which columns of a CSV file form the outcome vector.

    ``transforms`` maps a column name to ``"identity"`` or ``"log"``;
    unlisted columns are left as is.
    """

    columns: tuple[str, ...]
    weight_column: str | None = None
    transforms: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        if not self.columns:
            raise ValueError("schema needs at least one column")
        for col, tag in self.transforms.items():
            if tag not in TRANSFORMS:
                raise ValueError(f"unknown transform {tag!r} for column {col!r}")
            if col not in self.columns:
                raise ValueError(f"transform given for undeclared column {col!r}")

    def transform_tags(self) -> tuple[str, ...]:
        return tuple(self.transforms.get(c, "identity") for c in self.columns)


@dataclass(frozen=True)
class IngestReport:
    rows_read: int
    dropped_missing: int
    dropped_nonpositive_log: int
    dropped_nonpositive_weight: int

    @property
    def rows_kept(self) -> int:
        return (
            self.rows_read
            - self.dropped_missing
            - self.dropped_nonpositive_log
            - self.dropped_nonpositive_weight
        )


def _parse_cell(raw: str, row: int, column: str) -> float:
    if raw.strip().lower() in MISSING_TOKENS:
        return math.nan
    try:
        value = float(raw)
    except ValueError:
        raise ParseError(f"column {column!r}: cannot parse {raw!r} as a number", row)
    if math.isinf(value):
        raise ParseError(f"column {column!r}: infinite value", row)
    return value


def read_csv_table(path, schema: CsvSchema):
    """Parse ``path`` under ``schema``.

    Returns ``(values, weights, report)`` where ``weights`` is ``None`` when
    the schema has no weight column.  Row numbers in errors count the header
    as row 1.
    """
    path = Path(path)
    wanted = list(schema.columns)
    if schema.weight_column is not None:
        wanted.append(schema.weight_column)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("file is empty; a header row is required", 1)
        missing = [c for c in wanted if c not in header]
        if missing:
            raise MissingColumnError(f"{path}: missing column(s) {missing}")
        idx = [header.index(c) for c in wanted]
        rows = []
        for rownum, rec in enumerate(reader, start=2):
            if not rec or all(not cell.strip() for cell in rec):
                continue
            if len(rec) != len(header):
                raise ParseError(
                    f"expected {len(header)} fields, found {len(rec)}", rownum
                )
            rows.append([_parse_cell(rec[i], rownum, c) for i, c in zip(idx, wanted)])

    table = np.array(rows, dtype=float).reshape(len(rows), len(wanted))
    n_read = table.shape[0]
    ok = ~np.isnan(table).any(axis=1)
    n_missing = int(n_read - ok.sum())

    values = table[:, : len(schema.columns)]
    log_cols = [k for k, tag in enumerate(schema.transform_tags()) if tag == "log"]
    bad_log = np.zeros(n_read, dtype=bool)
    if log_cols:
        with np.errstate(invalid="ignore"):
            bad_log = ok & (values[:, log_cols] <= 0).any(axis=1)
    ok &= ~bad_log

    weights = None
    bad_w = np.zeros(n_read, dtype=bool)
    if schema.weight_column is not None:
        weights = table[:, -1]
        with np.errstate(invalid="ignore"):
            bad_w = ok & (weights <= 0)
        ok &= ~bad_w

    report = IngestReport(n_read, n_missing, int(bad_log.sum()), int(bad_w.sum()))
    if report.dropped_nonpositive_log:
        logger.warning(
            "%s: dropped %d row(s) with nonpositive values in log columns",
            path, report.dropped_nonpositive_log,
        )
    if report.dropped_missing:
        logger.info("%s: dropped %d row(s) with missing values", path, n_missing)
    if not ok.any():
        raise AllRowsDroppedError(f"{path}: no usable rows ({report})")

    values = values[ok].copy()
    if log_cols:
        values[:, log_cols] = np.log(values[:, log_cols])
    if weights is not None:
        weights = weights[ok]
    return values, weights, report


def load_csv(path, schema: CsvSchema, *, return_report: bool = False):
    """Load a CSV file as a discrete measure.

    Rows with a missing value in any declared column are dropped (never
    imputed).  Log columns take the natural log; rows that are nonpositive
    there are dropped with a warning.  An optional weight column is
    normalized to sum to one; rows with nonpositive weight are dropped.
    """
    values, weights, report = read_csv_table(path, schema)
    if weights is None:
        m = from_samples(values)
    else:
        m = DiscreteMeasure(values, weights / math.fsum(weights))
    return (m, report) if return_report else m


def to_csv(m: DiscreteMeasure, path, names: Sequence[str] | None = None) -> None:
    """Write atoms and weights, one atom per row, weight in the last column."""
    names = list(names) if names is not None else [f"x{k}" for k in range(m.dim)]
    if len(names) != m.dim:
        raise DimensionMismatchError("need one column name per dimension")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([*names, "weight"])
        for row, wt in zip(m.support, m.weights):
            w.writerow([repr(float(v)) for v in row] + [repr(float(wt))])


# -- images -------------------------------------------------------------------


def image_to_measure(grid) -> DiscreteMeasure:
    """Pixels with positive intensity become atoms at their (row, col) index.

    Weights are intensities normalized to sum to one; zero pixels are omitted.
    Atoms are listed in row-major pixel order.
    """
    g = np.asarray(grid, dtype=float)
    if g.ndim != 2:
        raise DimensionMismatchError(f"expected a 2-D grayscale grid, got shape {g.shape}")
    if not np.all(np.isfinite(g)):
        raise NonFiniteError("image contains NaN or Inf")
    if np.any(g < 0):
        raise BadWeightsError("image intensities must be nonnegative")
    rows, cols = np.nonzero(g > 0)
    if rows.size == 0:
        raise AllZeroImageError("image has no positive pixel")
    mass = g[rows, cols]
    return DiscreteMeasure(
        np.column_stack([rows, cols]).astype(float), mass / math.fsum(mass)
    )


def read_image(path, *, invert: bool = False, downsample: int = 1) -> np.ndarray:
    """Read a PNG/PGM image as a grayscale grid of reals in [0, 1].

    8-bit images are divided by 255 and 16-bit images by 65535.  Colour
    images are converted to luminance; an alpha channel multiplies the
    intensity.  ``invert`` maps v to 1 - v (dark objects on a light
    background).  ``downsample`` averages non-overlapping k x k blocks.
    """
    from PIL import Image

    with Image.open(path) as im:
        alpha = None
        if im.mode in ("RGBA", "LA") or (im.mode == "P" and "transparency" in im.info):
            rgba = im.convert("RGBA")
            alpha = np.asarray(rgba.getchannel("A"), dtype=float) / 255.0
            grid = np.asarray(rgba.convert("L"), dtype=float) / 255.0
        elif im.mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im, dtype=float)
            grid = arr / (65535.0 if arr.max(initial=0) > 255 or im.mode != "I" else 255.0)
        elif im.mode == "L":
            grid = np.asarray(im, dtype=float) / 255.0
        else:
            grid = np.asarray(im.convert("L"), dtype=float) / 255.0
    if invert:
        grid = 1.0 - grid
    if alpha is not None:
        grid = grid * alpha
    k = int(downsample)
    if k > 1:
        h, w = (grid.shape[0] // k) * k, (grid.shape[1] // k) * k
        grid = grid[:h, :w].reshape(h // k, k, w // k, k).mean(axis=(1, 3))
    return np.clip(grid, 0.0, 1.0)


def load_image(path, *, invert: bool = False, downsample: int = 1) -> DiscreteMeasure:
    return image_to_measure(read_image(path, invert=invert, downsample=downsample))


def render_image(m: DiscreteMeasure, shape: tuple[int, int]) -> np.ndarray:
    """Re-bin a 2-D measure onto a pixel grid by nearest-pixel accumulation.

    Mass landing outside the grid is clipped to the border so the total is
    preserved.
    """
    if m.dim != 2:
        raise DimensionMismatchError("rendering needs a 2-D measure")
    h, w = shape
    r = np.clip(np.rint(m.support[:, 0]).astype(int), 0, h - 1)
    c = np.clip(np.rint(m.support[:, 1]).astype(int), 0, w - 1)
    out = np.zeros((h, w))
    np.add.at(out, (r, c), m.weights)
    return out


def write_image(grid, path) -> None:
    """Save a nonnegative grid as an 8-bit grayscale image scaled to its max."""
    from PIL import Image

    g = np.asarray(grid, dtype=float)
    top = g.max(initial=0.0)
    scaled = np.zeros_like(g) if top <= 0 else g / top
    Image.fromarray(np.rint(scaled * 255).astype(np.uint8), mode="L").save(path)


# -- combining measures -------------------------------------------------------


def check_simplex(weights, *, tol: float = SIMPLEX_TOL, what: str = "weights") -> np.ndarray:
    w = np.asarray(weights, dtype=float).ravel()
    if w.size == 0:
        raise BadWeightsError(f"{what} is empty")
    if not np.all(np.isfinite(w)):
        raise BadWeightsError(f"{what} contain NaN or Inf")
    if np.any(w < -tol):
        raise BadWeightsError(f"{what} has negative entries: {w}")
    if abs(math.fsum(w) - 1.0) > tol:
        raise BadWeightsError(f"{what} sum to {math.fsum(w)!r}, not 1")
    return w


def pool(parts: Sequence[DiscreteMeasure], mix_weights=None) -> DiscreteMeasure:
    """Mixture sum_j c_j P_j of measures sharing a dimension.

    The support is the concatenation of the parts' supports (in order);
    atoms of part j carry weight c_j times their own weight.  Parts with
    zero mixing weight contribute no atoms.  The default mixture is uniform.
    """
    parts = list(parts)
    if not parts:
        raise EmptyInputError("nothing to pool")
    dims = {p.dim for p in parts}
    if len(dims) != 1:
        raise DimensionMismatchError(f"parts have differing dimensions {sorted(dims)}")
    if mix_weights is None:
        c = np.full(len(parts), 1.0 / len(parts))
    else:
        try:
            c = check_simplex(mix_weights, what="mix weights")
        except BadWeightsError as exc:
            raise BadWeightsError(str(exc)) from None
        if c.size != len(parts):
            raise BadWeightsError(f"{c.size} mix weights for {len(parts)} parts")
    keep = [j for j in range(len(parts)) if c[j] > 0]
    if len(keep) == 1 and c[keep[0]] == 1.0:
        return parts[keep[0]]
    support = np.concatenate([parts[j].support for j in keep])
    weights = np.concatenate([c[j] * parts[j].weights for j in keep])
    if weights.size and abs(math.fsum(weights) - 1.0) > SIMPLEX_TOL:
        weights = weights / math.fsum(weights)
    return DiscreteMeasure(support, weights)


def second_moment(m: DiscreteMeasure) -> float:
    """sum_i w_i |x_i|^2."""
    return float(m.weights @ np.einsum("ij,ij->i", m.support, m.support))


def cdf_grid(m: DiscreteMeasure, var: int):
    """Marginal CDF of coordinate ``var``: sorted distinct values and F there.

    The last CDF value is exactly 1.
    """
    x = m.support[:, var]
    order = np.argsort(x, kind="stable")
    xs, ws = x[order], m.weights[order]
    vals, start = np.unique(xs, return_index=True)
    mass = np.add.reduceat(ws, start)
    F = np.cumsum(mass)
    F[-1] = 1.0
    return vals, np.minimum(F, 1.0)


def cdf_at(m: DiscreteMeasure, var: int, points) -> np.ndarray:
    """Right-continuous marginal CDF of coordinate ``var`` at ``points``."""
    vals, F = cdf_grid(m, var)
    k = np.searchsorted(vals, np.asarray(points, dtype=float), side="right")
    return np.where(k == 0, 0.0, F[np.maximum(k - 1, 0)])
