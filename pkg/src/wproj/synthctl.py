"""Distributional synthetic controls.

Weights are fitted once on the pre-treatment periods: each unit's
pre-period samples are pooled into a single measure and the treated unit's
pooled measure is projected onto the controls'.  Counterfactuals for any
period are then mixtures of the controls' period measures,
``F_cf(v) = sum_j lam_j F_j(v)``; this is a mixture of distributions, not a
transport pushforward.
"""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import ot as _ot
from .errors import ConfigError, InsufficientSamplesError, MissingPeriodDataError
from .measures import (
    CsvSchema,
    DiscreteMeasure,
    UnitPanel,
    cdf_at,
    check_simplex,
    load_csv,
    pool,
    to_csv,
)
from .projection import ProjectOptions, ProjectionResult, project
from .simulate import make_rng

logger = logging.getLogger(__name__)

JITTER_WIDTH = 1e-6


@dataclass
class PanelConfig:
    """Where the panel lives and how to fit it.

    Files are found through ``files[unit][period]`` when given, otherwise
    through ``file_pattern`` (formatted with ``unit`` and ``period``)
    relative to ``data_dir``.
    """

    treated: str
    controls: Sequence[str]
    pre_periods: Sequence[str]
    post_periods: Sequence[str]
    variables: Sequence[str]
    seed: int
    transforms: Mapping[str, str] = field(default_factory=dict)
    weight_column: str | None = None
    fit_sample_size: int | None = None
    data_dir: str = "."
    file_pattern: str = "{unit}_{period}.csv"
    files: Mapping[str, Mapping[str, str]] | None = None
    time_mode: str = "pooled"
    jitter: bool = False
    threads: int = 1

    def __post_init__(self):
        self.controls = [str(c) for c in self.controls]
        self.pre_periods = [str(p) for p in self.pre_periods]
        self.post_periods = [str(p) for p in self.post_periods]
        self.variables = list(self.variables)
        self.treated = str(self.treated)
        if not self.controls:
            raise ConfigError("at least one control unit is required")
        if self.treated in self.controls:
            raise ConfigError(f"treated unit {self.treated!r} is also listed as a control")
        if len(set(self.controls)) != len(self.controls):
            raise ConfigError("control units must be distinct")
        if not self.pre_periods:
            raise ConfigError("at least one pre-period is required")
        overlap = set(self.pre_periods) & set(self.post_periods)
        if overlap:
            raise ConfigError(f"periods {sorted(overlap)} are both pre and post")
        if not self.variables:
            raise ConfigError("at least one outcome variable is required")
        if self.seed is None or int(self.seed) < 0:
            raise ConfigError("a nonnegative seed is required")
        if self.time_mode not in ("pooled", "stacked"):
            raise ConfigError(f"time_mode must be 'pooled' or 'stacked', got {self.time_mode!r}")
        if self.fit_sample_size is not None and self.fit_sample_size < 1:
            raise ConfigError("fit_sample_size must be positive")

    @property
    def units(self) -> list[str]:
        return [self.treated, *self.controls]

    @property
    def periods(self) -> list[str]:
        return [*self.pre_periods, *self.post_periods]

    def schema(self) -> CsvSchema:
        return CsvSchema(tuple(self.variables), self.weight_column, dict(self.transforms))

    def path(self, unit: str, period: str) -> Path:
        if self.files is not None:
            try:
                return Path(self.data_dir) / self.files[unit][period]
            except KeyError:
                raise MissingPeriodDataError(unit, period) from None
        return Path(self.data_dir) / self.file_pattern.format(unit=unit, period=period)


def load_unit(config: PanelConfig, unit: str, periods: Sequence[str] | None = None) -> UnitPanel:
    """Read every available period file for ``unit``; absent files are skipped."""
    schema = config.schema()
    measures, dropped = {}, {}
    for t in config.periods if periods is None else periods:
        try:
            p = config.path(unit, t)
        except MissingPeriodDataError:
            continue
        if not p.exists():
            continue
        m, report = load_csv(p, schema, return_report=True)
        measures[t] = m
        dropped[t] = report.rows_read - report.rows_kept
    return UnitPanel(unit, measures, tuple(config.variables), schema.transform_tags(), dropped)


def load_panel(config: PanelConfig) -> dict[str, UnitPanel]:
    units = config.units
    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as ex:
            panels = list(ex.map(lambda u: load_unit(config, u), units))
    else:
        panels = [load_unit(config, u) for u in units]
    return dict(zip(units, panels))


def require_complete(config: PanelConfig, panels: Mapping[str, UnitPanel]) -> None:
    """Raise :class:`MissingPeriodDataError` for the first absent (unit, period)."""
    for u in config.units:
        for t in config.periods:
            if t not in panels[u].periods:
                raise MissingPeriodDataError(u, t)


def _period(panel: UnitPanel, t: str) -> DiscreteMeasure:
    try:
        return panel.periods[t]
    except KeyError:
        raise MissingPeriodDataError(panel.unit_id, t) from None


def pooled_measure(
    config: PanelConfig, panel: UnitPanel, rng: np.random.Generator | None = None
) -> DiscreteMeasure:
    """All pre-period rows of one unit as a single measure.

    Periods are mixed in proportion to their row counts, so unweighted data
    gives uniform weight per pooled row.  In ``stacked`` mode the period's
    position in the pre-period list is appended as an extra coordinate.
    """
    parts = [_period(panel, t) for t in config.pre_periods]
    if config.time_mode == "stacked":
        parts = [
            DiscreteMeasure(np.column_stack([m.support, np.full(m.n, float(k))]), m.weights)
            for k, m in enumerate(parts)
        ]
    sizes = np.array([m.n for m in parts], dtype=float)
    m = pool(parts, sizes / sizes.sum())
    if config.fit_sample_size is not None and m.n > config.fit_sample_size:
        idx = np.sort(rng.choice(m.n, size=config.fit_sample_size, replace=False))
        w = m.weights[idx]
        m = DiscreteMeasure(m.support[idx], w / math.fsum(w))
    if config.jitter:
        m = DiscreteMeasure(
            m.support + rng.uniform(-JITTER_WIDTH / 2, JITTER_WIDTH / 2, size=m.support.shape),
            m.weights,
        )
    if m.n < m.dim + 1:
        raise InsufficientSamplesError(
            f"unit {panel.unit_id!r} has {m.n} pooled samples, needs at least {m.dim + 1}"
        )
    return m


def fit(
    config: PanelConfig,
    panels: Mapping[str, UnitPanel] | None = None,
    options: ProjectOptions | None = None,
) -> ProjectionResult:
    """Synthetic-control weights from the pooled pre-period measures."""
    panels = load_panel(config) if panels is None else panels
    pooled = []
    for k, u in enumerate(config.units):
        # one substream per unit position keeps subsamples stable under edits elsewhere
        pooled.append(pooled_measure(config, panels[u], make_rng(config.seed, 2, k)))
    return project(pooled[0], pooled[1:], options)


@dataclass(eq=False)
class CounterfactualEntry:
    period: str
    counterfactual: DiscreteMeasure
    actual: DiscreteMeasure | None
    mean_diff: dict
    cdf: dict = field(repr=False)
    ks: dict = field(default_factory=dict)
    w2: float | None = None


@dataclass(eq=False)
class CounterfactualSet:
    lam: np.ndarray
    variables: list[str]
    entries: dict = field(default_factory=dict)

    def __getitem__(self, period) -> CounterfactualEntry:
        return self.entries[str(period)]

    def __iter__(self):
        return iter(self.entries.values())


def merged_cdfs(actual: DiscreteMeasure, cf: DiscreteMeasure, var: int):
    """Both marginal CDFs of coordinate ``var`` on the union of their atoms."""
    grid = np.union1d(actual.support[:, var], cf.support[:, var])
    return grid, cdf_at(actual, var, grid), cdf_at(cf, var, grid)


def counterfactual(
    config: PanelConfig,
    panels: Mapping[str, UnitPanel],
    lam,
    period: str,
    *,
    w2_budget: int = 0,
) -> CounterfactualEntry:
    """Mixture ``sum_j lam_j P_{t,j}`` of the controls' measures at ``period``.

    The treated unit's actual measure is compared when present.  W2 between
    the two is computed only if the cost matrix fits ``w2_budget`` entries.
    """
    period = str(period)
    lam = check_simplex(lam, tol=1e-8, what="lambda")
    if lam.size != len(config.controls):
        raise ValueError(f"{lam.size} weights for {len(config.controls)} controls")
    parts = [_period(panels[u], period) for u in config.controls]
    cf = pool(parts, lam / lam.sum())
    actual = panels[config.treated].periods.get(period)
    mean_diff, cdf, ks, w2 = {}, {}, {}, None
    if actual is not None:
        diff = actual.mean() - cf.mean()
        for k, v in enumerate(config.variables):
            mean_diff[v] = float(diff[k])
            grid, fa, fc = merged_cdfs(actual, cf, k)
            cdf[v] = (grid, fa, fc)
            ks[v] = float(np.abs(fa - fc).max())
        if w2_budget and actual.n * cf.n <= w2_budget:
            w2 = _ot.wasserstein2(actual, cf, size_budget=w2_budget)
    else:
        for k, v in enumerate(config.variables):
            grid = np.unique(cf.support[:, k])
            cdf[v] = (grid, None, cdf_at(cf, k, grid))
    return CounterfactualEntry(period, cf, actual, mean_diff, cdf, ks, w2)


def counterfactuals(
    config: PanelConfig,
    panels: Mapping[str, UnitPanel],
    lam,
    periods: Sequence[str] | None = None,
    *,
    w2_budget: int = 0,
) -> CounterfactualSet:
    periods = config.post_periods if periods is None else [str(p) for p in periods]
    out = CounterfactualSet(np.asarray(lam, dtype=float), list(config.variables))
    for t in periods:
        out.entries[t] = counterfactual(config, panels, lam, t, w2_budget=w2_budget)
    return out


@dataclass
class PretrendPeriod:
    period: str
    mean_gap: dict
    std_mean_gap: dict
    ks: dict
    w2: float | None
    flagged: bool


def pretrend_check(
    config: PanelConfig,
    panels: Mapping[str, UnitPanel],
    lam,
    *,
    w2_budget: int = 0,
    flag_sd: float = 0.25,
    flag_ks: float = 0.1,
) -> list[PretrendPeriod]:
    """Counterfactual vs actual treated measure in every pre-period.

    A period is flagged when some variable's mean gap exceeds ``flag_sd``
    treated standard deviations or its KS distance exceeds ``flag_ks``.
    """
    report = []
    for t in config.pre_periods:
        actual = _period(panels[config.treated], t)
        e = counterfactual(config, panels, lam, t, w2_budget=w2_budget)
        sd = np.sqrt(actual.weights @ (actual.support - actual.mean()) ** 2)
        std_gap = {
            v: (float(e.mean_diff[v] / sd[k]) if sd[k] > 0 else (0.0 if e.mean_diff[v] == 0 else math.inf))
            for k, v in enumerate(config.variables)
        }
        flagged = any(abs(g) > flag_sd for g in std_gap.values()) or any(
            s > flag_ks for s in e.ks.values()
        )
        report.append(PretrendPeriod(t, e.mean_diff, std_gap, e.ks, e.w2, flagged))
    return report


# -- output files -------------------------------------------------------------


def _safe(label: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in str(label))


def write_counterfactuals(outdir, cfs: CounterfactualSet) -> list[Path]:
    """counterfactual_<t>.csv (atoms and weight) and cdf_<var>_<t>.csv per period."""
    outdir = Path(outdir)
    written = []
    for e in cfs:
        p = outdir / f"counterfactual_{_safe(e.period)}.csv"
        to_csv(e.counterfactual, p, cfs.variables)
        written.append(p)
        for v, (grid, fa, fc) in e.cdf.items():
            q = outdir / f"cdf_{_safe(v)}_{_safe(e.period)}.csv"
            with open(q, "w", newline="") as fh:
                fh.write("value,F_actual,F_counterfactual\n")
                for i, x in enumerate(grid):
                    a = "" if fa is None else repr(float(fa[i]))
                    fh.write(f"{float(x)!r},{a},{float(fc[i])!r}\n")
            written.append(q)
    return written


def pretrend_to_dict(report: Sequence[PretrendPeriod]) -> dict:
    return {
        "periods": [
            {
                "period": r.period,
                "mean_gap": r.mean_gap,
                "standardized_mean_gap": {k: (None if not math.isfinite(g) else g) for k, g in r.std_mean_gap.items()},
                "ks": r.ks,
                "w2": r.w2,
                "flagged": r.flagged,
            }
            for r in report
        ],
        "any_flagged": any(r.flagged for r in report),
    }


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
        fh.flush()
        os.fsync(fh.fileno())
