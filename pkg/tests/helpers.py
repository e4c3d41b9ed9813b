"""Fixture generators shared by the test modules."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from wproj.measures import DiscreteMeasure, from_samples, write_image
from wproj.tangent import TangentField


def random_measure(rng, n, d, *, uniform=True, loc=0.0, scale=1.0) -> DiscreteMeasure:
    x = loc + scale * rng.standard_normal((n, d))
    if uniform:
        return from_samples(x)
    w = rng.uniform(0.1, 1.0, n)
    return DiscreteMeasure(x, w / w.sum())


def random_fields(rng, p0: DiscreteMeasure, J: int, scale=1.0) -> list[TangentField]:
    return [
        TangentField.from_map(p0, p0.support + scale * rng.standard_normal(p0.support.shape))
        for _ in range(J)
    ]


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if not isinstance(v, str) else v for v in r])
    return path


# -- images -------------------------------------------------------------------


def disc(shape, center, radius, value=1.0) -> np.ndarray:
    rr, cc = np.mgrid[: shape[0], : shape[1]]
    g = np.zeros(shape)
    g[(rr - center[0]) ** 2 + (cc - center[1]) ** 2 <= radius**2] = value
    return g


def image_fixture(directory) -> dict:
    """Target disc, five lookalikes (integer shifts and a wider disc), five decoys.

    Shifts by +-1 pixel along each axis are exact translations of the target,
    so the target is reproduced exactly by the lookalikes and the decoys,
    whose mass sits in the corners, are never needed.
    """
    d = Path(directory)
    shape, c, r = (32, 32), (16, 16), 6
    images = {"target": disc(shape, c, r)}
    for k, (dr, dc) in enumerate([(1, 0), (-1, 0), (0, 1), (0, -1)]):
        images[f"look{k}"] = disc(shape, (c[0] + dr, c[1] + dc), r)
    images["look4"] = disc(shape, c, r + 1)
    corners = [(3, 3), (3, 28), (28, 3), (28, 28)]
    for k, cc in enumerate(corners):
        images[f"decoy{k}"] = disc(shape, cc, 2)
    bar = np.zeros(shape)
    bar[0:2, :] = 1.0
    images["decoy4"] = bar
    paths = {}
    for name, g in images.items():
        p = d / f"{name}.png"
        write_image(g, p)
        paths[name] = p
    return paths


# -- panels -------------------------------------------------------------------


def mixture_panel(directory, n=2000, seed=0, pre=("2001", "2002"), post=("2003",)):
    """Two controls; the treated unit's rows are half of each control's rows.

    Returns the panel config dict for ``PanelConfig``.
    """
    rng = np.random.default_rng(seed)
    d = Path(directory)
    header = ["y", "z"]
    for t in (*pre, *post):
        c1 = np.column_stack([rng.normal(0.0, 1.0, n), rng.gamma(2.0, 1.0, n)])
        c2 = np.column_stack([rng.normal(2.0, 0.7, n), rng.gamma(4.0, 1.0, n)])
        treated = np.concatenate([c1[: n // 2], c2[n // 2:]])
        # fresh control rows so treated and controls are not literally the same sample
        c1b = np.column_stack([rng.normal(0.0, 1.0, n), rng.gamma(2.0, 1.0, n)])
        c2b = np.column_stack([rng.normal(2.0, 0.7, n), rng.gamma(4.0, 1.0, n)])
        write_csv(d / f"T_{t}.csv", header, treated)
        write_csv(d / f"C1_{t}.csv", header, np.concatenate([c1[: n // 2], c1b[: n - n // 2]]))
        write_csv(d / f"C2_{t}.csv", header, np.concatenate([c2[n // 2:], c2b[: n // 2]]))
    return {
        "treated": "T",
        "controls": ["C1", "C2"],
        "pre_periods": list(pre),
        "post_periods": list(post),
        "variables": header,
        "data_dir": str(d),
        "seed": seed,
    }


MEDICAID_VARS = ["HINSCAID", "EMPSTAT", "UHRSWORK", "INCWAGE"]


def _medicaid_rows(rng, n, p_caid, p_emp, hours, wage):
    caid = (rng.uniform(size=n) < p_caid).astype(float)
    emp = np.where(rng.uniform(size=n) < p_emp, 1.0, 2.0)
    hrs = np.clip(rng.normal(hours, 8.0, n), 1.0, 99.0).round()
    inc = np.exp(rng.normal(wage, 0.8, n)).round()
    inc[inc < 1] = 1
    return np.column_stack([caid, emp, hrs, inc])


def medicaid_panel(directory, n=1500, seed=0, pre=("2010", "2011", "2012"), post=("2014", "2015")):
    """Twelve controls with the ACS-style schema: five informative, seven noise.

    The treated unit mixes the five informative profiles with log wages
    lowered by 0.3, so it sits just outside their hull.  Each noise control
    exaggerates one informative profile's spread threefold or fourfold and
    adds a full log point of wage, which puts it on the far side of the
    informative ones and never useful for closing the gap.
    """
    rng = np.random.default_rng(seed)
    d = Path(directory)
    informative = [
        (0.10, 0.80, 40, 10.4), (0.14, 0.76, 38, 10.2), (0.12, 0.82, 42, 10.6),
        (0.16, 0.78, 39, 10.3), (0.11, 0.79, 41, 10.5),
    ]
    center = np.mean(informative, axis=0)
    noise = [
        tuple(center + f * (np.array(informative[k]) - center) + [0, 0, 0, 1.0])
        for k, f in [(0, 3), (1, 3), (2, 3), (3, 3), (4, 3), (0, 4), (1, 4)]
    ]
    treated = [p[:3] + (p[3] - 0.3,) for p in informative]
    profiles = {f"S{k:02d}": p for k, p in enumerate(informative + noise)}
    for t in (*pre, *post):
        for unit, prof in profiles.items():
            write_csv(d / f"{unit}_{t}.csv", MEDICAID_VARS, _medicaid_rows(rng, n, *prof))
        which = rng.integers(0, len(informative), n)
        rows = np.concatenate([_medicaid_rows(rng, int((which == k).sum()), *treated[k]) for k in range(5)])
        write_csv(d / f"MT_{t}.csv", MEDICAID_VARS, rows)
    return {
        "treated": "MT",
        "controls": list(profiles),
        "pre_periods": list(pre),
        "post_periods": list(post),
        "variables": MEDICAID_VARS,
        "transforms": {"UHRSWORK": "log", "INCWAGE": "log"},
        "fit_sample_size": n,
        "data_dir": str(d),
        "seed": seed,
    }
