"""Overlap and boundary metrics plus the per-case evaluation report."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List

import numpy as np
from scipy.ndimage import distance_transform_edt

from .errors import DimensionError

DEFAULT_NSD_TOL = 2.0


def _pair(pred, gt):
    a, b = np.asarray(pred).astype(bool), np.asarray(gt).astype(bool)
    if a.shape != b.shape:
        raise DimensionError(f"pred {a.shape} and gt {b.shape} differ")
    return a, b


def dsc(pred, gt) -> float:
    a, b = _pair(pred, gt)
    total = a.sum() + b.sum()
    if total == 0:
        return 1.0
    return float(2.0 * (a & b).sum() / total)


def boundary(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels with at least one 4-neighbour outside the mask (image border is outside)."""
    m = np.asarray(mask).astype(bool)
    p = np.pad(m, 1)
    interior = p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    return m & ~interior


def nsd(pred, gt, tol_px: float = DEFAULT_NSD_TOL) -> float:
    """Normalized surface Dice of two 2-D masks at a pixel tolerance."""
    if tol_px <= 0:
        raise ValueError("tol_px must be positive")
    a, b = _pair(pred, gt)
    ea, eb = a.any(), b.any()
    if not ea and not eb:
        return 1.0
    if ea != eb:
        return 0.0
    ba, bb = boundary(a), boundary(b)
    # distance from every pixel to the nearest boundary pixel of the other mask
    dist_to_b = distance_transform_edt(~bb)
    dist_to_a = distance_transform_edt(~ba)
    hits = (dist_to_b[ba] <= tol_px).sum() + (dist_to_a[bb] <= tol_px).sum()
    return float(hits / (ba.sum() + bb.sum()))


@dataclass
class CaseScore:
    case_id: str
    dsc: float
    nsd: float
    seconds: float


@dataclass
class EvalReport:
    rows: List[CaseScore] = field(default_factory=list)

    def add(self, case_id, dsc_value, nsd_value, seconds):
        self.rows.append(CaseScore(str(case_id), float(dsc_value), float(nsd_value), float(seconds)))

    def _mean(self, attr):
        return float(np.mean([getattr(r, attr) for r in self.rows])) if self.rows else float("nan")

    @property
    def mean_dsc(self):
        return self._mean("dsc")

    @property
    def mean_nsd(self):
        return self._mean("nsd")

    @property
    def mean_seconds(self):
        return self._mean("seconds")

    def summary(self):
        return {"cases": len(self.rows), "mean_dsc": self.mean_dsc, "mean_nsd": self.mean_nsd,
                "mean_seconds": self.mean_seconds}

    def write_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["case_id", "dsc", "nsd", "seconds"])
            for r in self.rows:
                w.writerow([r.case_id, f"{r.dsc:.6f}", f"{r.nsd:.6f}", f"{r.seconds:.4f}"])

    def write_json(self, path):
        Path(path).write_text(json.dumps(self.summary(), indent=2) + "\n")
