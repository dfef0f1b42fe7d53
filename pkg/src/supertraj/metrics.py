"""Supervoxel benchmark measures: undersegmentation error, segmentation accuracy, boundary recall."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .io import DimensionError


def _check(pred, gt):
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    if gt.size == 0:
        raise ValueError("empty volume")
    return pred, gt


def _overlaps(pred, gt):
    """Intersection sizes for every co-occurring (pred, gt) pair plus segment sizes."""
    p = np.unique(pred.ravel(), return_inverse=True)[1].ravel()
    g_vals, g = np.unique(gt.ravel(), return_inverse=True)
    g = g.ravel()
    n_p = int(p.max()) + 1
    pair, counts = np.unique(g.astype(np.int64) * n_p + p, return_counts=True)
    gi, pi = pair // n_p, pair % n_p
    p_size = np.bincount(p, minlength=n_p)
    g_size = np.bincount(g, minlength=len(g_vals))
    return gi, pi, counts, p_size, g_size


def ue_terms(pred, gt):
    """Per ground-truth segment: (sum of touching pred sizes minus |g|, |g|) as integers."""
    pred, gt = _check(pred, gt)
    gi, pi, _, p_size, g_size = _overlaps(pred, gt)
    num = np.zeros(len(g_size), dtype=np.int64)
    np.add.at(num, gi, p_size[pi])
    return num - g_size, g_size


def sa_terms(pred, gt):
    """Per ground-truth segment: (overlap of pred segments at least half inside g, |g|)."""
    pred, gt = _check(pred, gt)
    gi, pi, inter, p_size, g_size = _overlaps(pred, gt)
    ok = 2 * inter >= p_size[pi]
    num = np.zeros(len(g_size), dtype=np.int64)
    np.add.at(num, gi[ok], inter[ok])
    return num, g_size


def _mean_ratio(num, den):
    return math.fsum((num / den).tolist()) / len(den)


def boundary_mask(vol):
    """Cells with a face neighbor (4 in 2D, 6 in 3D) of a different label."""
    vol = np.asarray(vol)
    out = np.zeros(vol.shape, dtype=bool)
    for ax in range(vol.ndim):
        a = [slice(None)] * vol.ndim
        b = [slice(None)] * vol.ndim
        a[ax] = slice(None, -1)
        b[ax] = slice(1, None)
        diff = vol[tuple(a)] != vol[tuple(b)]
        out[tuple(a)] |= diff
        out[tuple(b)] |= diff
    return out


def boundary_recall(pred, gt, tol=1):
    pred, gt = _check(pred, gt)
    if tol < 0:
        raise ValueError("tol must be >= 0")
    gb = boundary_mask(gt)
    n = int(gb.sum())
    if n == 0:
        return 1.0
    pb = boundary_mask(pred)
    if tol > 0:
        pb = ndimage.maximum_filter(pb, size=2 * tol + 1, mode="constant", cval=False)
    return int((gb & pb).sum()) / n


def ue3d(pred, gt):
    num, den = ue_terms(pred, gt)
    return _mean_ratio(num, den)


def sa3d(pred, gt):
    num, den = sa_terms(pred, gt)
    return _mean_ratio(num, den)


def br3d(pred, gt, tol=1):
    return boundary_recall(pred, gt, tol)


def _per_frame(fn, pred, gt, *args):
    pred, gt = _check(pred, gt)
    if pred.ndim != 3:
        raise DimensionError("expected an (F, H, W) volume")
    return math.fsum(fn(p, g, *args) for p, g in zip(pred, gt)) / pred.shape[0]


def ue2d(pred, gt):
    return _per_frame(ue3d, pred, gt)


def sa2d(pred, gt):
    return _per_frame(sa3d, pred, gt)


def br2d(pred, gt, tol=1):
    return _per_frame(boundary_recall, pred, gt, tol)


def mean_duration(volume):
    """Average number of frames between first and last appearance of each label."""
    volume = np.asarray(volume)
    if volume.size == 0:
        raise ValueError("empty volume")
    if volume.ndim == 2:
        volume = volume[None]
    F = volume.shape[0]
    first, last = {}, {}
    for f in range(F):
        for lab in np.unique(volume[f]).tolist():
            first.setdefault(lab, f)
            last[lab] = f
    return math.fsum(last[k] - first[k] + 1 for k in first) / len(first)


def count_supervoxels(volume):
    volume = np.asarray(volume)
    if volume.size == 0:
        raise ValueError("empty volume")
    return int(len(np.unique(volume)))


@dataclass
class MetricReport:
    ue2d: float
    sa2d: float
    br2d: float
    ue3d: float
    sa3d: float
    br3d: float
    mean_duration: float
    supervoxels: int

    FIELDS = ("ue2d", "sa2d", "br2d", "ue3d", "sa3d", "br3d", "mean_duration", "supervoxels")

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def csv_row(self, **extra):
        row = dict(extra)
        row.update(self.to_dict())
        return row


def evaluate(pred, gt, tol=1):
    pred, gt = _check(pred, gt)
    if pred.ndim == 2:
        pred, gt = pred[None], gt[None]
    return MetricReport(
        ue2d=ue2d(pred, gt), sa2d=sa2d(pred, gt), br2d=br2d(pred, gt, tol),
        ue3d=ue3d(pred, gt), sa3d=sa3d(pred, gt), br3d=br3d(pred, gt, tol),
        mean_duration=mean_duration(pred), supervoxels=count_supervoxels(pred),
    )


def reports_to_csv(rows):
    """Render a list of dict rows (e.g. from :meth:`MetricReport.csv_row`) as CSV text."""
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()
