"""Overlap and boundary-distance metrics for label maps."""
import csv
import io
from dataclasses import dataclass, field
from typing import List

import numpy as np

from . import kernels
from .errors import ShapeError

CSV_HEADER = ["volume_id", "class", "dice", "jaccard", "hd95", "asd", "empty_pred", "empty_gt"]


@dataclass
class MetricsRecord:
    volume_id: str
    class_id: int
    dice: float
    jaccard: float
    hd95: float
    asd: float
    empty_pred: bool = False
    empty_gt: bool = False


@dataclass
class SurfaceSet:
    points: np.ndarray            # (n, ndim) integer voxel coordinates
    connectivity: int
    shape: tuple = field(default=())


def _as_grid(x):
    return np.asarray(getattr(x, "grid", x))


def dice_jaccard(pred, gt, c=1):
    p, g = _as_grid(pred), _as_grid(gt)
    if p.shape != g.shape:
        raise ShapeError(f"prediction {p.shape} and ground truth {g.shape} differ")
    p, g = p == c, g == c
    inter = int(np.logical_and(p, g).sum())
    sp, sg = int(p.sum()), int(g.sum())
    if sp == 0 and sg == 0:
        return 1.0, 1.0
    if sp == 0 or sg == 0:
        return 0.0, 0.0
    return 2.0 * inter / (sp + sg), inter / (sp + sg - inter)


def extract_surface(mask, connectivity=None):
    """Foreground voxels with at least one face-neighbour outside the mask.

    Face connectivity: 4 in 2-D, 6 in 3-D. Outside the grid counts as background.
    """
    m = np.asarray(mask).astype(bool)
    nd = m.ndim
    connectivity = 2 * nd if connectivity is None else connectivity
    if connectivity != 2 * nd:
        raise ValueError(f"only face connectivity ({2 * nd}) is supported for {nd}-D masks")
    padded = np.pad(m, 1, constant_values=False)
    interior_all = np.ones_like(m)
    centre = tuple(slice(1, -1) for _ in range(nd))
    for ax in range(nd):
        for shift in (-1, 1):
            sl = list(centre)
            sl[ax] = slice(1 + shift, padded.shape[ax] - 1 + shift)
            interior_all &= padded[tuple(sl)]
    boundary = m & ~interior_all
    return SurfaceSet(np.argwhere(boundary), connectivity, m.shape)


def directed_distances(a, b, spacing):
    """Distance from each point of ``a`` to the nearest point of ``b``, in physical units."""
    sp = np.asarray(spacing, dtype=np.float64)
    return kernels.nearest_distances(a * sp, b * sp)


def image_diagonal(shape, spacing):
    return float(np.sqrt(np.sum((np.asarray(shape) * np.asarray(spacing, dtype=np.float64)) ** 2)))


def hd95_asd(pred_surface, gt_surface, spacing=None, shape=None):
    """Returns ``(hd95, asd, empty_pred, empty_gt)``.

    hd95 is the larger of the two directed 95th percentiles (linear interpolation);
    asd pools both directed distance sets. If either surface is empty both metrics are
    the image diagonal.
    """
    p, g = pred_surface.points, gt_surface.points
    nd = p.shape[1] if p.size else g.shape[1] if g.size else len(shape or pred_surface.shape)
    spacing = np.ones(nd) if spacing is None else np.asarray(spacing, dtype=np.float64)[-nd:]
    empty_p, empty_g = len(p) == 0, len(g) == 0
    if empty_p or empty_g:
        diag = image_diagonal(shape or pred_surface.shape or gt_surface.shape, spacing)
        return diag, diag, empty_p, empty_g
    d_pg = directed_distances(p, g, spacing)
    d_gp = directed_distances(g, p, spacing)
    hd = max(np.percentile(d_pg, 95), np.percentile(d_gp, 95))
    asd = (d_pg.sum() + d_gp.sum()) / (len(d_pg) + len(d_gp))
    return float(hd), float(asd), False, False


def evaluate_volume(pred, gt, classes, spacing=None, volume_id=""):
    """One record per foreground class."""
    p, g = _as_grid(pred), _as_grid(gt)
    if p.shape != g.shape:
        raise ShapeError(f"prediction {p.shape} and ground truth {g.shape} differ")
    if p.ndim == 3 and p.shape[0] == 1:
        # 2-D image stored as a one-slice volume: a slice has no depth neighbours
        p, g = p[0], g[0]
        if spacing is not None:
            spacing = tuple(spacing)[-2:]
    records = []
    for c in range(1, classes):
        dice, jac = dice_jaccard(p, g, c)
        sp_ = extract_surface(p == c)
        sg_ = extract_surface(g == c)
        hd, asd, ep, eg = hd95_asd(sp_, sg_, spacing, p.shape)
        records.append(MetricsRecord(volume_id, c, dice, jac, hd, asd, ep, eg))
    return records


def summarize(records) -> List[MetricsRecord]:
    """Per-class mean rows (``volume_id == "mean"``), classes ascending."""
    out = []
    for c in sorted({r.class_id for r in records}):
        rs = [r for r in records if r.class_id == c]
        out.append(MetricsRecord(
            "mean", c,
            float(np.mean([r.dice for r in rs])), float(np.mean([r.jaccard for r in rs])),
            float(np.mean([r.hd95 for r in rs])), float(np.mean([r.asd for r in rs])),
            any(r.empty_pred for r in rs), any(r.empty_gt for r in rs),
        ))
    return out


def _fmt(x):
    return repr(float(x))


def to_csv(records, include_summary=True):
    records = sorted(records, key=lambda r: (r.volume_id, r.class_id))
    rows = records + (summarize(records) if include_summary else [])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([r.volume_id, r.class_id, _fmt(r.dice), _fmt(r.jaccard), _fmt(r.hd95),
                    _fmt(r.asd), int(r.empty_pred), int(r.empty_gt)])
    return buf.getvalue()


def write_csv(records, path, include_summary=True):
    text = to_csv(records, include_summary)
    with open(path, "w") as fh:
        fh.write(text)
    return text
