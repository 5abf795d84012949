"""Depth and normal evaluation metrics, report aggregation and ranking."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy.ndimage import correlate1d
from scipy.stats import rankdata

from .differential import depth_to_gradient, depth_to_normal
from .grid import DepthMap, NormalMap, check_same_shape, encode_normals, normalize_to_255

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

COLUMNS = ("eps_d", "depth_psnr", "depth_ssim", "eps_n", "normal_psnr", "normal_ssim",
           "frac_11_25", "frac_22_5")
LOWER_IS_BETTER = frozenset({"eps_d", "eps_n"})
DEPTH_TABLE_METRICS = ("eps_d", "depth_psnr", "depth_ssim", "eps_n", "normal_psnr", "normal_ssim")
NORMAL_TABLE_METRICS = ("eps_n", "frac_11_25", "frac_22_5", "normal_psnr", "normal_ssim")


class MetricError(ValueError):
    pass


def _valid(pred, gt) -> np.ndarray:
    check_same_shape(pred, gt)
    v = np.ones(gt.shape, dtype=bool)
    for m in (pred, gt):
        if isinstance(m, DepthMap):
            v &= m.valid
    if not v.any():
        raise MetricError("no valid pixels")
    return v


# --------------------------------------------------------------------------
# depth

def mean_depth_error(pred: DepthMap, gt: DepthMap) -> float:
    """Mean absolute depth error as a percentage of the ground-truth maximum."""
    valid = _valid(pred, gt)
    peak = gt.values[valid].max()
    if not peak > 0:
        raise MetricError(f"ground-truth maximum is {peak}; percentage error undefined")
    err = np.abs(pred.values[valid] - gt.values[valid]) / peak
    return float(err.mean() * 100.0)


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 255.0,
         valid: Optional[np.ndarray] = None) -> float:
    """PSNR in dB over ``valid`` pixels (all channels pooled); ``inf`` when identical."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch {a.shape} vs {b.shape}")
    diff = a - b
    if valid is not None:
        diff = diff[valid]
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def report_psnr(value: float) -> float:
    return PSNR_CAP if math.isinf(value) else value


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return w / w.sum()


def _local_mean(img: np.ndarray, w1d: np.ndarray) -> np.ndarray:
    out = correlate1d(img, w1d, axis=0, mode="constant")
    out = correlate1d(out, w1d, axis=1, mode="constant")
    r = len(w1d) // 2
    return out[r:-r, r:-r]


def ssim(a: np.ndarray, b: np.ndarray, valid: Optional[np.ndarray] = None,
         data_range: float = 255.0) -> float:
    """Mean SSIM over all window positions fully inside the image.

    11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03. With ``valid``,
    only windows centred on valid pixels are averaged.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim != 2 or min(a.shape) < SSIM_WINDOW:
        raise MetricError(f"SSIM needs a 2-D image at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape}")
    w = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a = _local_mean(a, w)
    mu_b = _local_mean(b, w)
    var_a = _local_mean(a * a, w) - mu_a * mu_a
    var_b = _local_mean(b * b, w) - mu_b * mu_b
    cov = _local_mean(a * b, w) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    smap = num / den
    if valid is not None:
        r = SSIM_WINDOW // 2
        centres = valid[r:-r, r:-r]
        if not centres.any():
            raise MetricError("no valid SSIM window centres")
        smap = smap[centres]
    return float(smap.mean())


def depth_psnr(pred: DepthMap, gt: DepthMap) -> float:
    valid = _valid(pred, gt)
    return psnr(normalize_to_255(pred.values, valid), normalize_to_255(gt.values, valid),
                valid=valid)


def depth_ssim(pred: DepthMap, gt: DepthMap) -> float:
    valid = _valid(pred, gt)
    return ssim(normalize_to_255(pred.values, valid), normalize_to_255(gt.values, valid),
                valid=valid)


# --------------------------------------------------------------------------
# normals

def angular_error_map(pred: NormalMap, gt: NormalMap) -> np.ndarray:
    """Per-pixel angle between normals, degrees.

    Computed as ``atan2(|a x b|, a . b)``, which equals ``arccos`` of the
    clamped dot product for unit vectors but stays accurate near 0 and 180.
    """
    check_same_shape(pred, gt)
    a, b = pred.vectors, gt.vectors
    cross = np.linalg.norm(np.cross(a, b), axis=-1)
    dot = np.sum(a * b, axis=-1)
    return np.degrees(np.arctan2(cross, dot))


def normal_angular_error(pred: NormalMap, gt: NormalMap,
                         valid: Optional[np.ndarray] = None) -> float:
    err = angular_error_map(pred, gt)
    if valid is not None:
        err = err[valid]
    return float(err.mean())


def angular_threshold_fraction(pred: NormalMap, gt: NormalMap, threshold: float,
                               valid: Optional[np.ndarray] = None) -> float:
    """Percentage of pixels whose angular error is strictly below ``threshold`` degrees."""
    if not threshold > 0:
        raise MetricError(f"threshold must be positive, got {threshold}")
    err = angular_error_map(pred, gt)
    if valid is not None:
        err = err[valid]
    return float(np.mean(err < threshold) * 100.0)


def normal_psnr(pred: NormalMap, gt: NormalMap, valid: Optional[np.ndarray] = None) -> float:
    a = encode_normals(pred).channels * 255.0
    b = encode_normals(gt).channels * 255.0
    return psnr(a, b, valid=valid)


def normal_ssim(pred: NormalMap, gt: NormalMap, valid: Optional[np.ndarray] = None) -> float:
    a = encode_normals(pred).channels * 255.0
    b = encode_normals(gt).channels * 255.0
    return float(np.mean([ssim(a[..., c], b[..., c], valid=valid) for c in range(3)]))


# --------------------------------------------------------------------------
# training loss

def _normal_cosines(pred: DepthMap, gt: DepthMap, scheme: str = "central") -> np.ndarray:
    gp = depth_to_gradient(pred, scheme).vectors
    gg = depth_to_gradient(gt, scheme).vectors
    sp = gp[..., 0] ** 2 + gp[..., 1] ** 2 + 1.0
    sg = gg[..., 0] ** 2 + gg[..., 1] ** 2 + 1.0
    # sqrt(s*s) == s exactly in IEEE arithmetic, so identical depths give cos == 1.0
    return (gp[..., 0] * gg[..., 0] + gp[..., 1] * gg[..., 1] + 1.0) / np.sqrt(sp * sg)


def composite_loss(pred: DepthMap, gt: DepthMap, alpha: float = 0.1) -> float:
    """Mean of ``alpha * |d_pred - d_gt| - <n_pred, n_gt>`` over valid pixels.

    Normals come from central differences; the optimum is -1 per pixel.
    """
    valid = _valid(pred, gt)
    cos = _normal_cosines(pred, gt)
    per_pixel = alpha * np.abs(pred.values - gt.values) - cos
    return float(per_pixel[valid].mean())


# --------------------------------------------------------------------------
# reports

@dataclass(frozen=True)
class MetricRow:
    id: str
    eps_d: float
    depth_psnr: float
    depth_ssim: float
    eps_n: float
    normal_psnr: float
    normal_ssim: float
    frac_11_25: float
    frac_22_5: float

    def values(self) -> dict:
        return {c: getattr(self, c) for c in COLUMNS}


def evaluate_pair(pred: DepthMap, gt: DepthMap, id: str = "") -> MetricRow:
    """All eight metrics for one prediction; normals from central differences."""
    valid = _valid(pred, gt)
    n_pred = depth_to_normal(pred)
    n_gt = depth_to_normal(gt)
    return MetricRow(
        id=id,
        eps_d=mean_depth_error(pred, gt),
        depth_psnr=report_psnr(depth_psnr(pred, gt)),
        depth_ssim=depth_ssim(pred, gt),
        eps_n=normal_angular_error(n_pred, n_gt, valid),
        normal_psnr=report_psnr(normal_psnr(n_pred, n_gt, valid)),
        normal_ssim=normal_ssim(n_pred, n_gt, valid),
        frac_11_25=angular_threshold_fraction(n_pred, n_gt, 11.25, valid),
        frac_22_5=angular_threshold_fraction(n_pred, n_gt, 22.5, valid),
    )


@dataclass
class MetricReport:
    per_image: list
    method: str = ""
    rank: Optional[float] = None

    @property
    def aggregate(self) -> dict:
        if not self.per_image:
            raise MetricError("empty report")
        return {c: float(np.mean([getattr(r, c) for r in self.per_image])) for c in COLUMNS}

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "per_image": [asdict(r) for r in self.per_image],
            "aggregate": self.aggregate,
            "rank": self.rank,
        }

    def write_csv(self, path) -> None:
        names = ["id", *COLUMNS, "rank"]
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=names)
            w.writeheader()
            for r in self.per_image:
                w.writerow({**asdict(r), "rank": ""})
            w.writerow({"id": "mean", **self.aggregate,
                        "rank": "" if self.rank is None else self.rank})


def mean_ranks(table: Mapping[str, Mapping[str, float]],
               metrics: Sequence[str] = DEPTH_TABLE_METRICS) -> dict:
    """Average per-metric rank (1 = best) of each method; ties share the mean rank."""
    names = list(table)
    if not names:
        return {}
    ranks = np.zeros(len(names))
    for m in metrics:
        col = np.array([table[n][m] for n in names], dtype=np.float64)
        if m not in LOWER_IS_BETTER:
            col = -col
        ranks += rankdata(col, method="average")
    return {n: float(r / len(metrics)) for n, r in zip(names, ranks)}


def rank_reports(reports: Iterable[MetricReport],
                 metrics: Sequence[str] = DEPTH_TABLE_METRICS) -> list:
    reports = list(reports)
    ranks = mean_ranks({r.method: r.aggregate for r in reports}, metrics)
    for r in reports:
        r.rank = ranks[r.method]
    return reports


def write_comparison(reports: Sequence[MetricReport], csv_path, json_path) -> None:
    with open(csv_path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["method", *COLUMNS, "rank"])
        w.writeheader()
        for r in reports:
            w.writerow({"method": r.method, **r.aggregate, "rank": r.rank})
    with open(json_path, "w") as f:
        json.dump([r.to_json() for r in reports], f, indent=2)


__all__ = [
    "COLUMNS", "MetricError", "MetricReport", "MetricRow", "angular_threshold_fraction",
    "composite_loss", "depth_psnr", "depth_ssim", "evaluate_pair", "mean_depth_error",
    "mean_ranks", "normal_angular_error", "normal_psnr", "normal_ssim", "psnr", "rank_reports",
    "ssim",
]
