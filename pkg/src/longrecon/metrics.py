"""Image quality metrics and the paired significance test.

SSIM follows scikit-image's default recipe (the implementation the metric
numbers are conventionally reported with): 7x7 uniform window, K1=0.01,
K2=0.03, unbiased local covariances, border windows cropped. PSNR and NRMSE
are the usual definitions. The Wilcoxon signed-rank test enumerates the
exact sign-flip distribution for n <= 25 and falls back to the
continuity-corrected normal approximation above.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter
from scipy.stats import norm, rankdata

from .errors import DegenerateInputError, InvalidInputError, UndefinedTestError

__all__ = [
    "ssim",
    "psnr",
    "nrmse",
    "wilcoxon_signed_rank",
    "WilcoxonResult",
    "MetricReport",
    "write_per_slice_csv",
    "write_aggregate_json",
]

SSIM_WIN_SIZE = 7
SSIM_K1 = 0.01
SSIM_K2 = 0.03
EXACT_WILCOXON_MAX_N = 25


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise InvalidInputError(f"expected 2D images, got {a.shape}")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise InvalidInputError("images contain NaN or Inf")
    return a, b


def ssim(a: np.ndarray, b: np.ndarray, data_range: float) -> float:
    """Mean local SSIM over fully contained 7x7 uniform windows."""
    a, b = _check_pair(a, b)
    if data_range <= 0:
        raise InvalidInputError(f"data_range must be > 0, got {data_range}")
    if min(a.shape) < SSIM_WIN_SIZE:
        raise InvalidInputError(
            f"images must be at least {SSIM_WIN_SIZE}x{SSIM_WIN_SIZE}, got {a.shape}"
        )
    np_win = SSIM_WIN_SIZE**2
    cov_norm = np_win / (np_win - 1)
    filt = lambda x: uniform_filter(x, size=SSIM_WIN_SIZE)
    ux, uy = filt(a), filt(b)
    uxx, uyy, uxy = filt(a * a), filt(b * b), filt(a * b)
    vx = cov_norm * (uxx - ux * ux)
    vy = cov_norm * (uyy - uy * uy)
    vxy = cov_norm * (uxy - ux * uy)
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    s = ((2 * ux * uy + c1) * (2 * vxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
    pad = (SSIM_WIN_SIZE - 1) // 2
    return float(s[pad:-pad, pad:-pad].mean())


def psnr(a: np.ndarray, b: np.ndarray, data_range: float) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical images."""
    a, b = _check_pair(a, b)
    if data_range <= 0:
        raise InvalidInputError(f"data_range must be > 0, got {data_range}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range**2 / mse)


def nrmse(reference: np.ndarray, b: np.ndarray) -> float:
    """L2 error of ``b`` against ``reference``, normalized by ``||reference||``."""
    reference, b = _check_pair(reference, b)
    ref_norm = float(np.linalg.norm(reference))
    if ref_norm == 0.0:
        raise DegenerateInputError("nrmse undefined for an all-zero reference")
    return float(np.linalg.norm(reference - b)) / ref_norm


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float  # W+: sum of midranks of positive differences
    p_value: float
    significant: bool
    n: int
    method: str  # "exact" or "normal"


def _exact_p_two_sided(ranks: np.ndarray, w_plus: float) -> float:
    # Generating-function DP over the sign-flip distribution of W+.
    # Midranks may end in .5, so work with doubled integer ranks.
    doubled = np.round(2 * ranks).astype(np.int64)
    w2 = int(round(2 * w_plus))
    counts = np.zeros(int(doubled.sum()) + 1, dtype=np.float64)
    counts[0] = 1.0
    top = 0
    for g in doubled:
        top += g
        counts[g : top + 1] = counts[g : top + 1] + counts[0 : top + 1 - g]
    total = counts.sum()
    p_le = counts[: w2 + 1].sum() / total
    p_ge = counts[w2:].sum() / total
    return min(1.0, 2.0 * min(p_le, p_ge))


def _normal_p_two_sided(ranks: np.ndarray, w_plus: float) -> float:
    n = ranks.size
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    # tie correction: midranks repeated t times reduce the variance
    _, tie_counts = np.unique(ranks, return_counts=True)
    var -= float(np.sum(tie_counts**3 - tie_counts)) / 48.0
    if var <= 0:
        raise UndefinedTestError("zero variance: all differences tied at one value")
    d = w_plus - mean
    # continuity correction toward the mean
    d -= 0.5 * np.sign(d)
    z = d / math.sqrt(var)
    return float(min(1.0, 2.0 * norm.sf(abs(z))))


def wilcoxon_signed_rank(diffs, alpha: float = 0.05) -> WilcoxonResult:
    """Two-sided Wilcoxon signed-rank test on paired differences.

    Zero differences are dropped, tied magnitudes get midranks. Exact
    enumeration for n <= 25, normal approximation with continuity
    correction above.
    """
    diffs = np.asarray(diffs, dtype=np.float64).ravel()
    if not np.isfinite(diffs).all():
        raise InvalidInputError("differences contain NaN or Inf")
    nonzero = diffs[diffs != 0.0]
    n = nonzero.size
    if n == 0:
        raise UndefinedTestError("all differences are zero; test undefined")
    if n < 5:
        raise InvalidInputError(f"need >= 5 nonzero differences, got {n}")
    ranks = rankdata(np.abs(nonzero))
    w_plus = float(ranks[nonzero > 0].sum())
    if n <= EXACT_WILCOXON_MAX_N:
        p = _exact_p_two_sided(ranks, w_plus)
        method = "exact"
    else:
        p = _normal_p_two_sided(ranks, w_plus)
        method = "normal"
    return WilcoxonResult(w_plus, p, bool(p < alpha), n, method)


@dataclass
class MetricReport:
    """Per-slice metric rows for one evaluation run."""

    rows: list[dict] = field(default_factory=list)

    def add(self, *, subject_id: str, slice_index: int, method: str, R: float,
            ssim: float, psnr: float, nrmse: float) -> None:
        self.rows.append(
            {
                "subject_id": subject_id,
                "slice_index": slice_index,
                "method": method,
                "R": R,
                "ssim": ssim,
                "psnr": psnr,
                "nrmse": nrmse,
            }
        )

    def values(self, method: str, R: float, metric: str) -> np.ndarray:
        return np.array(
            [r[metric] for r in self.rows if r["method"] == method and r["R"] == R]
        )

    def methods(self) -> list[str]:
        seen: list[str] = []
        for r in self.rows:
            if r["method"] not in seen:
                seen.append(r["method"])
        return seen

    def accelerations(self) -> list[float]:
        seen: list[float] = []
        for r in self.rows:
            if r["R"] not in seen:
                seen.append(r["R"])
        return sorted(seen)


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "inf"
    return f"{v:.10g}"


def write_per_slice_csv(report: MetricReport, path) -> None:
    """One row per (subject, slice, method, R), deterministic order."""
    path = Path(path)
    rows = sorted(
        report.rows,
        key=lambda r: (r["subject_id"], r["slice_index"], r["method"], r["R"]),
    )
    with path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["subject_id", "slice_index", "method", "R", "ssim", "psnr", "nrmse"])
        for r in rows:
            writer.writerow(
                [r["subject_id"], r["slice_index"], r["method"], _fmt(r["R"]),
                 _fmt(r["ssim"]), _fmt(r["psnr"]), _fmt(r["nrmse"])]
            )


def write_aggregate_json(report: MetricReport, path, alpha: float = 0.05) -> dict:
    """Aggregate means/stds plus pairwise Wilcoxon results per method pair."""
    path = Path(path)
    out: dict = {"aggregates": [], "wilcoxon": []}
    methods = report.methods()
    for R in report.accelerations():
        for method in methods:
            for metric in ("ssim", "psnr", "nrmse"):
                vals = report.values(method, R, metric)
                if vals.size == 0:
                    continue
                finite = vals[np.isfinite(vals)]
                out["aggregates"].append(
                    {
                        "method": method,
                        "R": R,
                        "metric": metric,
                        "mean": float(finite.mean()) if finite.size else None,
                        "std": float(finite.std()) if finite.size else None,
                        "n": int(vals.size),
                        "n_infinite": int(vals.size - finite.size),
                    }
                )
        for i, m_a in enumerate(methods):
            for m_b in methods[i + 1 :]:
                a = report.values(m_a, R, "ssim")
                b = report.values(m_b, R, "ssim")
                if a.size != b.size or a.size == 0:
                    continue
                entry = {"method_a": m_a, "method_b": m_b, "R": R, "metric": "ssim"}
                try:
                    res = wilcoxon_signed_rank(a - b, alpha=alpha)
                    entry.update(
                        statistic=res.statistic,
                        p_value=res.p_value,
                        significant=res.significant,
                        n=res.n,
                        test=res.method,
                    )
                except UndefinedTestError:
                    entry.update(statistic=None, p_value=None, significant=False,
                                 n=int(a.size), test="no difference")
                out["wilcoxon"].append(entry)
    path.write_text(json.dumps(out, indent=2, sort_keys=True))
    return out
