"""Quantitative evaluation: PSNR and a Fréchet feature-distribution distance.

The Fréchet score uses the locally trained codec encoder as its feature
extractor (spatially mean-pooled latents, d = d_b).  Scores are comparable
only within a run: they rank model variants trained on the same world, and
are NOT on the scale of published Inception-based numbers.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PSNR_CAP = 99.0


class MetricError(ValueError):
    pass


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 * log10(1 / MSE) for images in [0, 1]; identical images cap at 99 dB."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise MetricError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


@dataclass(frozen=True)
class FeatureStats:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        cov = np.asarray(self.cov, dtype=np.float64)
        if cov.shape != (mean.size, mean.size):
            raise MetricError(f"covariance {cov.shape} does not match mean of {mean.size}")
        if not np.allclose(cov, cov.T, atol=1e-10):
            raise MetricError("covariance must be symmetric")
        eigs = np.linalg.eigvalsh(cov)
        if eigs.min() < -1e-8:
            raise MetricError(f"covariance not PSD (min eigenvalue {eigs.min():.3e})")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


def feature_stats(frames: np.ndarray, codec) -> FeatureStats:
    """Mean and unbiased covariance of codec encoder features over a frame set."""
    frames = np.asarray(frames)
    if frames.ndim != 4 or frames.shape[0] < 2:
        raise MetricError("feature_stats needs at least 2 frames")
    feats = codec.encode_features(frames).astype(np.float64)
    mean = feats.mean(axis=0)
    cov = np.cov(feats, rowvar=False)
    cov = np.atleast_2d(cov)
    return FeatureStats(mean, (cov + cov.T) / 2.0)


def _sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition; tiny negatives clipped."""
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet(s1: FeatureStats, s2: FeatureStats) -> float:
    """|mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2))."""
    if s1.mean.size != s2.mean.size:
        raise MetricError(
            f"frechet: dimension mismatch {s1.mean.size} vs {s2.mean.size}"
        )
    diff = float(((s1.mean - s2.mean) ** 2).sum())
    root1 = _sqrtm_psd(s1.cov)
    # sqrt(S1 S2) has the trace of sqrt(sqrt(S1) S2 sqrt(S1)), which is symmetric
    inner = root1 @ s2.cov @ root1
    vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    vals = np.where(vals < 1e-8, np.clip(vals, 0.0, None), vals)
    tr_root = float(np.sqrt(vals).sum())
    value = diff + float(np.trace(s1.cov) + np.trace(s2.cov)) - 2.0 * tr_root
    return max(value, 0.0)


def write_report(path, rows: list[dict]) -> None:
    """CSV metric report with columns (variant, n_frames, psnr_mean, frechet)."""
    path = Path(path)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["variant", "n_frames", "psnr_mean", "frechet"])
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in writer.fieldnames})
