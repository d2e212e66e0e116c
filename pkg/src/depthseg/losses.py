"""Self-supervised loss suite: SSIM/L1 photometric loss, log-residual depth
supervision, edge-aware smoothness, cross-entropy, weighted totals, the
multi-scale photometric average, and shared-parameter gradient combination.

Analytic per-pixel gradients are provided for the differentiable losses so
they can be checked against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import geometry


class LossError(ValueError):
    """Invalid loss inputs."""


@dataclass(frozen=True)
class LossWeights:
    """Loss term weights. Defaults are the first-phase training values:
    refined-map supervision and smoothness start disabled."""

    beta1: float = 1.0
    beta2: float = 1.0
    lam_pe: float = 1.0
    lam_h: float = 1.0
    lam_rfd: float = 0.0
    lam_s: float = 0.0
    lam_ps: float = 1.0
    lam_rfs: float = 0.0
    gamma: float = 0.85
    alpha: float = 0.5

    def __post_init__(self):
        for name in ("beta1", "beta2", "lam_pe", "lam_h", "lam_rfd", "lam_s",
                     "lam_ps", "lam_rfs"):
            if getattr(self, name) < 0:
                raise LossError(f"{name} must be >= 0")
        if not 0.0 <= self.gamma <= 1.0:
            raise LossError("gamma must lie in [0, 1]")
        if not 0.0 <= self.alpha <= 1.0:
            raise LossError("alpha must lie in [0, 1]")

    @classmethod
    def from_config(cls, path) -> "LossWeights":
        """Parse a flat key=value file; unknown keys are rejected."""
        weights = cls()
        fields = set(weights.__dataclass_fields__)
        overrides = {}
        with open(path) as f:
            for lineno, line in enumerate(f, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise LossError(f"{path}:{lineno}: expected key=value")
                key, value = (part.strip() for part in line.split("=", 1))
                if key not in fields:
                    raise LossError(f"{path}:{lineno}: unknown key {key!r}")
                overrides[key] = float(value)
        return replace(weights, **overrides)


@dataclass(frozen=True)
class SsimParams:
    window: int = 3
    c1: float = 0.01 ** 2
    c2: float = 0.03 ** 2

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise LossError("window must be odd and >= 3")
        if self.c1 <= 0 or self.c2 <= 0:
            raise LossError("stabilizers must be positive")


def _as_hwc(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise LossError("images must be (H, W) or (H, W, C)")
    return arr


def _box_count(shape, window) -> np.ndarray:
    ones = np.ones(shape[:2])
    return _box_sum(ones[:, :, None], window)[:, :, 0]


def _box_sum(x: np.ndarray, window: int) -> np.ndarray:
    """Zero-padded box sum over window x window (self-adjoint)."""
    r = window // 2
    h, w, c = x.shape
    padded = np.zeros((h + 2 * r, w + 2 * r, c))
    padded[r:r + h, r:r + w] = x
    csum = padded.cumsum(axis=0).cumsum(axis=1)
    csum = np.pad(csum, ((1, 0), (1, 0), (0, 0)))
    win = window
    return (csum[win:, win:] - csum[:-win, win:] - csum[win:, :-win]
            + csum[:-win, :-win])


def _local_mean(x: np.ndarray, window: int, count: np.ndarray) -> np.ndarray:
    return _box_sum(x, window) / count[:, :, None]


def _local_mean_adjoint(g: np.ndarray, window: int,
                        count: np.ndarray) -> np.ndarray:
    return _box_sum(g / count[:, :, None], window)


def _ssim_terms(a, b, p: SsimParams):
    count = _box_count(a.shape, p.window)
    mu_a = _local_mean(a, p.window, count)
    mu_b = _local_mean(b, p.window, count)
    e_aa = _local_mean(a * a, p.window, count)
    e_bb = _local_mean(b * b, p.window, count)
    e_ab = _local_mean(a * b, p.window, count)
    var_a = e_aa - mu_a ** 2
    var_b = e_bb - mu_b ** 2
    cov = e_ab - mu_a * mu_b
    n1 = 2 * mu_a * mu_b + p.c1
    n2 = 2 * cov + p.c2
    d1 = mu_a ** 2 + mu_b ** 2 + p.c1
    d2 = var_a + var_b + p.c2
    ssim = (n1 * n2) / (d1 * d2)
    return count, mu_a, mu_b, n1, n2, d1, d2, ssim


def ssim_map(a, b, p: SsimParams = SsimParams()) -> np.ndarray:
    """Per-pixel structural similarity, averaged over channels."""
    a = _as_hwc(a)
    b = _as_hwc(b)
    if a.shape != b.shape:
        raise LossError("shape mismatch")
    *_, ssim = _ssim_terms(a, b, p)
    return ssim.mean(axis=2)


def photometric_loss(img_t, img_st, mask=None, w: LossWeights = LossWeights(),
                     p: SsimParams = SsimParams()) -> float:
    """gamma/2 * (1 - SSIM) + (1 - gamma) * L1, averaged over valid pixels."""
    a = _as_hwc(img_t)
    b = _as_hwc(img_st)
    if a.shape != b.shape:
        raise LossError("shape mismatch")
    per_pixel = (w.gamma / 2.0 * (1.0 - ssim_map(a, b, p))
                 + (1.0 - w.gamma) * np.abs(a - b).mean(axis=2))
    if mask is None:
        mask = np.ones(per_pixel.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise LossError("all pixels are masked out")
    return float(per_pixel[mask].mean())


def photometric_loss_grad(img_t, img_st, mask=None,
                          w: LossWeights = LossWeights(),
                          p: SsimParams = SsimParams()) -> np.ndarray:
    """Analytic gradient of photometric_loss w.r.t. the warped image."""
    a = _as_hwc(img_t)
    b = _as_hwc(img_st)
    if mask is None:
        mask = np.ones(a.shape[:2], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    n_valid = int(mask.sum())
    if n_valid == 0:
        raise LossError("all pixels are masked out")
    channels = a.shape[2]
    # upstream gradient into the per-pixel, per-channel SSIM values
    g_pix = mask.astype(np.float64) / n_valid
    g_ssim = (-w.gamma / 2.0 / channels) * g_pix[:, :, None]
    g_ssim = np.broadcast_to(g_ssim, a.shape).copy()
    count, mu_a, mu_b, n1, n2, d1, d2, _ = _ssim_terms(a, b, p)
    ssim = (n1 * n2) / (d1 * d2)
    g_n1 = g_ssim * n2 / (d1 * d2)
    g_n2 = g_ssim * n1 / (d1 * d2)
    g_d1 = -g_ssim * ssim / d1
    g_d2 = -g_ssim * ssim / d2
    g_cov = 2.0 * g_n2
    g_var_b = g_d2
    g_mu_b = (g_n1 * 2.0 * mu_a + g_d1 * 2.0 * mu_b
              - g_cov * mu_a - g_var_b * 2.0 * mu_b)
    g_e_bb = g_var_b
    g_e_ab = g_cov
    grad = (_local_mean_adjoint(g_mu_b, p.window, count)
            + _local_mean_adjoint(g_e_bb, p.window, count) * 2.0 * b
            + _local_mean_adjoint(g_e_ab, p.window, count) * a)
    grad += ((1.0 - w.gamma) / channels) * np.sign(b - a) * g_pix[:, :, None]
    return grad


def hint_loss(pred_depth, target_depth, mask=None) -> float:
    """Mean log(1 + |residual|) against an externally supplied or refined
    depth target."""
    pred = np.asarray(pred_depth, dtype=np.float64)
    target = np.asarray(target_depth, dtype=np.float64)
    if pred.shape != target.shape:
        raise LossError("shape mismatch")
    if pred.size == 0 or pred.min() <= 0 or target.min() <= 0:
        raise LossError("depths must be positive")
    if mask is None:
        mask = np.ones(pred.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise LossError("all pixels are masked out")
    return float(np.log1p(np.abs(pred - target))[mask].mean())


def hint_loss_grad(pred_depth, target_depth, mask=None) -> np.ndarray:
    pred = np.asarray(pred_depth, dtype=np.float64)
    target = np.asarray(target_depth, dtype=np.float64)
    if mask is None:
        mask = np.ones(pred.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    resid = pred - target
    grad = np.sign(resid) / (1.0 + np.abs(resid)) / mask.sum()
    return np.where(mask, grad, 0.0)


def _smoothness_terms(disp, img):
    disp = np.asarray(disp, dtype=np.float64)
    img = _as_hwc(img)
    if disp.shape != img.shape[:2]:
        raise LossError("shape mismatch")
    mean = disp.mean()
    if mean <= 0:
        raise LossError("disparity mean must be positive")
    norm = disp / mean
    gx = norm[:, 1:] - norm[:, :-1]
    gy = norm[1:, :] - norm[:-1, :]
    ix = np.abs(img[:, 1:] - img[:, :-1]).mean(axis=2)
    iy = np.abs(img[1:, :] - img[:-1, :]).mean(axis=2)
    return disp, mean, norm, gx, gy, np.exp(-ix), np.exp(-iy)


def smoothness_loss(disp, img) -> float:
    """Edge-aware smoothness of the mean-normalized disparity (forward
    differences; the last row/column of each direction is excluded)."""
    _, _, _, gx, gy, wx, wy = _smoothness_terms(disp, img)
    return float((np.abs(gx) * wx).mean() + (np.abs(gy) * wy).mean())


def smoothness_loss_grad(disp, img) -> np.ndarray:
    """Analytic gradient of smoothness_loss w.r.t. the disparity map."""
    disp, mean, norm, gx, gy, wx, wy = _smoothness_terms(disp, img)
    g_gx = np.sign(gx) * wx / gx.size
    g_gy = np.sign(gy) * wy / gy.size
    g_norm = np.zeros_like(norm)
    g_norm[:, 1:] += g_gx
    g_norm[:, :-1] -= g_gx
    g_norm[1:, :] += g_gy
    g_norm[:-1, :] -= g_gy
    # chain through the normalization by the global mean
    dot = (g_norm * disp).sum()
    return g_norm / mean - dot / (mean ** 2 * disp.size)


_PROB_FLOOR = 1e-7


def _prepare_cross_entropy(target, probs):
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 3:
        raise LossError("probabilities must be (H, W, K)")
    sums = probs.sum(axis=2)
    if np.abs(sums - 1.0).max() > 1e-5:
        raise LossError("probability vectors must sum to 1 within 1e-5")
    target = np.asarray(target)
    if target.ndim == 2:
        if target.shape != probs.shape[:2]:
            raise LossError("shape mismatch")
        k = probs.shape[2]
        if target.min() < 0 or target.max() >= k:
            raise LossError("class ids out of range")
        onehot = np.zeros_like(probs)
        hh, ww = np.meshgrid(np.arange(target.shape[0]),
                             np.arange(target.shape[1]), indexing="ij")
        onehot[hh, ww, target.astype(int)] = 1.0
        target = onehot
    elif target.shape != probs.shape:
        raise LossError("shape mismatch")
    return np.asarray(target, dtype=np.float64), probs


def cross_entropy(target, probs) -> float:
    """-(1/N) sum target * log(probs), N = number of pixels; probabilities
    are floored at 1e-7 inside the log."""
    target, probs = _prepare_cross_entropy(target, probs)
    n = probs.shape[0] * probs.shape[1]
    return float(-(target * np.log(np.maximum(probs, _PROB_FLOOR))).sum() / n)


def cross_entropy_grad(target, probs) -> np.ndarray:
    """Analytic gradient of cross_entropy w.r.t. the probabilities."""
    target, probs = _prepare_cross_entropy(target, probs)
    n = probs.shape[0] * probs.shape[1]
    grad = np.where(probs > _PROB_FLOOR, -target / np.maximum(probs, _PROB_FLOOR),
                    0.0)
    return grad / n


def total_depth_loss(pe: float, hint: float, rfd: float, smooth: float,
                     w: LossWeights = LossWeights()) -> float:
    total = (w.lam_pe * pe + w.lam_h * hint + w.lam_rfd * rfd
             + w.lam_s * smooth)
    if not np.isfinite(total):
        raise LossError("non-finite loss component")
    return float(total)


def total_seg_loss(ps: float, rfs: float,
                   w: LossWeights = LossWeights()) -> float:
    total = w.lam_ps * ps + w.lam_rfs * rfs
    if not np.isfinite(total):
        raise LossError("non-finite loss component")
    return float(total)


def total_loss(depth_loss: float, seg_loss: float,
               w: LossWeights = LossWeights()) -> float:
    total = w.beta1 * depth_loss + w.beta2 * seg_loss
    if not np.isfinite(total):
        raise LossError("non-finite loss component")
    return float(total)


def multiscale_photometric(disparities, img_t, img_s, pose, cam,
                           depth_params, w: LossWeights = LossWeights(),
                           p: SsimParams = SsimParams()) -> float:
    """Mean photometric loss over predictions at 1x, 1/2, 1/4 and 1/8
    resolution; each disparity is upsampled to full resolution before
    conversion and warping."""
    if len(disparities) != 4:
        raise LossError("expected disparity maps at 4 scales")
    img_t = _as_hwc(img_t)
    h, w_img = img_t.shape[:2]
    losses = []
    for scale, disp in enumerate(disparities):
        disp = np.asarray(disp, dtype=np.float64)
        expected = (h // (1 << scale), w_img // (1 << scale))
        if disp.shape != expected:
            raise LossError(f"scale {scale}: expected shape {expected}, "
                            f"got {disp.shape}")
        full = geometry.upsample_bilinear(disp, (h, w_img))
        depth = geometry.disparity_to_depth(full, depth_params)
        warped, valid = geometry.warp(img_s, depth, pose, cam)
        losses.append(photometric_loss(img_t, warped, valid, w, p))
    return float(np.mean(losses))


def combine_shared_gradients(g_depth, g_seg, alpha: float) -> np.ndarray:
    """alpha * depth-task gradient + (1 - alpha) * segmentation-task
    gradient, applied inside shared parameters only."""
    g_depth = np.asarray(g_depth, dtype=np.float64)
    g_seg = np.asarray(g_seg, dtype=np.float64)
    if g_depth.shape != g_seg.shape:
        raise LossError("shape mismatch")
    if not 0.0 <= alpha <= 1.0:
        raise LossError("alpha must lie in [0, 1]")
    return alpha * g_depth + (1.0 - alpha) * g_seg
