"""Mutual refinement of segmentation and depth maps.

Both refinement passes share the same propagation scheme: a per-pixel
partition into a confident set and an unreliable set, and synchronous
wavefront iterations in which every unreliable pixel that sees at least one
confident neighbor (Chebyshev neighborhood of the previous iteration's
confident set) is updated and becomes confident itself.

Each pass has two interchangeable implementations:

* a vectorized wavefront built from shifted-array neighborhoods
  (``impl="parallel"``, the default), and
* a plain per-pixel simulator (``impl="reference"``) used as the equivalence
  oracle in tests.

Outputs of the two are bitwise identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import geometry


class RefineError(ValueError):
    """Invalid refinement inputs."""


@dataclass(frozen=True)
class RefineConfig:
    """Propagation parameters.

    ``depth_threshold`` of None resolves to 5% of the median confident depth
    at call time.
    """

    depth_threshold: float | None = None
    neighborhood_radius: int = 1
    max_iterations: int = 512

    def __post_init__(self):
        if self.depth_threshold is not None and not self.depth_threshold > 0:
            raise RefineError("depth_threshold must be positive")
        if self.neighborhood_radius < 1:
            raise RefineError("neighborhood_radius must be >= 1")
        if self.max_iterations < 1:
            raise RefineError("max_iterations must be >= 1")


@dataclass
class RefineState:
    """Confident/unreliable partition plus the values being refined."""

    values: np.ndarray
    confident: np.ndarray
    unreliable: np.ndarray
    iteration: int = 0

    def __post_init__(self):
        if (self.confident & self.unreliable).any():
            raise RefineError("confident and unreliable sets overlap")


@dataclass
class ClassRefineState(RefineState):
    class_id: int = 0


@dataclass(frozen=True)
class ClassSet:
    classes: tuple[int, ...]

    def __post_init__(self):
        ids = tuple(int(c) for c in self.classes)
        if len(set(ids)) != len(ids):
            raise RefineError("duplicate class ids")
        object.__setattr__(self, "classes", ids)


def _neighbor_offsets(radius: int) -> list[tuple[int, int]]:
    # raster order; the center is excluded (it is never confident while the
    # pixel itself is unreliable)
    return [(dr, dc)
            for dr in range(-radius, radius + 1)
            for dc in range(-radius, radius + 1)
            if (dr, dc) != (0, 0)]


def _shifted(arr: np.ndarray, dr: int, dc: int, fill) -> np.ndarray:
    """Value of the neighbor at offset (dr, dc) for every pixel."""
    out = np.full_like(arr, fill)
    h, w = arr.shape
    rs_dst = slice(max(0, -dr), min(h, h - dr))
    cs_dst = slice(max(0, -dc), min(w, w - dc))
    rs_src = slice(max(0, dr), min(h, h + dr))
    cs_src = slice(max(0, dc), min(w, w + dc))
    out[rs_dst, cs_dst] = arr[rs_src, cs_src]
    return out


def _check_same_shape(*arrays):
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise RefineError(f"shape mismatch: {sorted(shapes)}")


def split_confidence_by_agreement(y: np.ndarray,
                                  y_hat: np.ndarray) -> RefineState:
    """Partition pseudo-label pixels by agreement with the prediction."""
    y = np.asarray(y)
    y_hat = np.asarray(y_hat)
    _check_same_shape(y, y_hat)
    agree = y == y_hat
    return RefineState(values=y.copy(), confident=agree, unreliable=~agree)


def _resolve_threshold(cfg: RefineConfig, depth: np.ndarray,
                       confident: np.ndarray) -> float:
    if cfg.depth_threshold is not None:
        return float(cfg.depth_threshold)
    if not confident.any():
        return 0.0
    return 0.05 * float(np.median(depth[confident]))


def refine_segmentation_with_depth(y: np.ndarray, y_hat: np.ndarray,
                                   depth: np.ndarray,
                                   cfg: RefineConfig = RefineConfig(),
                                   impl: str = "parallel") -> np.ndarray:
    """Relabel pixels that disagree with the prediction using the label of
    the depth-closest confident neighbor, when that depth gap is below the
    threshold. Every reached pixel becomes confident regardless."""
    y = np.asarray(y)
    depth = np.asarray(depth, dtype=np.float64)
    _check_same_shape(y, np.asarray(y_hat), depth)
    if y.size == 0:
        raise RefineError("empty image")
    if not np.all(np.isfinite(depth)) or depth.min() <= 0:
        raise RefineError("depth must be finite and positive")
    state = split_confidence_by_agreement(y, y_hat)
    threshold = _resolve_threshold(cfg, depth, state.confident)
    if impl == "parallel":
        return _refine_seg_parallel(y, state.confident, depth, threshold, cfg)
    if impl == "reference":
        return _refine_seg_reference(y, state.confident, depth, threshold, cfg)
    raise RefineError(f"unknown impl {impl!r}")


def _refine_seg_parallel(y, confident, depth, threshold, cfg):
    labels = y.copy()
    conf = confident.copy()
    offsets = _neighbor_offsets(cfg.neighborhood_radius)
    for _ in range(cfg.max_iterations):
        if conf.all():
            break
        best_diff = np.full(depth.shape, np.inf)
        best_label = np.zeros_like(labels)
        has_conf_nb = np.zeros(depth.shape, dtype=bool)
        for dr, dc in offsets:
            nb_conf = _shifted(conf, dr, dc, False)
            nb_depth = _shifted(depth, dr, dc, np.inf)
            nb_label = _shifted(labels, dr, dc, 0)
            cand = np.where(nb_conf, np.abs(depth - nb_depth), np.inf)
            take = cand < best_diff  # strict: earliest raster offset wins ties
            best_diff = np.where(take, cand, best_diff)
            best_label = np.where(take, nb_label, best_label)
            has_conf_nb |= nb_conf
        eligible = ~conf & has_conf_nb
        if not eligible.any():
            break
        relabel = eligible & (best_diff < threshold)
        labels = np.where(relabel, best_label, labels)
        conf = conf | eligible
    return labels


def _refine_seg_reference(y, confident, depth, threshold, cfg):
    labels = y.copy()
    conf = confident.copy()
    h, w = depth.shape
    r = cfg.neighborhood_radius
    offsets = _neighbor_offsets(r)
    for _ in range(cfg.max_iterations):
        prev_labels = labels.copy()
        prev_conf = conf.copy()
        changed = False
        for i in range(h):
            for j in range(w):
                if prev_conf[i, j]:
                    continue
                best_diff = np.inf
                best_label = None
                for dr, dc in offsets:
                    ni, nj = i + dr, j + dc
                    if not (0 <= ni < h and 0 <= nj < w):
                        continue
                    if not prev_conf[ni, nj]:
                        continue
                    diff = abs(depth[i, j] - depth[ni, nj])
                    if diff < best_diff:
                        best_diff = diff
                        best_label = prev_labels[ni, nj]
                if best_label is None:
                    continue
                if best_diff < threshold:
                    labels[i, j] = best_label
                conf[i, j] = True
                changed = True
        if not changed or conf.all():
            break
    return labels


def split_confidence_by_consistency(depth: np.ndarray, y_refined: np.ndarray,
                                    y_t: np.ndarray, y_st: np.ndarray,
                                    warp_valid: np.ndarray,
                                    classes: ClassSet | Sequence[int]
                                    ) -> list[ClassRefineState]:
    """Per-class partition of depth pixels by cross-view label consistency.

    A pixel of class k is confident iff the target-view and warped-view
    labels agree and the warp sample was valid; warp-invalid pixels are
    always unreliable (they carry no photometric evidence).
    """
    depth = np.asarray(depth, dtype=np.float64)
    y_refined = np.asarray(y_refined)
    _check_same_shape(depth, y_refined, np.asarray(y_t), np.asarray(y_st),
                      np.asarray(warp_valid))
    if not isinstance(classes, ClassSet):
        classes = ClassSet(tuple(int(c) for c in classes))
    present = set(int(v) for v in np.unique(y_refined))
    missing = present - set(classes.classes)
    if missing:
        raise RefineError(f"classes {sorted(missing)} present in the refined "
                          "segmentation but absent from the class set")
    consistent = (np.asarray(y_t) == np.asarray(y_st)) & np.asarray(warp_valid)
    states = []
    for k in classes.classes:
        mask = y_refined == k
        states.append(ClassRefineState(values=depth.copy(),
                                       confident=mask & consistent,
                                       unreliable=mask & ~consistent,
                                       class_id=k))
    return states


def refine_depth_with_segmentation(depth: np.ndarray,
                                   states: Sequence[ClassRefineState],
                                   cfg: RefineConfig = RefineConfig(),
                                   impl: str = "parallel") -> np.ndarray:
    """Clip each unreliable depth into the range spanned by confident
    same-class neighbors, propagating class by class."""
    depth = np.asarray(depth, dtype=np.float64)
    out = depth.copy()
    for st in states:
        _check_same_shape(depth, st.confident, st.unreliable)
        if impl == "parallel":
            vals, mask = _refine_depth_class_parallel(depth, st, cfg)
        elif impl == "reference":
            vals, mask = _refine_depth_class_reference(depth, st, cfg)
        else:
            raise RefineError(f"unknown impl {impl!r}")
        out[mask] = vals[mask]
    return out


def _refine_depth_class_parallel(depth, st, cfg):
    vals = depth.copy()
    conf = st.confident.copy()
    unrel = st.unreliable.copy()
    class_mask = st.confident | st.unreliable
    offsets = _neighbor_offsets(cfg.neighborhood_radius)
    for _ in range(cfg.max_iterations):
        if not unrel.any():
            break
        c_min = np.full(depth.shape, np.inf)
        c_max = np.full(depth.shape, -np.inf)
        for dr, dc in offsets:
            nb_conf = _shifted(conf, dr, dc, False)
            nb_val = _shifted(vals, dr, dc, 0.0)
            c_min = np.minimum(c_min, np.where(nb_conf, nb_val, np.inf))
            c_max = np.maximum(c_max, np.where(nb_conf, nb_val, -np.inf))
        eligible = unrel & np.isfinite(c_min)
        if not eligible.any():
            break
        clipped = np.maximum(np.minimum(vals, c_max), c_min)
        vals = np.where(eligible, clipped, vals)
        conf |= eligible
        unrel &= ~eligible
    return vals, class_mask


def _refine_depth_class_reference(depth, st, cfg):
    vals = depth.copy()
    conf = st.confident.copy()
    unrel = st.unreliable.copy()
    class_mask = st.confident | st.unreliable
    h, w = depth.shape
    offsets = _neighbor_offsets(cfg.neighborhood_radius)
    for _ in range(cfg.max_iterations):
        prev_vals = vals.copy()
        prev_conf = conf.copy()
        changed = False
        for i in range(h):
            for j in range(w):
                if not unrel[i, j]:
                    continue
                c_min = np.inf
                c_max = -np.inf
                for dr, dc in offsets:
                    ni, nj = i + dr, j + dc
                    if not (0 <= ni < h and 0 <= nj < w):
                        continue
                    if not prev_conf[ni, nj]:
                        continue
                    c_min = min(c_min, prev_vals[ni, nj])
                    c_max = max(c_max, prev_vals[ni, nj])
                if not np.isfinite(c_min):
                    continue
                vals[i, j] = max(min(vals[i, j], c_max), c_min)
                conf[i, j] = True
                unrel[i, j] = False
                changed = True
        if not changed:
            break
    return vals, class_mask


Segmenter = Callable[[np.ndarray], np.ndarray]


def refine_depth_full(depth: np.ndarray, y_refined: np.ndarray,
                      img_target: np.ndarray, img_source: np.ndarray,
                      pose: geometry.Pose, cam: geometry.Camera,
                      segmenter: Segmenter,
                      cfg: RefineConfig = RefineConfig(),
                      classes: ClassSet | Sequence[int] | None = None,
                      impl: str = "parallel") -> np.ndarray:
    """Full depth refinement pass: warp the source view, segment both views,
    split by consistency, then propagate confident depth per class."""
    depth = np.asarray(depth, dtype=np.float64)
    warped, valid = geometry.warp(img_source, depth, pose, cam)
    y_t = np.asarray(segmenter(img_target))
    y_st = np.asarray(segmenter(warped))
    if y_t.shape != depth.shape or y_st.shape != depth.shape:
        raise RefineError("segmenter output shape mismatch")
    if classes is None:
        classes = ClassSet(tuple(int(c) for c in np.unique(y_refined)))
    states = split_confidence_by_consistency(depth, y_refined, y_t, y_st,
                                             valid, classes)
    return refine_depth_with_segmentation(depth, states, cfg, impl=impl)
