"""Spatial and temporal crowd-motion consistency over frames and sliding snippets.

All entropies and mutual informations are in nats. Static vectors (magnitude
below ``eps_static``) never enter a direction histogram.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .flowio import STATIC, ScaleSpec, quantize_directions, region_means


def _entropy_rows(counts: np.ndarray) -> np.ndarray:
    """Shannon entropy (nats) of each row of a count matrix; all-zero rows give 0."""
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum(axis=-1, keepdims=True)
    p = np.divide(counts, total, out=np.zeros_like(counts), where=total > 0)
    logp = np.log(p, out=np.zeros_like(p), where=p > 0)
    return np.maximum(-(p * logp).sum(axis=-1), 0.0)


def _mutual_info_tables(joint: np.ndarray) -> np.ndarray:
    """Plug-in mutual information of each ``(..., D, D)`` joint count table."""
    joint = np.asarray(joint, dtype=np.float64)
    total = joint.sum(axis=(-2, -1), keepdims=True)
    pxy = np.divide(joint, total, out=np.zeros_like(joint), where=total > 0)
    px = pxy.sum(axis=-1, keepdims=True)
    py = pxy.sum(axis=-2, keepdims=True)
    denom = px * py
    ratio = np.divide(pxy, denom, out=np.ones_like(pxy), where=pxy > 0)
    return np.maximum((pxy * np.log(ratio)).sum(axis=(-2, -1)), 0.0)


def spatial_inner(vectors: np.ndarray, D: int = 8, eps_static: float = 1e-3) -> float:
    vectors = np.asarray(vectors, dtype=np.float64).reshape(-1, 2)
    if vectors.shape[0] == 0:
        raise ValueError("empty region")
    classes = quantize_directions(vectors, D, eps_static)
    counts = np.bincount(classes[classes != STATIC], minlength=D)
    return float(_entropy_rows(counts))


def spatial_inter(vi, vj, eps_static: float = 1e-3) -> float:
    vi = np.asarray(vi, dtype=np.float64)
    vj = np.asarray(vj, dtype=np.float64)
    return float(_spatial_inter_arrays(vi[None], vj[None], eps_static)[0])


def _spatial_inter_arrays(vi: np.ndarray, vj: np.ndarray, eps_static: float) -> np.ndarray:
    ni = np.hypot(vi[..., 0], vi[..., 1])
    nj = np.hypot(vj[..., 0], vj[..., 1])
    si, sj = ni < eps_static, nj < eps_static
    ok = ~(si | sj)
    safe_i = np.where(ok, ni, 1.0)
    safe_j = np.where(ok, nj, 1.0)
    cos = (vi * vj).sum(axis=-1) / (safe_i * safe_j)
    adjusted = np.clip(cos, -1.0, 1.0) * (1.0 - np.abs(safe_i - safe_j) / (safe_i + safe_j))
    out = np.where(ok, adjusted, 0.0)
    return np.where(si & sj, 1.0, out)


def temporal_inner(history: np.ndarray, D: int = 8, eps_static: float = 1e-3, m: int | None = None) -> float:
    history = np.asarray(history, dtype=np.float64).reshape(-1, 2)
    if history.shape[0] < 2 or (m is not None and history.shape[0] != m):
        raise ValueError(f"history has {history.shape[0]} entries, expected {m or '>= 2'}")
    classes = quantize_directions(history, D, eps_static)
    counts = np.bincount(classes[classes != STATIC], minlength=D)
    return float(_entropy_rows(counts))


def temporal_inter(history_i: np.ndarray, history_j: np.ndarray, D: int = 8, eps_static: float = 1e-3) -> float:
    ci = quantize_directions(np.asarray(history_i, dtype=np.float64).reshape(-1, 2), D, eps_static)
    cj = quantize_directions(np.asarray(history_j, dtype=np.float64).reshape(-1, 2), D, eps_static)
    if ci.shape != cj.shape:
        raise ValueError(f"history lengths differ: {ci.shape[0]} vs {cj.shape[0]}")
    if ci.shape[0] < 2:
        raise ValueError("histories need at least 2 entries")
    return float(_temporal_inter_classes(ci[:, None], cj[:, None], D)[0])


def _temporal_inter_classes(ci: np.ndarray, cj: np.ndarray, D: int) -> np.ndarray:
    """MI per column of two ``(m, E)`` class arrays, dropping rows where either is static."""
    m, n_edges = ci.shape
    valid = (ci != STATIC) & (cj != STATIC)
    flat = (np.arange(n_edges)[None, :] * D + ci) * D + cj
    joint = np.bincount(flat[valid], minlength=n_edges * D * D).reshape(n_edges, D, D)
    mi = _mutual_info_tables(joint)
    return np.where(valid.sum(axis=0) >= 2, mi, 0.0)


def grid_edges(regions_w: int, regions_h: int, connectivity: int = 4) -> np.ndarray:
    """Undirected edges ``(E, 2)`` of a row-major region grid, each stored once with ``i < j``."""
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    idx = np.arange(regions_w * regions_h).reshape(regions_h, regions_w)
    pairs = [
        np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], axis=1),
        np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()], axis=1),
    ]
    if connectivity == 8:
        pairs.append(np.stack([idx[:-1, :-1].ravel(), idx[1:, 1:].ravel()], axis=1))
        pairs.append(np.stack([idx[:-1, 1:].ravel(), idx[1:, :-1].ravel()], axis=1))
    edges = np.concatenate(pairs, axis=0)
    return np.sort(edges, axis=1).astype(np.int64)


@dataclass
class SnippetWindow:
    """``m`` consecutive raw frames ending at ``end_frame`` (0-based, inclusive).

    ``grids`` caches region-mean stacks ``(m, regions_h, regions_w, 2)`` keyed by
    ScaleSpec so a sequence can share precomputed means between windows.
    """

    end_frame: int
    frames: np.ndarray
    tau: int = 1
    grids: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.frames.ndim != 4 or self.frames.shape[0] < 2:
            raise ValueError(f"a snippet needs m >= 2 frames, got shape {self.frames.shape}")
        if self.tau < 1:
            raise ValueError(f"slide step must be >= 1, got {self.tau}")

    @property
    def m(self) -> int:
        return self.frames.shape[0]

    def grid(self, spec: ScaleSpec) -> np.ndarray:
        if spec not in self.grids:
            self.grids[spec] = region_means(self.frames, spec)
        return self.grids[spec]


def sliding_windows(frames: np.ndarray, m: int, tau: int = 1, specs=()) -> list[SnippetWindow]:
    """Every snippet of ``m`` frames stepping by ``tau``; the first ends at frame ``m - 1``."""
    if m < 2:
        raise ValueError(f"snippet length m must be >= 2, got {m}")
    if tau < 1:
        raise ValueError(f"slide step must be >= 1, got {tau}")
    T = frames.shape[0]
    if T < m:
        raise ValueError(f"sequence has {T} frames, shorter than snippet length {m}")
    cached = {spec: region_means(frames, spec) for spec in specs}
    windows = []
    for end in range(m - 1, T, tau):
        lo = end - m + 1
        grids = {s: g[lo:end + 1] for s, g in cached.items()}
        windows.append(SnippetWindow(end, frames[lo:end + 1], tau, grids))
    return windows


@dataclass
class ConsistencySnapshot:
    spec: ScaleSpec
    end_frame: int
    omega_sp: np.ndarray  # (N,)
    omega_tp: np.ndarray  # (N,)
    edges: np.ndarray  # (E, 2)
    gamma_sp: np.ndarray  # (E,)
    gamma_tp: np.ndarray  # (E,)
    D: int


def snippet_features(
    window: SnippetWindow,
    spec: ScaleSpec,
    D: int = 8,
    eps_static: float = 1e-3,
    connectivity: int = 4,
) -> ConsistencySnapshot:
    grids = window.grid(spec)
    n = spec.n_regions
    means = grids.reshape(window.m, n, 2)
    edges = grid_edges(spec.regions_w, spec.regions_h, connectivity)

    # spatial terms use only the snippet's last frame
    last = window.frames[-1]
    pixel_cls = quantize_directions(last, D, eps_static).ravel()
    region = spec.region_index_map().ravel()
    keep = pixel_cls != STATIC
    counts = np.bincount(region[keep] * D + pixel_cls[keep], minlength=n * D).reshape(n, D)
    omega_sp = _entropy_rows(counts)
    gamma_sp = _spatial_inter_arrays(means[-1, edges[:, 0]], means[-1, edges[:, 1]], eps_static)

    cls = quantize_directions(means, D, eps_static)  # (m, N)
    flat = np.arange(n)[None, :] * D + cls
    tcounts = np.bincount(flat[cls != STATIC], minlength=n * D).reshape(n, D)
    omega_tp = _entropy_rows(tcounts)
    gamma_tp = _temporal_inter_classes(cls[:, edges[:, 0]], cls[:, edges[:, 1]], D)

    return ConsistencySnapshot(spec, window.end_frame, omega_sp, omega_tp, edges, gamma_sp, gamma_tp, D)
