"""Motion-consistency grid graphs and the normalized adjacencies the encoders consume."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .consistency import SnippetWindow, snippet_features
from .flowio import ScaleSpec

SPATIAL, TEMPORAL = 0, 1
_CHANNELS = {"spatial": SPATIAL, "temporal": TEMPORAL, SPATIAL: SPATIAL, TEMPORAL: TEMPORAL}


def map_edge_weights(edge_features: np.ndarray, D: int = 8) -> np.ndarray:
    """Map raw ``[gamma_sp, gamma_tp]`` edge features onto ``[0, 1]^2``.

    The signed spatial term is shifted affinely from ``[-1, 1]``; the temporal
    mutual information is divided by its ceiling ``ln D``.
    """
    e = np.asarray(edge_features, dtype=np.float64)
    out = np.empty_like(e)
    out[..., 0] = (e[..., 0] + 1.0) / 2.0
    out[..., 1] = e[..., 1] / math.log(D)
    return np.clip(out, 0.0, 1.0)


def unmap_edge_weights(mapped: np.ndarray, D: int = 8) -> np.ndarray:
    m = np.asarray(mapped, dtype=np.float64)
    out = np.empty_like(m)
    out[..., 0] = 2.0 * m[..., 0] - 1.0
    out[..., 1] = m[..., 1] * math.log(D)
    return out


@dataclass
class MotionGraph:
    spec: ScaleSpec
    end_frame: int
    node_features: np.ndarray  # (N, 2): omega_sp, omega_tp
    edges: np.ndarray  # (E, 2), i < j
    edge_features: np.ndarray  # (E, 2): gamma_sp, gamma_tp, raw
    targets: np.ndarray  # (E, 2), mapped into [0, 1]
    D: int = 8

    @property
    def n_nodes(self) -> int:
        return self.node_features.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    def to_dict(self) -> dict:
        return {
            "scale": self.spec.to_dict(),
            "regions_w": self.spec.regions_w,
            "regions_h": self.spec.regions_h,
            "D": self.D,
            "node_features": self.node_features.tolist(),
            "edges": self.edges.tolist(),
            "edge_raw": self.edge_features.tolist(),
            "edge_mapped": self.targets.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict, end_frame: int) -> "MotionGraph":
        spec = ScaleSpec(**d["scale"])
        nodes = np.asarray(d["node_features"], dtype=np.float64).reshape(-1, 2)
        edges = np.asarray(d["edges"], dtype=np.int64).reshape(-1, 2)
        raw = np.asarray(d["edge_raw"], dtype=np.float64).reshape(-1, 2)
        mapped = np.asarray(d["edge_mapped"], dtype=np.float64).reshape(-1, 2)
        if nodes.shape[0] != spec.n_regions:
            raise ValueError(f"graph has {nodes.shape[0]} nodes, its scale implies {spec.n_regions}")
        return cls(spec, end_frame, nodes, edges, raw, mapped, int(d["D"]))


def build_graph(snapshot) -> MotionGraph:
    nodes = np.stack([snapshot.omega_sp, snapshot.omega_tp], axis=1)
    raw = np.stack([snapshot.gamma_sp, snapshot.gamma_tp], axis=1)
    return MotionGraph(
        snapshot.spec,
        snapshot.end_frame,
        nodes,
        snapshot.edges.copy(),
        raw,
        map_edge_weights(raw, snapshot.D),
        snapshot.D,
    )


def normalized_adjacency(graph: MotionGraph, channel="spatial") -> np.ndarray:
    """Dense ``D^-1/2 (A + I) D^-1/2`` with the chosen mapped edge channel as weights."""
    c = _CHANNELS[channel]
    return normalize_weights(graph.n_nodes, graph.edges, graph.targets[:, c])


def normalize_weights(n: int, edges: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Symmetric normalization of one or a batch (``weights`` of shape ``(..., E)``) of graphs."""
    weights = np.asarray(weights, dtype=np.float64)
    a = np.zeros(weights.shape[:-1] + (n, n))
    a[..., edges[:, 0], edges[:, 1]] = weights
    a[..., edges[:, 1], edges[:, 0]] = weights
    idx = np.arange(n)
    a[..., idx, idx] += 1.0
    d = 1.0 / np.sqrt(a.sum(axis=-1))
    # outer product first keeps the result exactly symmetric
    return a * (d[..., :, None] * d[..., None, :])


@dataclass
class MultiScaleGraphSet:
    end_frame: int
    graphs: list  # MotionGraph per configured scale, in config order

    def to_dict(self) -> dict:
        return {"end_frame": self.end_frame, "graphs": [g.to_dict() for g in self.graphs]}

    @classmethod
    def from_dict(cls, d: dict) -> "MultiScaleGraphSet":
        t = int(d["end_frame"])
        return cls(t, [MotionGraph.from_dict(g, t) for g in d["graphs"]])


def build_msmc(
    window: SnippetWindow,
    specs,
    D: int = 8,
    eps_static: float = 1e-3,
    connectivity: int = 4,
) -> MultiScaleGraphSet:
    graphs = [build_graph(snippet_features(window, s, D, eps_static, connectivity)) for s in specs]
    return MultiScaleGraphSet(window.end_frame, graphs)


def write_graph_dump(path, header: dict, graph_sets) -> None:
    """JSON Lines: a header record followed by one record per snippet."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"kind": "header", **header}) + "\n")
        for gs in graph_sets:
            fh.write(json.dumps({"kind": "snippet", **gs.to_dict()}) + "\n")


def read_graph_dump(path) -> tuple[dict, list[MultiScaleGraphSet]]:
    header = None
    sets = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            kind = rec.pop("kind", None)
            if kind == "header":
                header = rec
            elif kind == "snippet":
                sets.append(MultiScaleGraphSet.from_dict(rec))
            else:
                raise ValueError(f"{path}:{lineno}: unknown record kind {kind!r}")
    if header is None:
        raise ValueError(f"{path}: missing header record")
    return header, sets


def extract_sequence(
    frames: np.ndarray,
    specs,
    m: int = 20,
    tau: int = 1,
    D: int = 8,
    eps_static: float = 1e-3,
    connectivity: int = 4,
) -> list[MultiScaleGraphSet]:
    """Graph sets for every sliding snippet of a ``(T, H, W, 2)`` flow stack."""
    from .consistency import sliding_windows

    windows = sliding_windows(frames, m, tau, specs)
    return [build_msmc(w, specs, D, eps_static, connectivity) for w in windows]
