"""Multi-scale motion-consistency network.

Per scale, two GCNs (one per edge channel) encode the graph; embeddings are
unpooled to the 1x grid, fused across scales with per-position attention,
pooled back, and decoded into edges with an inner product. Every function
accepts a leading batch axis on node/edge tensors.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .flowio import ScaleSpec
from .graphs import MultiScaleGraphSet, normalize_weights

CHANNELS = ("spatial", "temporal")


@dataclass(frozen=True)
class NetConfig:
    scale_factors: tuple = (1, 2, 4)
    hidden_dim: int = 32
    embed_dim: int = 16  # C; node embeddings are 2C wide
    attn_dim: int = 32  # query/key width
    gcn_bias: bool = True
    bias_init: float = 0.1
    lambda_fus: float = 1.0
    lambda_aux: float = 1.0
    lambda_sof: float = 1.0

    @property
    def n_scales(self) -> int:
        return len(self.scale_factors)


def init_params(cfg: NetConfig, seed: int = 42) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases, drawn in a fixed order from ``seed``."""
    rng = np.random.default_rng(seed)

    def glorot(fan_in, fan_out, shape):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=shape)

    params = {}
    h, c = cfg.hidden_dim, cfg.embed_dim
    for k in range(cfg.n_scales):
        for ch in CHANNELS:
            params[f"enc.{k}.{ch}.w1"] = glorot(2, h, (2, h))
            params[f"enc.{k}.{ch}.w2"] = glorot(h, c, (h, c))
            if cfg.gcn_bias:
                params[f"enc.{k}.{ch}.b1"] = np.full(h, cfg.bias_init)
                params[f"enc.{k}.{ch}.b2"] = np.zeros(c)
    params["attn.query"] = glorot(2 * c, cfg.attn_dim, (cfg.attn_dim, 2 * c))
    params["attn.key"] = glorot(2 * c, cfg.attn_dim, (cfg.attn_dim, 2 * c))
    params["attn.value"] = glorot(2 * c, 2 * c, (2 * c, 2 * c))
    return params


def encoder_names(params: dict, k: int) -> list[str]:
    return [n for n in params if n.startswith(f"enc.{k}.")]


# --------------------------------------------------------------------------
# batching


@dataclass
class ScaleBatch:
    spec: ScaleSpec
    edges: np.ndarray  # (E, 2), shared topology
    x: np.ndarray  # (B, N, 2)
    adj: dict  # channel -> (B, N, N)
    targets: np.ndarray  # (B, E, 2)
    owner: np.ndarray  # (N1,) index of the sx region owning each 1x cell
    pool: np.ndarray  # (N, N1) block-mean matrix


def unpool_index(spec: ScaleSpec) -> np.ndarray:
    """For each 1x cell (row-major) the row-major index of its sx region."""
    s = spec.scale_factor
    r = np.arange(spec.base_regions_h) // s
    c = np.arange(spec.base_regions_w) // s
    return (r[:, None] * spec.regions_w + c[None, :]).ravel()


def pool_matrix(spec: ScaleSpec) -> np.ndarray:
    owner = unpool_index(spec)
    p = np.zeros((spec.n_regions, owner.size))
    p[owner, np.arange(owner.size)] = 1.0
    return p / p.sum(axis=1, keepdims=True)


def make_batch(graph_sets) -> list[ScaleBatch]:
    graph_sets = list(graph_sets)
    if not graph_sets:
        raise ValueError("empty batch")
    first = graph_sets[0]
    out = []
    for k, g0 in enumerate(first.graphs):
        gs = [s.graphs[k] for s in graph_sets]
        for g in gs:
            if g.spec != g0.spec or g.edges.shape != g0.edges.shape or not np.array_equal(g.edges, g0.edges):
                raise ValueError("graph sets in one batch must share scales and topology")
        targets = np.stack([g.targets for g in gs])
        n = g0.n_nodes
        adj = {ch: normalize_weights(n, g0.edges, targets[:, :, i]) for i, ch in enumerate(CHANNELS)}
        out.append(
            ScaleBatch(
                spec=g0.spec,
                edges=g0.edges,
                x=np.stack([g.node_features for g in gs]),
                adj=adj,
                targets=targets,
                owner=unpool_index(g0.spec),
                pool=pool_matrix(g0.spec),
            )
        )
    return out


# --------------------------------------------------------------------------
# network pieces


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def gcn_forward(x, adj: dict, enc: dict) -> Tensor:
    """Two 2-layer GCNs, one per edge channel, concatenated to width ``2C``.

    ``enc`` maps ``"{channel}.w1"`` etc. to parameters.
    """
    x = _t(x)
    halves = []
    for ch in CHANNELS:
        a = _t(adj[ch])
        h = a @ (x @ _t(enc[f"{ch}.w1"]))
        if f"{ch}.b1" in enc:
            h = h + _t(enc[f"{ch}.b1"])
        h = ad.relu(h)
        h = a @ (h @ _t(enc[f"{ch}.w2"]))
        if f"{ch}.b2" in enc:
            h = h + _t(enc[f"{ch}.b2"])
        halves.append(h)
    return ad.concat(halves, axis=-1)


def unpool_nearest(z, spec: ScaleSpec) -> Tensor:
    return ad.take(_t(z), unpool_index(spec), axis=-2)


def pool_to_scale(x, spec: ScaleSpec) -> Tensor:
    """Block-mean a 1x-grid tensor (nodes on axis -2) down to ``spec``'s grid."""
    return _t(pool_matrix(spec)) @ _t(x)


def attention_fuse(z_unified, query, key, value):
    """Per-position softmax over scales of cos(query z, key z); returns fused vectors,
    normalized weights ``(..., S, N1)`` and raw logits."""
    query, key, value = _t(query), _t(key), _t(value)
    logits = []
    values = []
    for z in z_unified:
        z = _t(z)
        logits.append(ad.cosine(z @ query.T, z @ key.T, axis=-1))
        values.append(z @ value.T)
    logits = ad.stack(logits, axis=-2)
    weights = ad.softmax(logits, axis=-2)
    fused = None
    for s, v in enumerate(values):
        term = ad.take(weights, [s], axis=-2).T * v  # (..., N1, 1) * (..., N1, 2C)
        fused = term if fused is None else fused + term
    return fused, weights, logits


def decode_edges(z, edges: np.ndarray, C: int) -> Tensor:
    """Inner-product decoder: spatial half of the embedding for channel 0, temporal half for 1."""
    z = _t(z)
    prod = ad.take(z, edges[:, 0], axis=-2) * ad.take(z, edges[:, 1], axis=-2)
    sp = prod[..., :C].sum(axis=-1)
    tp = prod[..., C:].sum(axis=-1)
    return ad.sigmoid(ad.stack([sp, tp], axis=-1))


def edge_residuals(targets, e_hat) -> Tensor:
    return ad.norm(_t(targets) - e_hat, axis=-1)


def fusion_loss(batches, e_hat, attn_pooled) -> Tensor:
    """Attention-weighted edge reconstruction error summed over scales, per sample."""
    total = None
    for sb, eh, a in zip(batches, e_hat, attn_pooled):
        w = ad.take(a, sb.edges[:, 0], axis=-1) * ad.take(a, sb.edges[:, 1], axis=-1)
        term = (w * edge_residuals(sb.targets, eh)).sum(axis=-1) * (1.0 / sb.spec.n_regions)
        total = term if total is None else total + term
    return total


def aux_loss(sb: ScaleBatch, e_aux) -> Tensor:
    return edge_residuals(sb.targets, e_aux).sum(axis=-1)


def soft_sharing_losses(tparams: dict, n_scales: int) -> dict:
    """``||W^a - W^b||`` over flattened encoder parameters for each pair ``a < b``."""
    out = {}
    for a, b in itertools.combinations(range(n_scales), 2):
        names_a = sorted(encoder_names(tparams, a))
        names_b = sorted(encoder_names(tparams, b))
        suffix_a = [n.split(".", 2)[2] for n in names_a]
        suffix_b = [n.split(".", 2)[2] for n in names_b]
        if suffix_a != suffix_b:
            raise ValueError(f"encoders {a} and {b} have different parameter sets")
        diffs = []
        for na, nb in zip(names_a, names_b):
            pa, pb = _t(tparams[na]), _t(tparams[nb])
            if pa.shape != pb.shape:
                raise ValueError(f"{na} {pa.shape} and {nb} {pb.shape} differ in shape")
            d = pa - pb
            diffs.append((d * d).sum())
        sq = diffs[0]
        for d in diffs[1:]:
            sq = sq + d
        out[(a, b)] = _sqrt(sq)
    return out


def _sqrt(x: Tensor) -> Tensor:
    # gradient defined as 0 at 0, matching ad.norm
    r = np.sqrt(x.data)
    safe = np.where(r > 0, r, 1.0)
    return ad._node(r, (x,), lambda g: (np.where(r > 0, g * 0.5 / safe, 0.0),))


@dataclass
class Forward:
    z: list  # per scale (B, N_s, 2C)
    z_unified: list  # per scale (B, N1, 2C)
    logits: Tensor  # (B, S, N1)
    weights: Tensor  # (B, S, N1)
    z_fus: Tensor  # (B, N1, 2C)
    z_fus_pooled: list
    attn_pooled: list  # per scale (B, N_s)
    e_hat: list  # per scale (B, E_s, 2)
    e_aux: list


def forward_reconstruct(batches, tparams: dict, cfg: NetConfig) -> Forward:
    C = cfg.embed_dim
    z, zu = [], []
    for k, sb in enumerate(batches):
        enc = {n.split(".", 2)[2]: p for n, p in tparams.items() if n.startswith(f"enc.{k}.")}
        zk = gcn_forward(sb.x, sb.adj, enc)
        z.append(zk)
        zu.append(ad.take(zk, sb.owner, axis=-2))
    z_fus, weights, logits = attention_fuse(zu, tparams["attn.query"], tparams["attn.key"], tparams["attn.value"])
    z_pooled, a_pooled, e_hat, e_aux = [], [], [], []
    for k, sb in enumerate(batches):
        p = Tensor(sb.pool)
        a_s = ad.take(weights, [k], axis=-2)  # (B, 1, N1)
        a_pooled.append((a_s @ p.T)[..., 0, :])
        zf = p @ z_fus
        z_pooled.append(zf)
        e_hat.append(decode_edges(zf, sb.edges, C))
        e_aux.append(decode_edges(z[k], sb.edges, C))
    return Forward(z, zu, logits, weights, z_fus, z_pooled, a_pooled, e_hat, e_aux)


@dataclass
class LossReport:
    fus: float
    aux: list
    sof: dict
    total: float
    lambda_fus: float
    lambda_aux: float
    lambda_sof: float
    per_sample_fus: np.ndarray


def compute_loss(batches, tparams: dict, cfg: NetConfig):
    """Batch-mean objective as a Tensor, plus its LossReport and the forward pass."""
    fw = forward_reconstruct(batches, tparams, cfg)
    l_fus = fusion_loss(batches, fw.e_hat, fw.attn_pooled)  # (B,)
    l_aux = [aux_loss(sb, ea) for sb, ea in zip(batches, fw.e_aux)]
    l_sof = soft_sharing_losses(tparams, cfg.n_scales)
    per_sample = cfg.lambda_fus * l_fus
    for la in l_aux:
        per_sample = per_sample + cfg.lambda_aux * la
    total = ad.mean(per_sample)
    for v in l_sof.values():
        total = total + cfg.lambda_sof * v
    report = LossReport(
        fus=float(l_fus.data.mean()),
        aux=[float(la.data.mean()) for la in l_aux],
        sof={k: float(v.data) for k, v in l_sof.items()},
        total=float(total.data),
        lambda_fus=cfg.lambda_fus,
        lambda_aux=cfg.lambda_aux,
        lambda_sof=cfg.lambda_sof,
        per_sample_fus=l_fus.data.copy(),
    )
    return total, report, fw


def as_tensors(params: dict, requires_grad: bool = True) -> dict:
    return {n: Tensor(p, requires_grad=requires_grad) for n, p in params.items()}


def loss_and_grads(params: dict, batches, cfg: NetConfig):
    tp = as_tensors(params)
    total, report, _ = compute_loss(batches, tp, cfg)
    total.backward()
    grads = {n: (t.grad if t.grad is not None else np.zeros_like(t.data)) for n, t in tp.items()}
    return report, grads


def reconstruct(graph_set: MultiScaleGraphSet, params: dict, cfg: NetConfig):
    """Unbatched convenience: fusion edges, auxiliary edges and pooled attention per scale."""
    fw = forward_reconstruct(make_batch([graph_set]), as_tensors(params, False), cfg)
    return (
        [e.data[0] for e in fw.e_hat],
        [e.data[0] for e in fw.e_aux],
        [a.data[0] for a in fw.attn_pooled],
    )


def fusion_losses(graph_sets, params: dict, cfg: NetConfig, batch_size: int = 64) -> np.ndarray:
    """Per-snippet fusion loss, in input order."""
    graph_sets = list(graph_sets)
    tp = as_tensors(params, False)
    out = []
    for i in range(0, len(graph_sets), batch_size):
        batches = make_batch(graph_sets[i:i + batch_size])
        fw = forward_reconstruct(batches, tp, cfg)
        out.append(fusion_loss(batches, fw.e_hat, fw.attn_pooled).data)
    return np.concatenate(out) if out else np.zeros(0)
