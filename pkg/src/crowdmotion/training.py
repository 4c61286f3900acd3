"""Adam training, finite-difference gradient checking and JSON checkpoints."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import NetConfig, compute_loss, as_tensors, fusion_losses, init_params, loss_and_grads, make_batch

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "crowdmotion-checkpoint/1"


class TrainingDiverged(RuntimeError):
    pass


class Adam:
    def __init__(self, lr: float = 3e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            params[name] = params[name] - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> dict:
        return {
            "t": self.t,
            "m": {k: v.tolist() for k, v in self.m.items()},
            "v": {k: v.tolist() for k, v in self.v.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        self.m = {k: np.asarray(v, dtype=np.float64) for k, v in state["m"].items()}
        self.v = {k: np.asarray(v, dtype=np.float64) for k, v in state["v"].items()}


@dataclass
class TrainConfig:
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 8
    epochs: int = 100
    # stop once the epoch loss improved by less than min_delta (relative) over `patience` epochs
    early_stop_patience: int = 10
    early_stop_min_delta: float = 0.001
    seed: int = 42


@dataclass
class TrainResult:
    params: dict
    optimizer: Adam
    fus_min: float
    fus_max: float
    history: list = field(default_factory=list)


def _check_finite(report, epoch: int, step: int) -> None:
    values = [report.total, report.fus, *report.aux, *report.sof.values()]
    if not all(math.isfinite(v) for v in values):
        raise TrainingDiverged(
            f"non-finite loss at epoch {epoch} step {step}: total={report.total} fus={report.fus} "
            f"aux={report.aux} sof={list(report.sof.values())}"
        )


def train(
    dataset,
    net: NetConfig,
    cfg: TrainConfig,
    params: dict | None = None,
    on_epoch=None,
) -> TrainResult:
    """Minimize the weighted objective with Adam over shuffled mini-batches.

    ``on_epoch`` receives each history record as it is produced.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("training set is empty")
    if params is None:
        params = init_params(net, cfg.seed)
    params = {k: v.copy() for k, v in params.items()}
    opt = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    rng = np.random.default_rng(cfg.seed)
    history = []
    n = len(dataset)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        sums = {"fus": 0.0, "aux": 0.0, "sof": 0.0, "total": 0.0}
        n_batches = 0
        for step, lo in enumerate(range(0, n, cfg.batch_size)):
            batch = make_batch(dataset[i] for i in order[lo:lo + cfg.batch_size])
            report, grads = loss_and_grads(params, batch, net)
            _check_finite(report, epoch, step)
            opt.step(params, grads)
            sums["fus"] += report.fus
            sums["aux"] += sum(report.aux)
            sums["sof"] += sum(report.sof.values())
            sums["total"] += report.total
            n_batches += 1
        record = {"epoch": epoch, **{k: v / n_batches for k, v in sums.items()}}
        history.append(record)
        log.info("epoch %d total %.6g fus %.6g aux %.6g sof %.6g", epoch, record["total"],
                 record["fus"], record["aux"], record["sof"])
        if on_epoch is not None:
            on_epoch(record)
        p = cfg.early_stop_patience
        if p > 0 and len(history) > p:
            before = history[-1 - p]["total"]
            if before - record["total"] < cfg.early_stop_min_delta * abs(before):
                log.info("early stop at epoch %d", epoch)
                break
    fus = fusion_losses(dataset, params, net)
    return TrainResult(params, opt, float(fus.min()), float(fus.max()), history)


# --------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckFailure:
    name: str
    index: tuple
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    n_checked: int
    max_rel_error: float
    failures: list

    @property
    def passed(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        lines = [
            f"gradcheck: {'PASS' if self.passed else 'FAIL'} "
            f"({self.n_checked} coordinates, max rel err {self.max_rel_error:.3e})"
        ]
        for f in self.failures:
            lines.append(
                f"  {f.name}{list(f.index)}: analytic {f.analytic:.10e} numeric {f.numeric:.10e} "
                f"rel {f.rel_error:.3e}"
            )
        return "\n".join(lines)


def grad_check(
    loss_fn,
    params: dict,
    analytic: dict,
    n_coords: int = 200,
    step: float = 1e-5,
    rtol: float = 1e-4,
    atol: float = 1e-7,
    seed: int = 0,
) -> GradCheckReport:
    """Compare ``analytic`` gradients to central differences of ``loss_fn(params)``.

    At least one coordinate is drawn from every tensor; the rest are uniform
    over all scalar parameters. A coordinate passes when its relative error is
    below ``rtol`` or its absolute error below ``atol``.
    """
    rng = np.random.default_rng(seed)
    names = list(params)
    sizes = np.array([params[n].size for n in names])
    picks = [(i, int(rng.integers(sizes[i]))) for i in range(len(names))]
    flat = rng.choice(int(sizes.sum()), size=max(0, n_coords - len(picks)), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    for f in np.sort(flat):
        i = int(np.searchsorted(offsets, f, side="right") - 1)
        picks.append((i, int(f - offsets[i])))

    work = {k: v.copy() for k, v in params.items()}
    failures = []
    max_rel = 0.0
    for i, flat_idx in picks:
        name = names[i]
        idx = np.unravel_index(flat_idx, work[name].shape)
        orig = work[name][idx]
        work[name][idx] = orig + step
        up = loss_fn(work)
        work[name][idx] = orig - step
        down = loss_fn(work)
        work[name][idx] = orig
        numeric = (up - down) / (2 * step)
        a = float(analytic[name][idx])
        err = abs(a - numeric)
        scale = max(abs(a), abs(numeric))
        rel = err / scale if scale > 0 else 0.0
        ok = rel < rtol or err < atol
        if scale > atol:
            max_rel = max(max_rel, rel)
        if not ok:
            failures.append(GradCheckFailure(name, tuple(int(j) for j in idx), a, numeric, rel))
    return GradCheckReport(len(picks), max_rel, failures)


def model_grad_check(params: dict, graph_sets, net: NetConfig, **kwargs) -> GradCheckReport:
    batches = make_batch(graph_sets)
    _, grads = loss_and_grads(params, batches, net)

    def loss_fn(p):
        total, _, _ = compute_loss(batches, as_tensors(p, False), net)
        return float(total.data)

    return grad_check(loss_fn, params, grads, **kwargs)


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, result: TrainResult, config: dict, extra: dict | None = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "config": config,
        "params": {k: v.tolist() for k, v in result.params.items()},
        "optimizer": result.optimizer.state_dict(),
        "normalizer": {"min": result.fus_min, "max": result.fus_max},
        "history": result.history,
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_checkpoint(path) -> dict:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a checkpoint (format {doc.get('format')!r})")
    doc["params"] = {k: np.asarray(v, dtype=np.float64) for k, v in doc["params"].items()}
    return doc
