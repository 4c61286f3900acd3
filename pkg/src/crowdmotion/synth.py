"""Labelled synthetic flow: laminar walking, counter flow, radial escape, turbulence.

Each segment draws from its own generator spawned from the scenario seed, so
a segment's content does not depend on what precedes it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .flowio import FlowSequence

BEHAVIOURS = ("laminar", "counter_flow", "escape", "turbulence")
NORMAL = {"laminar"}


@dataclass
class Segment:
    behaviour: str
    frames: int
    label: int | None = None

    def __post_init__(self) -> None:
        if self.behaviour not in BEHAVIOURS:
            raise ValueError(f"unknown behaviour {self.behaviour!r}; expected one of {BEHAVIOURS}")
        expected = 0 if self.behaviour in NORMAL else 1
        if self.label is None:
            self.label = expected
        elif self.label != expected:
            raise ValueError(f"{self.behaviour} segments are labelled {expected}, got {self.label}")


@dataclass
class ScenarioConfig:
    width: int = 96
    height: int = 64
    speed: float = 2.0
    sigma: float | None = None  # px/frame; None means 5% of speed
    seed: int = 0
    segments: list = field(default_factory=lambda: [Segment("laminar", 200)])
    turbulence_period: int = 3  # frames between direction resamples
    turbulence_cell: int = 8  # px
    pulse_period: int = 12  # frames per magnitude pulse
    min_duration: int = 20  # usually the snippet length m

    def __post_init__(self) -> None:
        self.segments = [s if isinstance(s, Segment) else Segment(*s) for s in self.segments]
        if self.width < 1 or self.height < 1:
            raise ValueError(f"bad frame size {self.width}x{self.height}")
        if self.speed <= 0:
            raise ValueError(f"speed must be positive, got {self.speed}")
        if self.noise < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if not self.segments:
            raise ValueError("segment plan is empty")
        for s in self.segments:
            if s.frames < self.min_duration:
                raise ValueError(f"{s.behaviour} segment of {s.frames} frames is shorter than {self.min_duration}")
        if self.turbulence_period < 1 or self.turbulence_cell < 1 or self.pulse_period < 1:
            raise ValueError("turbulence period, cell and pulse period must be >= 1")

    @property
    def noise(self) -> float:
        return 0.05 * self.speed if self.sigma is None else self.sigma


def parse_segments(text: str) -> list[Segment]:
    """``"laminar:300,counter_flow:200"`` -> segments."""
    out = []
    for item in text.split(","):
        name, _, n = item.strip().partition(":")
        if not n:
            raise ValueError(f"segment {item!r} is not behaviour:frames")
        out.append(Segment(name.strip(), int(n)))
    return out


def _noise(cfg: ScenarioConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    shape = (n, cfg.height, cfg.width, 2)
    if cfg.noise == 0:
        return np.zeros(shape)
    return rng.normal(0.0, cfg.noise, size=shape)


def gen_laminar(cfg: ScenarioConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    flow = _noise(cfg, n, rng)
    flow[..., 0] += cfg.speed
    return flow


def gen_counter_flow(cfg: ScenarioConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    flow = _noise(cfg, n, rng)
    half = cfg.height // 2
    flow[:, :half, :, 0] += cfg.speed
    flow[:, half:, :, 0] -= cfg.speed
    return flow


def gen_escape(cfg: ScenarioConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    flow = _noise(cfg, n, rng)
    cy, cx = (cfg.height - 1) / 2.0, (cfg.width - 1) / 2.0
    dy, dx = np.mgrid[0:cfg.height, 0:cfg.width].astype(np.float64)
    dy -= cy
    dx -= cx
    r = np.hypot(dx, dy)
    safe = np.where(r > 0, r, 1.0)
    flow[..., 0] += np.where(r > 0, cfg.speed * dx / safe, 0.0)
    flow[..., 1] += np.where(r > 0, cfg.speed * dy / safe, 0.0)
    return flow


def gen_turbulence(cfg: ScenarioConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    """Per-cell headings redrawn every ``turbulence_period`` frames, speed pulsing in [0.2v, v]."""
    cell = cfg.turbulence_cell
    ch = -(-cfg.height // cell)
    cw = -(-cfg.width // cell)
    n_draws = -(-n // cfg.turbulence_period)
    angles = rng.uniform(-np.pi, np.pi, size=(n_draws, ch, cw))
    phase = rng.uniform(0.0, 2 * np.pi, size=(ch, cw))
    t = np.arange(n)
    pulse = 0.6 + 0.4 * np.sin(2 * np.pi * t[:, None, None] / cfg.pulse_period + phase[None])
    theta = angles[t // cfg.turbulence_period]
    mag = cfg.speed * pulse
    cells = np.stack([mag * np.cos(theta), mag * np.sin(theta)], axis=-1)  # (n, ch, cw, 2)
    ry = np.arange(cfg.height) // cell
    rx = np.arange(cfg.width) // cell
    flow = cells[:, ry][:, :, rx]
    return flow + _noise(cfg, n, rng)


GENERATORS = {
    "laminar": gen_laminar,
    "counter_flow": gen_counter_flow,
    "escape": gen_escape,
    "turbulence": gen_turbulence,
}


def gen_benchmark(cfg: ScenarioConfig) -> tuple[FlowSequence, np.ndarray]:
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(cfg.segments))
    parts, labels = [], []
    for seg, ss in zip(cfg.segments, seeds):
        rng = np.random.default_rng(ss)
        parts.append(GENERATORS[seg.behaviour](cfg, seg.frames, rng))
        labels.append(np.full(seg.frames, seg.label, dtype=np.int64))
    return FlowSequence(np.concatenate(parts)), np.concatenate(labels)
