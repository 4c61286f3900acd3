from __future__ import annotations

import numpy as np
import pytest

from crowdmotion.consistency import sliding_windows, snippet_features, temporal_inner
from crowdmotion.flowio import build_scale_specs, region_means
from crowdmotion.graphs import extract_sequence
from crowdmotion.synth import ScenarioConfig, Segment, gen_benchmark, gen_escape, parse_segments


def test_noiseless_laminar_is_exact():
    seq, labels = gen_benchmark(ScenarioConfig(20, 10, 1.5, 0.0, 0, [Segment("laminar", 20)]))
    assert (seq.frames[..., 0] == 1.5).all() and (seq.frames[..., 1] == 0).all()
    assert (labels == 0).all()


def test_noiseless_counter_flow_seam():
    seq, labels = gen_benchmark(ScenarioConfig(32, 32, 2.0, 0.0, 0, [Segment("counter_flow", 20)]))
    assert (labels == 1).all()
    specs = build_scale_specs(32, 32, 8, [1])
    snap = snippet_features(sliding_windows(seq.frames, 20, 1, specs)[0], specs[0])
    rows = snap.edges // specs[0].regions_w
    seam = (rows[:, 0] == 1) & (rows[:, 1] == 2)
    assert seam.any() and (snap.gamma_sp[seam] == -1).all()
    assert (snap.gamma_sp[~seam] == 1).all()


def test_noiseless_turbulence_has_temporal_entropy_everywhere():
    cfg = ScenarioConfig(32, 24, 2.0, 0.0, 3, [Segment("turbulence", 60)])
    seq, _ = gen_benchmark(cfg)
    spec = build_scale_specs(32, 24, 8, [1])[0]
    means = region_means(seq.frames, spec)
    for start in range(0, 41, 5):
        window = means[start:start + 20]
        for r in range(spec.regions_h):
            for c in range(spec.regions_w):
                assert temporal_inner(window[:, r, c], 8) > 0


def test_escape_is_radial_and_zero_at_centre():
    cfg = ScenarioConfig(5, 5, 2.0, 0.0, 0, [Segment("escape", 20)])
    f = gen_escape(cfg, 1, np.random.default_rng(0))[0]
    np.testing.assert_array_equal(f[2, 2], [0.0, 0.0])
    np.testing.assert_allclose(f[2, 4], [2.0, 0.0])
    np.testing.assert_allclose(f[0, 2], [0.0, -2.0])
    np.testing.assert_allclose(np.hypot(f[..., 0], f[..., 1])[np.arange(5) != 2][:, 0], 2.0)


def test_turbulence_speed_band():
    cfg = ScenarioConfig(16, 16, 2.0, 0.0, 1, [Segment("turbulence", 40)])
    seq, _ = gen_benchmark(cfg)
    speed = np.hypot(seq.frames[..., 0], seq.frames[..., 1])
    assert speed.min() >= 0.2 * 2.0 - 1e-12 and speed.max() <= 2.0 + 1e-12


def test_same_seed_same_sequence_and_segment_independence():
    segs = [Segment("laminar", 20), Segment("turbulence", 25)]
    a, la = gen_benchmark(ScenarioConfig(12, 8, 1.0, None, 5, segs))
    b, lb = gen_benchmark(ScenarioConfig(12, 8, 1.0, None, 5, segs))
    assert a.frames.tobytes() == b.frames.tobytes()
    np.testing.assert_array_equal(la, [0] * 20 + [1] * 25)
    c, _ = gen_benchmark(ScenarioConfig(12, 8, 1.0, None, 6, segs))
    assert not np.array_equal(a.frames, c.frames)


def test_default_noise_is_five_percent_of_speed():
    cfg = ScenarioConfig(64, 64, 2.0, None, 0, [Segment("laminar", 20)])
    seq, _ = gen_benchmark(cfg)
    assert abs(seq.frames[..., 1].std() - 0.1) < 0.005


def test_invalid_plans():
    with pytest.raises(ValueError):
        Segment("stampede", 30)
    with pytest.raises(ValueError):
        Segment("laminar", 30, label=1)
    with pytest.raises(ValueError):
        ScenarioConfig(segments=[Segment("laminar", 5)])
    with pytest.raises(ValueError):
        ScenarioConfig(sigma=-1.0)
    with pytest.raises(ValueError):
        ScenarioConfig(segments=[])
    with pytest.raises(ValueError):
        parse_segments("laminar")


def test_parse_segments():
    segs = parse_segments("laminar:300, counter_flow:200")
    assert [(s.behaviour, s.frames, s.label) for s in segs] == [("laminar", 300, 0), ("counter_flow", 200, 1)]


def test_turbulence_more_temporally_inconsistent_than_laminar():
    cfg = ScenarioConfig(48, 32, 2.0, 0.2, 4, [Segment("laminar", 40), Segment("turbulence", 40)])
    seq, labels = gen_benchmark(cfg)
    sets = extract_sequence(seq.frames, build_scale_specs(48, 32, 8, [1]), m=20)
    end = np.array([s.end_frame for s in sets])
    omega_tp = np.array([s.graphs[0].node_features[:, 1].mean() for s in sets])
    lam = omega_tp[end < 40]
    tur = omega_tp[end >= 59]  # snippets fully inside the turbulence segment
    assert tur.mean() > lam.mean()
