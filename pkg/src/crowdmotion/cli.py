"""Command-line pipeline: synth -> extract -> train -> score -> eval, plus gradcheck.

Exit codes: 0 success, 2 config error, 3 input/output error, 4 gradient check
failure, 5 metric below threshold, 6 checkpoint or graph dump built with an
incompatible config, 1 training diverged.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import ConfigError, RunConfig
from .flowio import FlowFileError, build_scale_specs, read_flow_file, read_labels, write_flow_file, write_labels
from .graphs import extract_sequence, read_graph_dump, write_graph_dump
from .model import fusion_losses, init_params
from .scoring import Normalizer, anomaly_scores, evaluation_report
from .synth import ScenarioConfig, Segment, gen_benchmark
from .training import TrainingDiverged, load_checkpoint, model_grad_check, save_checkpoint, train

log = logging.getLogger("crowdmotion")

EXIT_OK = 0
EXIT_DIVERGED = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_GRADCHECK = 4
EXIT_METRIC = 5
EXIT_MISMATCH = 6

GRAPH_FORMAT = "crowdmotion-graphs/1"


class InputError(Exception):
    """A required file is missing, unreadable or malformed."""


class MismatchError(Exception):
    """An artifact was produced under settings incompatible with this run."""


def _need(cfg: RunConfig, name: str) -> Path:
    value = getattr(cfg, name)
    if not value:
        raise ConfigError(f"{name}: this command needs {cfgmod.flag_name(name)} (or '{name}' in the config file)")
    return Path(value)


def _echo_path(output: Path) -> Path:
    return output.with_name(output.name + ".config.json")


def _check_same(kind: str, recorded: dict, cfg: RunConfig, keys) -> None:
    current = cfg.to_dict()
    diffs = [f"{k}: {kind} has {recorded.get(k)!r}, config has {current[k]!r}"
             for k in keys if recorded.get(k) != current[k]]
    if diffs:
        raise MismatchError(f"{kind} is incompatible with this config:\n  " + "\n  ".join(diffs))


def _read_flow(path: Path):
    try:
        return read_flow_file(path)
    except FileNotFoundError:
        raise InputError(f"flow file not found: {path}") from None
    except (OSError, FlowFileError) as exc:
        raise InputError(f"cannot read flow file {path}: {exc}") from None


def _read_graphs(path: Path, cfg: RunConfig):
    try:
        header, sets = read_graph_dump(path)
    except FileNotFoundError:
        raise InputError(f"graph dump not found: {path}") from None
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise InputError(f"cannot read graph dump {path}: {exc}") from None
    if header.get("format") != GRAPH_FORMAT:
        raise InputError(f"{path}: not a graph dump (format {header.get('format')!r})")
    if not sets:
        raise InputError(f"{path}: graph dump holds no snippets")
    _check_same(f"graph dump {path}", header.get("config", {}), cfg, cfgmod.FEATURE_KEYS)
    return header, sets


def _read_checkpoint(path: Path, cfg: RunConfig) -> dict:
    try:
        doc = load_checkpoint(path)
    except FileNotFoundError:
        raise InputError(f"checkpoint not found: {path}") from None
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise InputError(f"cannot read checkpoint {path}: {exc}") from None
    _check_same(f"checkpoint {path}", doc.get("config", {}), cfg, cfgmod.MODEL_KEYS)
    expected = set(init_params(cfg.net_config(), 0))
    if set(doc["params"]) != expected:
        raise MismatchError(f"checkpoint {path} parameters do not match the configured network")
    return doc


def _read_scores(path: Path) -> np.ndarray:
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise InputError(f"score file not found: {path}") from None
    except OSError as exc:
        raise InputError(f"cannot read score file {path}: {exc}") from None
    scores = []
    for lineno, line in enumerate(lines, 1):
        parts = line.split("\t")
        try:
            idx, value = int(parts[0]), float(parts[1])
        except (IndexError, ValueError):
            raise InputError(f"{path}:{lineno}: expected 'frame_index<TAB>score', got {line!r}") from None
        if idx != lineno - 1:
            raise InputError(f"{path}:{lineno}: frame index {idx} out of sequence")
        scores.append(value)
    return np.asarray(scores, dtype=np.float64)


def _read_label_file(path: Path) -> np.ndarray:
    try:
        return read_labels(path)
    except FileNotFoundError:
        raise InputError(f"labels file not found: {path}") from None
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read labels {path}: {exc}") from None


def write_scores(path, scores) -> None:
    Path(path).write_text("".join(f"{i}\t{float(s)!r}\n" for i, s in enumerate(scores)), encoding="utf-8")


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(cfg: RunConfig) -> int:
    flow_path, labels_path = _need(cfg, "flow"), _need(cfg, "labels")
    seq, labels = gen_benchmark(cfg.scenario())
    write_flow_file(flow_path, seq)
    write_labels(labels_path, labels)
    cfg.write_echo(_echo_path(flow_path))
    log.info("wrote %d frames of %dx%d flow to %s", len(seq), seq.width, seq.height, flow_path)
    return EXIT_OK


def cmd_extract(cfg: RunConfig) -> int:
    flow_path, out = _need(cfg, "flow"), _need(cfg, "graphs")
    seq = _read_flow(flow_path)
    if len(seq) < cfg.m:
        raise InputError(f"{flow_path}: {len(seq)} frames, fewer than one snippet of m={cfg.m}")
    try:
        specs = build_scale_specs(seq.width, seq.height, cfg.shoulder_px, cfg.scale_factors)
    except ValueError as exc:
        raise ConfigError(f"shoulder_px: {exc}") from None
    sets = extract_sequence(seq.frames, specs, cfg.m, cfg.tau, cfg.D, cfg.eps_static, cfg.connectivity)
    header = {
        "format": GRAPH_FORMAT,
        "config": {k: cfg.to_dict()[k] for k in cfgmod.FEATURE_KEYS},
        "frame_w": seq.width,
        "frame_h": seq.height,
        "n_frames": len(seq),
        "n_snippets": len(sets),
        "grids": [[s.regions_w, s.regions_h] for s in specs],
    }
    write_graph_dump(out, header, sets)
    cfg.write_echo(_echo_path(out))
    log.info("extracted %d snippets on grids %s to %s", len(sets), header["grids"], out)
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    graphs, out = _need(cfg, "graphs"), _need(cfg, "checkpoint")
    header, sets = _read_graphs(graphs, cfg)
    log_path = out.with_name(out.name + ".log")
    with open(log_path, "w", encoding="utf-8") as fh:
        def on_epoch(rec):
            fh.write(json.dumps(rec) + "\n")
            fh.flush()

        result = train(sets, cfg.net_config(), cfg.train_config(), on_epoch=on_epoch)
    save_checkpoint(out, result, cfg.to_dict(), {"graphs": {"n_snippets": len(sets), "n_frames": header["n_frames"]}})
    cfg.write_echo(_echo_path(out))
    last = result.history[-1]
    log.info("trained %d epochs, final total %.6g; normalizer [%.10g, %.10g]; checkpoint %s",
             len(result.history), last["total"], result.fus_min, result.fus_max, out)
    return EXIT_OK


def cmd_score(cfg: RunConfig) -> int:
    graphs, ckpt, out = _need(cfg, "graphs"), _need(cfg, "checkpoint"), _need(cfg, "scores")
    header, sets = _read_graphs(graphs, cfg)
    doc = _read_checkpoint(ckpt, cfg)
    raw = fusion_losses(sets, doc["params"], cfg.net_config())
    norm = Normalizer(doc["normalizer"]["min"], doc["normalizer"]["max"])
    series = anomaly_scores(
        raw, norm, cfg.lambda_mov, total_frames=header["n_frames"],
        end_frames=[s.end_frame for s in sets],
    )
    write_scores(out, series.scores)
    cfg.write_echo(_echo_path(out))
    log.info("scored %d frames from %d snippets to %s", series.scores.size, len(sets), out)
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    score_path, label_path, out = _need(cfg, "scores"), _need(cfg, "labels"), _need(cfg, "metrics")
    scores = _read_scores(score_path)
    labels = _read_label_file(label_path)
    if scores.size != labels.size:
        raise InputError(f"{scores.size} scores but {labels.size} labels")
    try:
        report = evaluation_report(scores, labels)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    Path(out).write_text(json.dumps(report, indent=1) + "\n", encoding="utf-8")
    cfg.write_echo(_echo_path(Path(out)))
    print(f"AUC {report['auc']:.4f} ({report['auc_percent']:.2f}%)  EER {report['eer']:.4f} ({report['eer_percent']:.2f}%)")
    failed = []
    if cfg.min_auc is not None and report["auc"] < cfg.min_auc:
        failed.append(f"AUC {report['auc']:.4f} < min_auc {cfg.min_auc}")
    if cfg.max_eer is not None and report["eer"] > cfg.max_eer:
        failed.append(f"EER {report['eer']:.4f} > max_eer {cfg.max_eer}")
    if failed:
        print("threshold failure: " + "; ".join(failed), file=sys.stderr)
        return EXIT_METRIC
    return EXIT_OK


def _gradcheck_sample(cfg: RunConfig):
    """A few snippets mixing calm and turbulent flow, so features are not all zero."""
    n = cfg.m + 2
    scen = ScenarioConfig(cfg.width, cfg.height, cfg.speed, cfg.sigma, cfg.synth_seed,
                          [Segment("laminar", n), Segment("turbulence", n)], cfg.turbulence_period,
                          cfg.turbulence_cell, cfg.pulse_period, cfg.m)
    seq, _ = gen_benchmark(scen)
    specs = build_scale_specs(seq.width, seq.height, cfg.shoulder_px, cfg.scale_factors)
    sets = extract_sequence(seq.frames, specs, cfg.m, cfg.tau, cfg.D, cfg.eps_static, cfg.connectivity)
    pick = np.linspace(0, len(sets) - 1, min(cfg.batch_size, len(sets))).round().astype(int)
    return [sets[i] for i in pick]


def cmd_gradcheck(cfg: RunConfig) -> int:
    if cfg.graphs:
        _, sets = _read_graphs(Path(cfg.graphs), cfg)
        sets = sets[: cfg.batch_size]
    else:
        try:
            sets = _gradcheck_sample(cfg)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    if cfg.checkpoint:
        params = _read_checkpoint(Path(cfg.checkpoint), cfg)["params"]
    else:
        params = init_params(cfg.net_config(), cfg.seed)
    rep = model_grad_check(params, sets, cfg.net_config(), n_coords=cfg.gradcheck_coords,
                           rtol=cfg.gradcheck_rtol, seed=cfg.seed)
    text = rep.summary()
    print(text)
    if cfg.report:
        Path(cfg.report).write_text(text + "\n", encoding="utf-8")
        cfg.write_echo(_echo_path(Path(cfg.report)))
    return EXIT_OK if rep.passed else EXIT_GRADCHECK


COMMANDS = {
    "synth": (cmd_synth, "generate labelled synthetic flow (flow + labels)"),
    "extract": (cmd_extract, "build multi-scale consistency graphs from flow (flow -> graphs)"),
    "train": (cmd_train, "train the network on graphs of normal motion (graphs -> checkpoint)"),
    "score": (cmd_score, "per-frame anomaly scores (graphs + checkpoint -> scores)"),
    "eval": (cmd_eval, "AUC and EER of scores against labels (scores + labels -> metrics)"),
    "gradcheck": (cmd_gradcheck, "compare analytic gradients with finite differences"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crowdmotion", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", metavar="JSON", help="flat JSON config file; flags override its values")
        p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
        cfgmod.add_override_flags(p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = cfgmod.resolve(args)
        return COMMANDS[args.command][0](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_IO
    except MismatchError as exc:
        print(f"mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
