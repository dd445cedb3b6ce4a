"""Conditioning ablation sweep: one model per (variant, seed), scored on the
test split and summarised by per-variant medians."""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .conditioning import ConditionVariant
from .errors import BinauralError, ValidationError
from .metrics import evaluate
from .neural import WARMUP, init_params, save_params
from .render import RenderConfig, render_geometric
from .scene import load_manifest
from .training import TrainingConfig, fit, make_examples, predict, split_scenes

log = logging.getLogger(__name__)

WORKERS_ENV = "DOPPLER_BINAURAL_WORKERS"
METRIC_KEYS = ("wave_l2", "amplitude_l2", "phase_l2", "mrstft")
ALL_VARIANTS = ("spherical", "cartesian", "zeros", "time", "original")


@dataclass
class Cell:
    variant: str
    seed: int
    ok: bool
    metrics: dict = field(default_factory=dict)
    per_scene: dict = field(default_factory=dict)
    error: str | None = None
    log: list = field(default_factory=list)


@dataclass
class AblationResult:
    cells: list[Cell]
    medians: dict
    baseline: dict
    dsp_baseline: dict
    verdict: dict | None

    @property
    def failed(self) -> list[Cell]:
        return [c for c in self.cells if not c.ok]

    def to_dict(self) -> dict:
        return {
            "cells": [{k: v for k, v in asdict(c).items() if k != "log"} for c in self.cells],
            "medians": self.medians,
            "baseline_untrained": self.baseline,
            "baseline_dsp": self.dsp_baseline,
            "verdict": self.verdict,
        }


def worker_count(requested: int | None = None) -> int:
    if requested:
        return max(1, requested)
    env = os.environ.get(WORKERS_ENV)
    return max(1, int(env)) if env else 1


def _score(reference, estimate, warmup=WARMUP) -> dict:
    report = evaluate(reference[:, warmup:], estimate[:, warmup:])
    return {k: getattr(report, k) for k in METRIC_KEYS}


def _mean_scores(per_scene: dict) -> dict:
    return {k: float(np.mean([s[k] for s in per_scene.values()])) for k in METRIC_KEYS}


def baselines(scenes: dict, examples) -> tuple[dict, dict]:
    """Untrained model (geometric warp, unit gain) and DSP render scores on the test split."""
    untrained, dsp = {}, {}
    for scene, ex in zip(scenes["test"], examples):
        params = init_params(ex.condition.channels)
        untrained[scene.id] = _score(ex.target, predict(ex, params))
        cfg = scene.spec.render_config(RenderConfig()) if scene.spec is not None else RenderConfig()
        est = render_geometric(scene.mono, scene.source_traj, scene.listener_traj, cfg)
        dsp[scene.id] = _score(ex.target, est.samples)
    return _mean_scores(untrained), _mean_scores(dsp)


def run_cell(manifest, variant: str, seed: int, config: TrainingConfig, out_dir=None) -> Cell:
    """Train and score a single (variant, seed) cell. Failures are captured."""
    try:
        scenes = split_scenes(load_manifest(manifest))
        if not scenes["test"]:
            raise ValidationError("manifest has no test scenes")
        stats, train_ex, (val_ex, test_ex) = make_examples(
            scenes["train"], [scenes["validation"], scenes["test"]], variant
        )
        result = fit(train_ex, val_ex, replace(config, variant=variant, seed=seed), stats)
        per_scene = {ex.id: _score(ex.target, predict(ex, result.params)) for ex in test_ex}
        cell = Cell(variant, seed, True, _mean_scores(per_scene), per_scene, log=result.log)
        if out_dir is not None:
            cell_dir = Path(out_dir) / f"{variant}_seed{seed}"
            cell_dir.mkdir(parents=True, exist_ok=True)
            save_params(result.params, cell_dir / "model.bin")
            with open(cell_dir / "log.jsonl", "w") as fh:
                for entry in result.log:
                    fh.write(json.dumps(entry) + "\n")
        return cell
    except (BinauralError, FloatingPointError, ValueError) as exc:
        log.warning("cell %s/seed %d failed: %s", variant, seed, exc)
        return Cell(variant, seed, False, error=f"{type(exc).__name__}: {exc}")


def _verdict(medians: dict, baseline: dict) -> dict | None:
    present = [v for v, m in medians.items() if m]
    if len(medians) < 2:
        return None
    checks = {}
    sph = medians.get("spherical")
    if sph and medians.get("zeros"):
        checks["spherical_phase_lt_zeros"] = sph["phase_l2"] < medians["zeros"]["phase_l2"]
    if sph and medians.get("cartesian"):
        checks["spherical_phase_le_cartesian"] = sph["phase_l2"] <= medians["cartesian"]["phase_l2"]
    checks["wave_beats_untrained_baseline"] = bool(present) and all(
        medians[v]["wave_l2"] < baseline["wave_l2"] for v in present
    )
    return {"checks": checks, "pass": all(checks.values()) and len(present) == len(medians)}


def run_ablation(manifest, variants=ALL_VARIANTS, seeds=(1, 2, 3), config: TrainingConfig = TrainingConfig(),
                 out_dir=None, workers: int | None = None) -> AblationResult:
    variants = [ConditionVariant.parse(v).value for v in variants]
    if not variants or not seeds:
        raise ValidationError("need at least one variant and one seed")
    manifest = str(manifest)
    scenes = split_scenes(load_manifest(manifest))
    if not scenes["train"] or not scenes["test"]:
        raise ValidationError("manifest needs non-empty train and test splits")
    _, _, (test_ex,) = make_examples(scenes["train"], [scenes["test"]], variants[0])
    baseline, dsp = baselines(scenes, test_ex)

    jobs = [(v, s) for v in variants for s in seeds]
    n_workers = worker_count(workers)
    if n_workers == 1:
        cells = [run_cell(manifest, v, s, config, out_dir) for v, s in jobs]
    else:
        with ProcessPoolExecutor(n_workers) as pool:
            futures = [pool.submit(run_cell, manifest, v, s, config, out_dir) for v, s in jobs]
            cells = [f.result() for f in futures]

    medians = {}
    for v in variants:
        ok = [c for c in cells if c.variant == v and c.ok]
        medians[v] = {k: float(np.median([c.metrics[k] for c in ok])) for k in METRIC_KEYS} if ok else {}
    result = AblationResult(cells, medians, baseline, dsp, _verdict(medians, baseline))
    if out_dir is not None:
        write_outputs(result, out_dir)
    return result


def table_rows(result: AblationResult) -> list[list[str]]:
    """Rows mirroring the ablation table: per-cell results, medians, baselines."""
    rows = [["row", "variant", "seed", "status", "wave_l2_x1e3", "amplitude_l2", "phase_l2", "mrstft"]]

    def fmt(m):
        if not m:
            return ["", "", "", ""]
        return [f"{m['wave_l2'] * 1e3:.4f}", f"{m['amplitude_l2']:.4f}", f"{m['phase_l2']:.4f}", f"{m['mrstft']:.4f}"]

    rows.append(["baseline", "untrained_warp", "", "ok"] + fmt(result.baseline))
    rows.append(["baseline", "dsp_render", "", "ok"] + fmt(result.dsp_baseline))
    for c in result.cells:
        rows.append(["cell", c.variant, str(c.seed), "ok" if c.ok else "failed"] + fmt(c.metrics))
    for v, m in result.medians.items():
        rows.append(["median", v, "", "ok" if m else "failed"] + fmt(m))
    return rows


def write_outputs(result: AblationResult, out_dir) -> None:
    from .plotting import plot_ablation, plot_training_curves

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "ablation.tsv", "w", newline="") as fh:
        csv.writer(fh, delimiter="\t").writerows(table_rows(result))
    with open(out_dir / "ablation.json", "w") as fh:
        json.dump(result.to_dict(), fh, indent=2)
    plot_ablation(result, out_dir / "ablation.png")
    plot_training_curves({f"{c.variant}/{c.seed}": c.log for c in result.cells if c.ok}, out_dir / "training_loss.png")
