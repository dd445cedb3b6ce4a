"""Dataset preparation, the training loop and model inference."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .conditioning import ConditionStats, ConditionVariant, build_condition, normalize_condition
from .errors import TrainingAborted, ValidationError
from .geometry import EarSide
from .metrics import phase_l2, wave_l2
from .neural import (
    WARMUP,
    Adam,
    Example,
    ModelParams,
    batch_loss_and_grad,
    forward,
    init_params,
)
from .render import RenderConfig, geometric_warpfield
from .scene import Scene, load_manifest, load_scene

log = logging.getLogger(__name__)

BASE_WARP = RenderConfig()


@dataclass(frozen=True)
class TrainingConfig:
    steps: int = 2000
    batch_scenes: int = 4
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 1
    variant: str = "spherical"
    excerpt_len: int = 24000
    warmup: int = WARMUP
    val_every: int = 250
    hidden: int = 64
    max_shift: float = 96.0

    def __post_init__(self):
        ConditionVariant.parse(self.variant)
        if self.steps < 0:
            raise ValidationError("steps must be non-negative")
        for name in ("batch_scenes", "excerpt_len", "val_every", "hidden"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        if not self.learning_rate > 0 or not self.epsilon > 0 or not self.max_shift > 0:
            raise ValidationError("learning_rate, epsilon and max_shift must be positive")
        if self.excerpt_len <= self.warmup:
            raise ValidationError("excerpt_len must exceed the warm-up length")


def geometric_positions(scene: Scene) -> np.ndarray:
    n = len(scene.mono)
    cfg = RenderConfig(sample_rate=scene.mono.sample_rate)
    return np.stack(
        [geometric_warpfield(n, scene.source_traj, scene.listener_traj, side, cfg).positions for side in EarSide]
    )


def make_example(scene: Scene, variant, stats: ConditionStats | None = None, geo: np.ndarray | None = None) -> Example:
    cond = build_condition(scene, variant)
    if stats is not None:
        cond = normalize_condition(cond, stats)
    if geo is None:
        geo = geometric_positions(scene)
    target = scene.reference_binaural.samples if scene.reference_binaural is not None else np.zeros_like(geo)
    return Example(scene.id, scene.mono.mono, cond, geo, target, scene.mono.sample_rate)


def make_examples(train_scenes, other_scenes, variant, geo_cache: dict | None = None):
    """Build examples for a variant, normalising every split with statistics
    from the training scenes only."""
    geo_cache = {} if geo_cache is None else geo_cache

    def geo(scene):
        if scene.id not in geo_cache:
            geo_cache[scene.id] = geometric_positions(scene)
        return geo_cache[scene.id]

    stats = ConditionStats.from_tracks(build_condition(s, variant) for s in train_scenes)
    train = [make_example(s, variant, stats, geo(s)) for s in train_scenes]
    other = [[make_example(s, variant, stats, geo(s)) for s in group] for group in other_scenes]
    return stats, train, other


def predict(example: Example, params: ModelParams) -> np.ndarray:
    out, _ = forward(example.mono, example.condition, example.geo, params, None, example.sample_rate)
    return out


def validation_scores(examples, params, warmup: int = WARMUP):
    waves, phases = [], []
    for ex in examples:
        pred = predict(ex, params)[:, warmup:]
        ref = ex.target[:, warmup:]
        waves.append(wave_l2(ref, pred))
        phases.append(phase_l2(ref, pred))
    return float(np.mean(waves)), float(np.mean(phases))


@dataclass
class TrainResult:
    params: ModelParams
    best_params: ModelParams
    log: list[dict] = field(default_factory=list)
    best_step: int = 0


def fit(train: list[Example], validation: list[Example], config: TrainingConfig,
        stats: ConditionStats | None = None) -> TrainResult:
    if not train:
        raise ValidationError("training split is empty")
    variant = ConditionVariant.parse(config.variant)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xDA7A]))
    params = init_params(train[0].condition.channels, config.seed, config.hidden, config.max_shift)
    params.variant, params.stats = variant.value, stats
    best, best_score, best_step = params, np.inf, 0
    opt = Adam(params.size, config.learning_rate, config.adam_beta1, config.adam_beta2, config.epsilon)
    theta = params.to_vector()
    history = []
    for step in range(1, config.steps + 1):
        batch = []
        for i in rng.integers(0, len(train), size=config.batch_scenes):
            ex = train[i]
            n = ex.target.shape[1]
            if n > config.excerpt_len:
                start = int(rng.integers(0, n - config.excerpt_len + 1))
                batch.append((ex, (start, start + config.excerpt_len)))
            else:
                batch.append((ex, (0, n)))
        total, grad, losses = batch_loss_and_grad(batch, params, config.warmup)
        if not (np.isfinite(total) and np.all(np.isfinite(grad))):
            bad = next((ex.id for (ex, _), v in zip(batch, losses) if not np.isfinite(v)), batch[0][0].id)
            raise TrainingAborted("non-finite loss or gradient", step, bad)
        theta = opt.step(theta, grad)
        params = params.with_vector(theta)
        entry = {"step": step, "loss": total / len(batch), "val_wave_l2": None, "val_phase_l2": None}
        if validation and (step % config.val_every == 0 or step == config.steps):
            wave, phase = validation_scores(validation, params, config.warmup)
            entry["val_wave_l2"], entry["val_phase_l2"] = wave, phase
            if wave < best_score:
                best, best_score, best_step = params, wave, step
        history.append(entry)
    if not validation:
        best, best_step = params, config.steps
    return TrainResult(params, best, history, best_step)


def split_scenes(entries) -> dict[str, list[Scene]]:
    out = {"train": [], "validation": [], "test": []}
    for entry in entries:
        out.setdefault(entry.get("split", "train"), []).append(load_scene(entry))
    return out


def train(manifest, config: TrainingConfig) -> TrainResult:
    """Train on a manifest path (or a list of loaded manifest entries)."""
    entries = load_manifest(manifest) if not isinstance(manifest, list) else manifest
    scenes = split_scenes(entries)
    if not scenes["train"]:
        raise ValidationError("manifest has no training scenes")
    stats, train_ex, (val_ex,) = make_examples(scenes["train"], [scenes["validation"]], config.variant)
    return fit(train_ex, val_ex, config, stats)
