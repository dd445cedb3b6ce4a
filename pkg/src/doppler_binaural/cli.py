"""Command-line entry point.

Exit codes: 0 success, 1 internal error, 2 usage/validation error,
3 partial failure (some ablation cells failed).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import __version__
from .ablation import ALL_VARIANTS, WORKERS_ENV, run_ablation, table_rows
from .audio import AudioBuffer, read_wav, write_wav
from .conditioning import ConditionVariant, build_condition, resample_condition
from .errors import BinauralError, UsageError
from .geometry import Trajectory
from .metrics import StftConfig, evaluate_pair
from .neural import load_params, save_params
from .render import RenderConfig, render_geometric
from .scene import (
    KINDS,
    SceneSpec,
    ablation_specs,
    build_dataset,
    generate_scene,
    read_trajectory_csv,
    scene_from_files,
    write_trajectory_csv,
)
from .training import TrainingConfig, make_example, predict, train

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE, EXIT_PARTIAL = 0, 1, 2, 3

log = logging.getLogger("doppler_binaural")


def _positive(kind):
    def check(text):
        try:
            value = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid {kind.__name__} value: {text!r}") from None
        if not value > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value

    return check


def _non_negative(kind):
    def check(text):
        try:
            value = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid {kind.__name__} value: {text!r}") from None
        if value < 0:
            raise argparse.ArgumentTypeError(f"must be non-negative, got {text}")
        return value

    return check


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _variant_list(text):
    try:
        return [ConditionVariant.parse(x.strip()).value for x in text.split(",") if x.strip()]
    except UsageError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _emit(args, payload: dict, text: str | None = None):
    if args.json:
        print(json.dumps(payload, indent=2, default=str))
    elif text:
        print(text)


# -- subcommands ---------------------------------------------------------------

def cmd_gen_scene(args) -> int:
    spec = SceneSpec(
        kind=args.kind,
        duration=args.duration,
        speed=args.speed,
        radius=args.closest,
        tone=None if args.source_file else args.tone,
        source_file=args.source_file,
        seed=args.seed,
        azimuth=args.azimuth,
        attenuation_ref=args.attenuation_ref,
    )
    scene = generate_scene(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_wav(scene.mono, out / "mono.wav")
    write_trajectory_csv(scene.source_traj, out / "traj.csv")
    write_trajectory_csv(scene.listener_traj, out / "listener.csv")
    write_wav(scene.reference_binaural, out / "reference.wav")
    with open(out / "spec.json", "w") as fh:
        json.dump(asdict(spec), fh, indent=2)
    if args.plot:
        from .plotting import plot_spectrograms

        ref = scene.reference_binaural.samples[0]
        fmax = min(spec.sample_rate / 2, 4 * spec.tone) if spec.tone else None
        plot_spectrograms(scene.mono.mono, ref, out / "spectrogram.png", fmax=fmax)
    _emit(args, {"out": str(out), "spec": asdict(spec)}, f"wrote scene to {out}")
    return EXIT_OK


def cmd_gen_dataset(args) -> int:
    if args.preset == "ablation":
        specs = ablation_specs()
    else:
        rng = np.random.default_rng(args.seed)
        lo, hi = args.speed_range
        specs = [
            SceneSpec(
                kind=args.kind,
                duration=args.duration,
                speed=float(rng.uniform(lo, hi)),
                radius=float(rng.uniform(1.5, 3.0)),
                tone=args.tone,
                seed=args.seed + i,
                attenuation_ref=args.attenuation_ref,
            )
            for i in range(args.count)
        ]
    manifest = build_dataset(specs, args.out)
    counts = {s: sum(e["split"] == s for e in manifest["scenes"]) for s in ("train", "validation", "test")}
    _emit(args, {"manifest": str(Path(args.out) / "manifest.json"), "splits": counts},
          f"wrote {len(specs)} scenes to {args.out} (splits {counts})")
    return EXIT_OK


def cmd_render(args) -> int:
    scene = scene_from_files(args.mono, args.traj, args.listener)
    if args.mode == "neural":
        if not args.model:
            raise UsageError("--mode neural needs --model")
        params = load_params(args.model)
        if params.variant is None or params.stats is None:
            raise UsageError(f"{args.model} carries no variant/normalisation metadata")
        ex = make_example(scene, params.variant, params.stats)
        out = AudioBuffer(predict(ex, params), scene.mono.sample_rate)
    else:
        cfg = RenderConfig(
            speed_of_sound=args.speed_of_sound,
            interp=args.interp,
            attenuation_ref=args.attenuation_ref,
            head_shadow=not args.no_head_shadow,
            propagation="emission" if args.mode == "exact" else "reception",
            sample_rate=scene.mono.sample_rate,
        )
        out = render_geometric(scene.mono, scene.source_traj, scene.listener_traj, cfg)
    write_wav(out, args.out)
    _emit(args, {"out": args.out, "mode": args.mode, "samples": len(out)}, f"wrote {args.out}")
    return EXIT_OK


def cmd_features(args) -> int:
    source = read_trajectory_csv(args.traj)
    if args.listener:
        listener = read_trajectory_csv(args.listener)
    else:
        listener = Trajectory.stationary(source.times, rate=source.rate)
    pair = SimpleNamespace(source_traj=source, listener_traj=listener)
    track = build_condition(pair, args.variant, smooth=args.smooth)
    track = resample_condition(track, args.rate, args.length)
    out = Path(args.out)
    out.write_bytes(np.ascontiguousarray(track.values, dtype="<f4").tobytes())
    meta = {"rate": track.rate, "channels": track.channels, "channel_names": list(track.channel_names),
            "length": len(track)}
    with open(str(out) + ".json", "w") as fh:
        json.dump(meta, fh, indent=2)
    _emit(args, meta, f"wrote {len(track)} x {track.channels} features to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = TrainingConfig(
        steps=args.steps,
        batch_scenes=args.batch_scenes,
        learning_rate=args.lr,
        seed=args.seed,
        variant=args.variant,
        excerpt_len=args.excerpt_len,
        val_every=args.val_every,
    )
    result = train(args.manifest, config)
    params = result.best_params if args.best else result.params
    save_params(params, args.out)
    if args.log:
        with open(args.log, "w") as fh:
            for entry in result.log:
                fh.write(json.dumps(entry) + "\n")
    last = result.log[-1] if result.log else {}
    _emit(args, {"out": args.out, "steps": args.steps, "best_step": result.best_step, "last": last},
          f"trained {args.variant} for {args.steps} steps -> {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    report = evaluate_pair(args.ref, args.est, StftConfig(args.fft, args.hop))
    report.write(args.report)
    if args.plot:
        from .plotting import plot_spectrograms

        ref, est = read_wav(args.ref), read_wav(args.est)
        plot_spectrograms(ref.samples[0], est.samples[0], args.plot, sample_rate=ref.sample_rate)
    d = report.to_dict()
    text = "\t".join(f"{k}={d[k]:.6g}" for k in ("wave_l2_x1e3", "amplitude_l2", "phase_l2", "mrstft"))
    _emit(args, d, text)
    return EXIT_OK


def cmd_ablate(args) -> int:
    config = TrainingConfig(steps=args.steps, batch_scenes=args.batch_scenes, learning_rate=args.lr,
                            excerpt_len=args.excerpt_len)
    result = run_ablation(args.manifest, args.variants, args.seeds, config, args.out, args.workers)
    if args.json:
        print(json.dumps(result.to_dict(), indent=2))
    else:
        for row in table_rows(result):
            print("\t".join(row))
        if result.verdict is None:
            print("verdict: n/a (needs at least two variants)")
        else:
            checks = ", ".join(f"{k}={'yes' if v else 'no'}" for k, v in result.verdict["checks"].items())
            print(f"verdict: {'PASS' if result.verdict['pass'] else 'FAIL'} ({checks})")
    return EXIT_PARTIAL if result.failed else EXIT_OK


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="doppler-binaural", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.add_argument("--json", action="store_true", help="print machine-readable JSON to stdout")
        sp.set_defaults(func=func)
        return sp

    sp = add("gen-scene", cmd_gen_scene, "generate one synthetic scene (mono, trajectories, reference)")
    sp.add_argument("--kind", choices=KINDS, default="passby", help="source motion")
    sp.add_argument("--speed", type=_non_negative(float), default=10.0, help="source speed in m/s")
    sp.add_argument("--closest", "--radius", dest="closest", type=_positive(float), default=2.0,
                    help="closest approach (passby) or radius (orbit/static/random_walk) in m")
    sp.add_argument("--duration", type=_positive(float), default=4.0, help="scene length in seconds")
    sp.add_argument("--tone", type=_positive(float), default=1000.0, help="source tone frequency in Hz")
    sp.add_argument("--source-file", help="mono WAV to use instead of a tone")
    sp.add_argument("--seed", type=int, default=0, help="scene seed")
    sp.add_argument("--azimuth", type=float, help="fixed direction in degrees (default: drawn from the seed)")
    sp.add_argument("--attenuation-ref", type=_positive(float), default=1.0, help="unit-gain distance in m")
    sp.add_argument("--plot", action="store_true", help="also write spectrogram.png into --out")
    sp.add_argument("--out", required=True, help="output directory")

    sp = add("gen-dataset", cmd_gen_dataset, "generate a scene dataset with a manifest")
    sp.add_argument("--preset", choices=["ablation"], help="use the built-in 12-scene ablation dataset")
    sp.add_argument("--count", type=_positive(int), default=10, help="number of scenes (without --preset)")
    sp.add_argument("--kind", choices=KINDS, default="passby", help="source motion (without --preset)")
    sp.add_argument("--speed-range", type=lambda s: tuple(float(x) for x in s.split(",")), default=(10.0, 30.0),
                    help="min,max speed in m/s (without --preset)")
    sp.add_argument("--duration", type=_positive(float), default=0.6, help="scene length in seconds")
    sp.add_argument("--tone", type=_positive(float), default=150.0, help="tone frequency in Hz")
    sp.add_argument("--attenuation-ref", type=_positive(float), default=4.0, help="unit-gain distance in m")
    sp.add_argument("--seed", type=int, default=0, help="first scene seed (seeds are consecutive)")
    sp.add_argument("--out", required=True, help="output directory")

    sp = add("render", cmd_render, "render binaural audio from a mono WAV and trajectory CSV")
    sp.add_argument("--mode", choices=["geometric", "exact", "neural"], default="geometric",
                    help="geometric: reception-time warp; exact: emission-time warp; neural: trained model")
    sp.add_argument("--mono", required=True, help="mono input WAV")
    sp.add_argument("--traj", required=True, help="source trajectory CSV")
    sp.add_argument("--listener", help="listener trajectory CSV (default: static at the origin)")
    sp.add_argument("--out", required=True, help="output stereo WAV")
    sp.add_argument("--interp", choices=["linear", "sinc8"], default="linear", help="fractional-delay interpolator")
    sp.add_argument("--no-head-shadow", action="store_true", help="disable the head-shadow gain")
    sp.add_argument("--attenuation-ref", type=_positive(float), default=1.0, help="unit-gain distance in m")
    sp.add_argument("--speed-of-sound", type=_positive(float), default=343.0, help="m/s")
    sp.add_argument("--model", help="model file for --mode neural")

    sp = add("features", cmd_features, "compute a condition track at audio rate")
    sp.add_argument("--traj", required=True, help="source trajectory CSV")
    sp.add_argument("--listener", help="listener trajectory CSV (default: static at the origin)")
    sp.add_argument("--variant", type=lambda s: ConditionVariant.parse(s).value, default="spherical",
                    help="spherical|cartesian|zeros|time|original")
    sp.add_argument("--rate", type=_positive(float), default=48000.0, help="output rate in Hz")
    sp.add_argument("--length", type=_positive(int), help="number of output frames (default: trajectory span)")
    sp.add_argument("--smooth", action="store_true", help="5-sample position smoothing before differencing")
    sp.add_argument("--out", required=True, help="raw little-endian float32 output; sidecar at <out>.json")

    sp = add("train", cmd_train, "train the conditioned warp model")
    sp.add_argument("--manifest", required=True, help="dataset manifest JSON")
    sp.add_argument("--variant", type=lambda s: ConditionVariant.parse(s).value, default="spherical",
                    help="spherical|cartesian|zeros|time|original")
    sp.add_argument("--steps", type=_non_negative(int), default=2000, help="optimisation steps")
    sp.add_argument("--seed", type=int, default=1, help="training seed")
    sp.add_argument("--batch-scenes", type=_positive(int), default=4, help="excerpts per step")
    sp.add_argument("--lr", type=_positive(float), default=1e-3, help="Adam learning rate")
    sp.add_argument("--excerpt-len", type=_positive(int), default=24000, help="excerpt length in samples")
    sp.add_argument("--val-every", type=_positive(int), default=250, help="validation interval in steps")
    sp.add_argument("--best", action="store_true", help="save best-validation instead of final parameters")
    sp.add_argument("--log", help="write the training log as JSON lines")
    sp.add_argument("--out", required=True, help="output model file")

    sp = add("eval", cmd_eval, "compare a binaural estimate with a reference")
    sp.add_argument("--ref", required=True, help="reference stereo WAV")
    sp.add_argument("--est", required=True, help="estimate stereo WAV")
    sp.add_argument("--fft", type=_positive(int), default=1024, help="STFT size")
    sp.add_argument("--hop", type=_positive(int), default=256, help="STFT hop")
    sp.add_argument("--plot", help="write a spectrogram comparison PNG here")
    sp.add_argument("--report", required=True, help="output JSON report")

    sp = add("ablate", cmd_ablate, "train and score one model per (variant, seed)")
    sp.add_argument("--manifest", required=True, help="dataset manifest JSON")
    sp.add_argument("--variants", type=_variant_list, default=list(ALL_VARIANTS), help="comma-separated variants")
    sp.add_argument("--seeds", type=_int_list, default=[1, 2, 3], help="comma-separated training seeds")
    sp.add_argument("--steps", type=_non_negative(int), default=2000, help="optimisation steps per cell")
    sp.add_argument("--batch-scenes", type=_positive(int), default=4, help="excerpts per step")
    sp.add_argument("--lr", type=_positive(float), default=1e-3, help="Adam learning rate")
    sp.add_argument("--excerpt-len", type=_positive(int), default=24000, help="excerpt length in samples")
    sp.add_argument("--workers", type=_positive(int),
                    help=f"parallel worker processes (default: ${WORKERS_ENV} or 1)")
    sp.add_argument("--out", help="directory for ablation.tsv/json, figures and per-cell models")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BinauralError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
