"""
Command-line workflow: simulate → train → denoise → eval → recon → fsc → plot.

    python -m src.cli.main [--serial] [--verbose] <command> [options]

Every command writes into a fresh --out directory and appends an entry to
its run_manifest.json. Exit codes: 0 ok, 1 usage or configuration error,
2 I/O error, 3 numerical failure.
"""

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Callable, NamedTuple, Optional

import pandas as pd
import torch

from ..analysis.baselines import filter_stack
from ..analysis.compare import compare_reports, write_comparison
from ..analysis.fsc import DEFAULT_THRESHOLD, FSCCurve, fsc, resolution_at
from ..analysis.metrics import MetricsReport, evaluate_stack
from ..analysis.plots import fsc_figure, loss_figure, write_figure
from ..errors import (
    MRCFormatError,
    NumericalFailureError,
    PrerequisiteError,
    TrainingDivergedError,
)
from ..ingestion.load_data import (
    CLEAN_FILE,
    MANIFEST_FILE,
    NOISY_FILE,
    load_config,
    load_dataset,
    load_manifest,
    load_stack,
    save_dataset,
)
from ..ingestion.mrc_io import read_mrc, write_mrc
from ..ingestion.schemas import (
    DensityMap,
    FilterKind,
    FilterSpec,
    ImageStack,
    ModelKind,
    SimulationConfig,
    Split,
    TrainConfig,
)
from ..models.checkpoint import CheckpointMeta, load_checkpoint, save_checkpoint
from ..models.diffusion import NoiseSchedule, make_schedule, respace_schedule, train
from ..models.postprocess import build_post_training_set, denoise_stack, train_post
from ..models.training import set_serial_mode
from ..models.unet import ConditionalUNet, PostUNet, count_parameters
from ..reconstruction.recon import DEFAULT_WEIGHT_FLOOR, reconstruct
from ..simulation.phantom import gaussian_phantom
from ..simulation.simulate import build_dataset
from .manifest import ArtifactRecord, RunEntry, RunManifest, ensure_fresh, utc_now
from .methods import run_external

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3

DENOISED_FILE = "denoised.mrc"
PHANTOM_FILE = "phantom.mrc"
RECON_FILE = "recon.mrc"
FSC_FILE = "fsc.csv"
RESOLUTION_FILE = "resolution.json"
METRICS_CSV = "metrics.csv"
METRICS_JSON = "metrics.json"
COMPARISON_FILE = "comparison.csv"


class CommandResult(NamedTuple):
    outputs: list[Path]
    config: Optional[dict] = None
    seeds: dict = {}


class CLIParser(argparse.ArgumentParser):
    """Argument errors exit with the usage code."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _select_stack(args, which: str = "noisy") -> ImageStack:
    """--input stack.mrc, or one split of --dataset DIR."""
    path = getattr(args, "input", None) if which == "noisy" else getattr(args, "clean", None)
    if path:
        return load_stack(path)
    if getattr(args, "dataset", None):
        subset = load_dataset(args.dataset).select(Split(args.split))
        return subset.noisy if which == "noisy" else subset.clean
    flag = "--input" if which == "noisy" else "--clean"
    raise ValueError(f"Give either {flag} or --dataset")


def _input_paths(args) -> list[str]:
    names = ("input", "clean", "dataset", "map", "config", "denoised", "poses",
             "diffusion_checkpoint", "post_checkpoint", "map_a", "map_b")
    paths = [str(getattr(args, n)) for n in names if getattr(args, n, None)]
    for n in ("reports", "fsc", "loss"):
        paths.extend(str(p) for p in getattr(args, n, None) or [])
    return paths


def schedule_from_meta(meta: CheckpointMeta, steps: Optional[int] = None) -> NoiseSchedule:
    if not meta.schedule:
        raise ValueError("Checkpoint carries no noise schedule")
    schedule = make_schedule(meta.schedule["T"], meta.schedule["beta_start"], meta.schedule["beta_end"])
    return respace_schedule(schedule, steps) if steps is not None else schedule


def _require(path: Optional[str], what: str) -> Path:
    if not path or not Path(path).exists():
        raise PrerequisiteError(f"{what} not found: {path or '(not given)'}")
    return Path(path)


# --- commands ---

def cmd_phantom(args) -> CommandResult:
    out = _out_dir(args)
    path = out / PHANTOM_FILE
    ensure_fresh(path)
    density = gaussian_phantom(args.size, args.blobs, args.seed, args.voxel_size)
    write_mrc(density, path)
    print(f"💾 Saved {args.size}³ phantom to {path}")
    return CommandResult([path], seeds={"phantom": args.seed})


def cmd_simulate(args) -> CommandResult:
    config = load_config(args.config, SimulationConfig)
    density = read_mrc(args.map)
    if not isinstance(density, DensityMap):
        raise ValueError(f"{args.map} holds an image stack, expected a density map")
    out = _out_dir(args)
    ensure_fresh(*(out / name for name in (NOISY_FILE, CLEAN_FILE, MANIFEST_FILE)))
    dataset = build_dataset(density, config, source=Path(args.map).name, progress=True)
    paths = save_dataset(dataset, out)
    n_train, n_val, n_test = config.split_counts()
    print(f"💾 Saved {len(dataset)} image pairs to {out} ({n_train}/{n_val}/{n_test} train/val/test)")
    return CommandResult(paths, config=config.model_dump(mode="json"), seeds={"simulation": config.rng_seed})


def cmd_train(args) -> CommandResult:
    stage = ModelKind(args.stage)
    if args.config:
        config = load_config(args.config, TrainConfig)
    else:
        config = TrainConfig() if stage == ModelKind.DIFFUSION else TrainConfig.post_defaults()
    out = _out_dir(args)
    ckpt_path = out / f"{stage.value}.ckpt"
    loss_path = out / f"{stage.value}_loss.csv"
    ensure_fresh(ckpt_path, loss_path)

    if stage == ModelKind.POST:
        diffusion_path = _require(args.diffusion_checkpoint, "Post stage needs a trained diffusion checkpoint")
    dataset = load_dataset(args.dataset)
    seeds = {"training": config.rng_seed}

    try:
        if stage == ModelKind.DIFFUSION:
            torch.manual_seed(config.rng_seed)
            model = ConditionalUNet(config.base_width, config.levels)
            print(f"🧠 Diffusion model: {count_parameters(model):,} parameters")
            model, history = train(model, dataset, config, ckpt_path, progress=True)
        else:
            dmodel, meta, _ = load_checkpoint(diffusion_path, ModelKind.DIFFUSION)
            schedule = schedule_from_meta(meta, args.sample_steps)
            print(f"🔁 Regenerating stage-1 outputs with {schedule.T} sampling steps")
            inputs, targets = build_post_training_set(
                dmodel, dataset, schedule, args.sample_seed, args.batch_size, progress=True
            )
            seeds["stage1_sampling"] = args.sample_seed
            torch.manual_seed(config.rng_seed)
            model = PostUNet(config.base_width, config.levels)
            print(f"🧠 Post-processing model: {count_parameters(model):,} parameters")
            model, history = train_post(model, inputs, targets, config, ckpt_path, progress=True)
    except TrainingDivergedError as exc:
        if exc.history is not None:
            exc.history.to_csv(loss_path, index=False)
        raise

    if config.epochs == 0:
        save_checkpoint(ckpt_path, model, stage, config, extra={"image_size": model.image_size})
    history.to_csv(loss_path, index=False)
    final = history["loss"].iloc[-1] if len(history) else float("nan")
    print(f"💾 Saved {stage.value} checkpoint to {ckpt_path} (final loss {final:.5f})")
    return CommandResult([ckpt_path, loss_path], config=config.model_dump(mode="json"), seeds=seeds)


def cmd_denoise(args) -> CommandResult:
    out = _out_dir(args)
    path = out / DENOISED_FILE
    ensure_fresh(path)
    dmodel, meta, _ = load_checkpoint(args.diffusion_checkpoint, ModelKind.DIFFUSION)
    schedule = schedule_from_meta(meta, args.steps)
    pmodel = None
    if args.post_checkpoint:
        pmodel = load_checkpoint(args.post_checkpoint, ModelKind.POST).model
    stack = _select_stack(args)
    result = denoise_stack(
        dmodel, pmodel, stack, schedule,
        seed=args.seed, batch_size=args.batch_size,
        deterministic=not args.stochastic, progress=True,
    )
    write_mrc(result, path)
    stages = "diffusion + post" if pmodel is not None else "diffusion only"
    print(f"💾 Denoised {len(result)} images ({stages}, {schedule.T} steps) → {path}")
    params = {"inference_steps": schedule.T, "deterministic": not args.stochastic}
    return CommandResult([path], config=params, seeds={"sampling": args.seed})


def cmd_baseline(args) -> CommandResult:
    out = _out_dir(args)
    path = out / DENOISED_FILE
    ensure_fresh(path)
    stack = _select_stack(args)
    if args.exe:
        result = run_external(args.exe, stack, timeout=args.timeout)
        label = args.exe
    else:
        if not args.filter:
            raise ValueError("Give --filter or --exe")
        spec = FilterSpec(kind=FilterKind(args.filter), sigma=args.sigma, noise_var=args.noise_var)
        result = filter_stack(spec, stack)
        label = spec.label
    write_mrc(result, path)
    print(f"💾 {label}: filtered {len(result)} images → {path}")
    return CommandResult([path], config={"method": label})


def cmd_eval(args) -> CommandResult:
    out = _out_dir(args)
    csv_path, json_path = out / METRICS_CSV, out / METRICS_JSON
    ensure_fresh(csv_path, json_path)
    denoised = load_stack(args.denoised)
    clean = _select_stack(args, which="clean")
    dataset_name = args.dataset_name or (Path(args.dataset).name if args.dataset else Path(args.clean).stem)
    report = evaluate_stack(denoised, clean, args.method, dataset_name)
    report.write_csv(csv_path)
    report.write_json(json_path)
    means = report.aggregates()["mean"]
    print(
        f"📊 {args.method} on {dataset_name}: MSE {means['mse']:.4g}  "
        f"PSNR {means['psnr_db']:.3f} dB  SSIM {means['ssim']:.4f}  ({len(report.images)} images)"
    )
    return CommandResult([csv_path, json_path])


def cmd_compare(args) -> CommandResult:
    out = _out_dir(args)
    path = out / COMPARISON_FILE
    ensure_fresh(path)
    reports = [MetricsReport.read_json(p) for p in args.reports]
    table = compare_reports(reports)
    write_comparison(table, path)
    print(table.to_string(float_format=lambda v: f"{v:.4g}"))
    print(f"💾 Saved comparison of {len(reports)} reports to {path}")
    return CommandResult([path])


def cmd_recon(args) -> CommandResult:
    poses = _require(args.poses, "Pose manifest (recon needs known poses)")
    out = _out_dir(args)
    path = out / RECON_FILE
    ensure_fresh(path)
    stack = load_stack(args.input)
    manifest = load_manifest(poses)
    metadata = manifest.metadata(Split(args.split) if args.split else None)
    if len(metadata) != len(stack):
        raise ValueError(
            f"Pose manifest lists {len(metadata)} images for the selection, stack has {len(stack)}"
        )
    stack = ImageStack(images=stack.images, pixel_size=manifest.pixel_size, metadata=metadata)
    volume = reconstruct(
        stack,
        weight_floor=args.weight_floor,
        n_jobs=args.n_jobs,
        denormalize=not args.no_denormalize,
        progress=True,
    )
    write_mrc(volume, path)
    print(f"💾 Reconstructed {volume.side}³ map from {len(stack)} images → {path}")
    params = {"pose_source": str(poses), "weight_floor": args.weight_floor, "split": args.split}
    return CommandResult([path], config=params)


def cmd_fsc(args) -> CommandResult:
    out = _out_dir(args)
    csv_path, res_path = out / FSC_FILE, out / RESOLUTION_FILE
    ensure_fresh(csv_path, res_path)
    maps = []
    for p in (args.map_a, args.map_b):
        data = read_mrc(p)
        if not isinstance(data, DensityMap):
            raise ValueError(f"{p} holds an image stack, expected a density map")
        maps.append(data)
    curve = fsc(*maps)
    estimate = resolution_at(curve, args.threshold)
    curve.write_csv(csv_path)
    res_path.write_text(estimate.model_dump_json(indent=2))
    print(f"📐 Resolution: {estimate.describe()}")
    return CommandResult([csv_path, res_path], config={"threshold": args.threshold})


def _label(path: str) -> str:
    """label=path or just path (labelled by its directory)."""
    return Path(path).parent.name or Path(path).stem


def _labelled(values: list[str]) -> dict[str, str]:
    pairs = {}
    for value in values:
        label, sep, path = value.partition("=")
        if not sep:
            label, path = _label(value), value
        pairs[label] = path
    return pairs


def cmd_plot(args) -> CommandResult:
    out = _out_dir(args)
    outputs = []
    if not args.fsc and not args.loss:
        raise ValueError("Nothing to plot: give --fsc and/or --loss CSV files")
    fsc_path, loss_path = out / "fsc.html", out / "loss.html"
    ensure_fresh(*([fsc_path] if args.fsc else []), *([loss_path] if args.loss else []))
    # read every input before the first figure is written
    curves = {label: FSCCurve.read_csv(p) for label, p in _labelled(args.fsc).items()}
    histories = {label: pd.read_csv(p) for label, p in _labelled(args.loss).items()}
    if curves:
        outputs.append(write_figure(fsc_figure(curves, args.threshold), fsc_path))
    if histories:
        outputs.append(write_figure(loss_figure(histories, args.window), loss_path))
    for p in outputs:
        print(f"📈 Wrote {p}")
    return CommandResult(outputs)


# --- parser ---

def _add_selection(parser: argparse.ArgumentParser, clean: bool = False) -> None:
    parser.add_argument("--dataset", help="Dataset directory written by `simulate`")
    parser.add_argument("--split", default=Split.TEST.value, choices=[s.value for s in Split])
    if clean:
        parser.add_argument("--clean", help="Clean reference MRC stack")
    else:
        parser.add_argument("--input", help="MRC stack to process")


def build_parser() -> argparse.ArgumentParser:
    parser = CLIParser(prog="cryo-denoise", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--serial", action="store_true", help="Single-threaded, deterministic execution")
    parser.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, handler: Callable, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help)
        p.add_argument("--out", required=True, help="Output directory")
        p.set_defaults(handler=handler)
        return p

    p = command("phantom", cmd_phantom, "Write a synthetic density map")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--blobs", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--voxel-size", type=float, default=1.0)

    p = command("simulate", cmd_simulate, "Simulate a paired noisy/clean dataset")
    p.add_argument("--config", required=True, help="SimulationConfig JSON")
    p.add_argument("--map", required=True, help="Density map MRC")

    p = command("train", cmd_train, "Train the diffusion or post-processing model")
    p.add_argument("--stage", required=True, choices=[k.value for k in ModelKind])
    p.add_argument("--dataset", required=True)
    p.add_argument("--config", help="TrainConfig JSON (stage defaults when omitted)")
    p.add_argument("--diffusion-checkpoint", help="Stage-1 checkpoint (post stage)")
    p.add_argument("--sample-steps", type=int, help="Respaced sampling steps for stage-1 outputs")
    p.add_argument("--sample-seed", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=32, help="Sampling batch size")

    p = command("denoise", cmd_denoise, "Denoise a stack with trained checkpoints")
    p.add_argument("--diffusion-checkpoint", required=True)
    p.add_argument("--post-checkpoint", help="Omit for diffusion-only output")
    _add_selection(p)
    p.add_argument("--steps", type=int, help="Inference steps (respaced from the training schedule)")
    p.add_argument("--stochastic", action="store_true", help="Add sampling noise at every step")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=32)

    p = command("baseline", cmd_baseline, "Run a classical filter or an external denoiser")
    _add_selection(p)
    p.add_argument("--filter", choices=[k.value for k in FilterKind])
    p.add_argument("--sigma", type=float)
    p.add_argument("--noise-var", type=float)
    p.add_argument("--exe", help="External command, invoked as <exe> <in.mrc> <out.mrc>")
    p.add_argument("--timeout", type=float)

    p = command("eval", cmd_eval, "Score a denoised stack against clean references")
    p.add_argument("--denoised", required=True)
    _add_selection(p, clean=True)
    p.add_argument("--method", required=True)
    p.add_argument("--dataset-name")

    p = command("compare", cmd_compare, "Build a method comparison table")
    p.add_argument("--reports", nargs="+", required=True, help="metrics.json files")

    p = command("recon", cmd_recon, "Reconstruct a map from images at known poses")
    p.add_argument("--input", required=True)
    p.add_argument("--poses", help="Dataset manifest.json holding the orientations")
    p.add_argument("--split", choices=[s.value for s in Split],
                   help="Split the stack was drawn from (all images when omitted)")
    p.add_argument("--weight-floor", type=float, default=DEFAULT_WEIGHT_FLOOR)
    p.add_argument("--n-jobs", type=int, default=1)
    p.add_argument("--no-denormalize", action="store_true")

    p = command("fsc", cmd_fsc, "Fourier shell correlation between two maps")
    p.add_argument("--map-a", required=True)
    p.add_argument("--map-b", required=True)
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)

    p = command("plot", cmd_plot, "Plot FSC and loss CSV files as HTML")
    p.add_argument("--fsc", nargs="*", default=[], help="fsc.csv files, optionally label=path")
    p.add_argument("--loss", nargs="*", default=[], help="loss CSV files, optionally label=path")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--window", type=int, default=50)
    return parser


def configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def _parameters(args) -> dict:
    skip = {"handler", "serial", "verbose"}
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k not in skip}


def main(argv: Optional[list[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    if args.serial:
        set_serial_mode()

    started = time.perf_counter()
    stamp = utc_now()
    try:
        result = args.handler(args)
    except NumericalFailureError as exc:
        print(f"❌ Numerical failure: {exc}", file=sys.stderr)
        kept = getattr(exc, "checkpoint_path", None)
        if kept:
            print(f"⚠️ Last good weights kept in {kept}", file=sys.stderr)
        return EXIT_NUMERIC
    except (MRCFormatError, OSError) as exc:
        print(f"❌ I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"❌ {exc}", file=sys.stderr)
        return EXIT_USAGE

    entry = RunEntry(
        command=args.command,
        argv=argv,
        started_at=stamp,
        wall_clock_s=round(time.perf_counter() - started, 3),
        config=result.config,
        parameters=_parameters(args),
        seeds=result.seeds,
        inputs=_input_paths(args),
        outputs=[ArtifactRecord.of(p) for p in result.outputs],
    )
    RunManifest.append(args.out, entry)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
