"""Command-line entry points.

Subcommands: phantom-gen, mask-gen, simulate, train-recon, train-enhance,
reconstruct, evaluate, report. Exit codes: 0 success, 2 configuration
error, 3 data error, 4 runtime failure. ``LONGRECON_OUTPUT_ROOT``
overrides relative output paths. A ``--config`` JSON/TOML file provides
defaults that explicit flags override; every run writes a resolved-config
snapshot next to its outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

try:  # tomllib is 3.11+; TOML configs need it, JSON always works
    import tomllib
except ImportError:
    tomllib = None

import numpy as np

from . import __version__
from .containers import load_acquisition_volume, save_acquisition_volume
from .data import generate_phantom_dataset, load_dataset, save_dataset, simulate_acquisition, split_subjects
from .enhancer import Enhancer, EnhancerConfig
from .errors import (
    CheckpointError,
    ConfigurationError,
    DataError,
    InvalidInputError,
    LongreconError,
)
from .evaluate import evaluate_samples, write_reports
from .experiments import DESK_ENHANCER, DESK_VARNET, acquisition_seed, prepare_enhance_triples, simulate_cases
from .masks import generate_poisson_mask
from .metrics import MetricReport
from .nifti import write_nifti
from .phantom import PhantomConfig
from .pipeline import build_atlas, reconstruct_volume
from .registration import AffineOptions
from .tasks import EnhanceTask, ReconTask
from .training import TrainConfig, checkpoint_load, train
from .varnet import VarNet, VarNetConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


def _output_root() -> Path:
    return Path(os.environ.get("LONGRECON_OUTPUT_ROOT", "."))


def _resolve_out(path) -> Path:
    path = Path(path)
    return path if path.is_absolute() else _output_root() / path


def _load_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    if path.suffix == ".toml":
        if tomllib is None:
            raise ConfigurationError(
                "TOML configs need Python >= 3.11; use a JSON config instead"
            )
        return tomllib.loads(path.read_text())
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"cannot parse config {path}: {exc}") from exc


def _merge_config(args: argparse.Namespace, parser: argparse.ArgumentParser) -> argparse.Namespace:
    """File values fill in anything the command line left at its default."""
    if not getattr(args, "config", None):
        return args
    file_values = _load_config_file(args.config)
    for key, value in file_values.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise ConfigurationError(f"unknown config key: {key}")
        if parser.get_default(attr) == getattr(args, attr):
            setattr(args, attr, value)
    return args


def _snapshot(args: argparse.Namespace, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()
                if k not in ("func", "parser")}
    (out_dir / "resolved_config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True))


def _split_cases(cases, splits: dict, seed: int):
    if splits:
        by = {"train": [], "val": [], "test": []}
        for case in cases:
            split = splits.get(case.subject_id)
            if split not in by:
                raise ConfigurationError(
                    f"subject {case.subject_id} has no valid split assignment"
                )
            by[split].append(case)
        return by["train"], by["val"], by["test"]
    return split_subjects(cases, (0.7, 0.15, 0.15), seed)


def cmd_phantom_gen(args) -> int:
    if args.n_subjects < 1:
        raise ConfigurationError(f"--n-subjects must be >= 1, got {args.n_subjects}")
    out_dir = _resolve_out(args.out)
    cfg = PhantomConfig(
        n_coils=args.coils,
        deformation_magnitude=args.deformation,
        contrast_shift=args.contrast_shift,
        atrophy_factor=args.atrophy,
        noise_std=args.prior_noise,
        dims=(args.dims[0], args.dims[1]),
        n_slices=args.slices,
        texture_amp=args.texture,
    )
    cases = generate_phantom_dataset(args.n_subjects, cfg, seed=args.seed)
    train, val, test = split_subjects(cases, tuple(args.split), seed=args.seed)
    splits = {c.subject_id: name for name, group in
              (("train", train), ("val", val), ("test", test)) for c in group}
    manifest = save_dataset(cases, out_dir, splits=splits,
                            extra={"seed": args.seed, "phantom_config": cfg.__dict__})
    _snapshot(args, out_dir)
    print(f"wrote {len(cases)} subjects to {manifest}")
    return EXIT_OK


def cmd_mask_gen(args) -> int:
    import h5py

    out = _resolve_out(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    mask = generate_poisson_mask(tuple(args.dims), args.acceleration, args.center_radius,
                                 args.seed)
    with h5py.File(out, "w") as f:
        f.create_dataset("mask", data=mask.mask)
        f.attrs["target_R"] = mask.target_R
        f.attrs["center_radius"] = mask.center_radius
        f.attrs["seed"] = mask.seed
    print(f"mask {mask.dims} R={mask.acceleration:.2f} "
          f"({mask.n_sampled} samples) -> {out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cases, _ = load_dataset(args.manifest)
    out_dir = _resolve_out(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for case in cases:
        samples = simulate_acquisition(
            case, n_coils=args.coils, R=args.acceleration,
            seed=acquisition_seed(args.seed, case.subject_id),
            center_radius=args.center_radius, noise_std=args.noise_std,
        )
        path = out_dir / f"{case.subject_id}_R{args.acceleration:g}.h5"
        save_acquisition_volume(path, [s.kspace_under for s in samples],
                                samples[0].mask)
    _snapshot(args, out_dir)
    print(f"simulated {len(cases)} volumes at R={args.acceleration:g} -> {out_dir}")
    return EXIT_OK


def cmd_train_recon(args) -> int:
    cases, splits = load_dataset(args.manifest)
    train_cases, val_cases, _ = _split_cases(cases, splits, args.seed)
    if not train_cases or not val_cases:
        raise ConfigurationError("need non-empty train and val splits")
    train_samples = simulate_cases(train_cases, args.coils, args.acceleration,
                                   args.seed, args.center_radius)
    val_samples = simulate_cases(val_cases, args.coils, args.acceleration,
                                 args.seed, args.center_radius)
    model = VarNet(replace(DESK_VARNET, n_cascades=args.cascades,
                           unet_channels=args.channels, seed=args.seed))
    cfg = TrainConfig(stage="recon", epochs=args.epochs, batch_size=args.batch_size,
                      lr_init=args.lr, seed=args.seed)
    out_dir = _resolve_out(args.out)
    _snapshot(args, out_dir)
    model, state, _ = train(model, ReconTask(train_samples, val_samples), cfg,
                            out_dir=out_dir)
    print(f"best validation SSIM {state.best_val_ssim:.4f} "
          f"(epoch {state.best_epoch}) -> {out_dir / 'best'}")
    return EXIT_OK


def cmd_train_enhance(args) -> int:
    cases, splits = load_dataset(args.manifest)
    train_cases, val_cases, _ = _split_cases(cases, splits, args.seed)
    varnet, _ = checkpoint_load(args.varnet_checkpoint)
    if not isinstance(varnet, VarNet):
        raise CheckpointError(f"{args.varnet_checkpoint} is not a varnet checkpoint")
    train_samples = simulate_cases(train_cases, args.coils, args.acceleration,
                                   args.seed, args.center_radius)
    val_samples = simulate_cases(val_cases, args.coils, args.acceleration,
                                 args.seed, args.center_radius)
    missing = [s.subject_id for s in train_samples + val_samples if s.prior is None]
    if args.prior_source == "subject_prior" and missing:
        raise ConfigurationError(
            f"subjects without prior scans cannot train the enhancer: {sorted(set(missing))}"
        )
    override = None
    if args.prior_source == "atlas":
        atlas = build_atlas([c.current_volume for c in train_cases])
        override = lambda s: atlas[s.slice_index]
    elif args.prior_source == "none":
        override = lambda s: None
    train_triples = prepare_enhance_triples(varnet, train_samples, prior_override=override)
    val_triples = prepare_enhance_triples(varnet, val_samples, prior_override=override)
    model = Enhancer(replace(DESK_ENHANCER, prior_source=args.prior_source, seed=args.seed))
    cfg = TrainConfig(stage="enhance", epochs=args.epochs, batch_size=args.batch_size,
                      lr_init=args.lr, early_stop_patience=args.early_stop_patience,
                      seed=args.seed)
    out_dir = _resolve_out(args.out)
    _snapshot(args, out_dir)
    task = EnhanceTask(train_triples, val_triples, augment=args.augment, seed=args.seed)
    model, state, _ = train(model, task, cfg, out_dir=out_dir)
    print(f"best validation SSIM {state.best_val_ssim:.4f} "
          f"(epoch {state.best_epoch}) -> {out_dir / 'best'}")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    slices, mask, _ = load_acquisition_volume(args.input)
    varnet, _ = checkpoint_load(args.varnet_checkpoint)
    enhancer = None
    prior_volume = None
    if args.enhancer_checkpoint:
        enhancer, _ = checkpoint_load(args.enhancer_checkpoint)
        if not isinstance(enhancer, Enhancer):
            raise CheckpointError(f"{args.enhancer_checkpoint} is not an enhancer checkpoint")
        if enhancer.cfg.prior_source != "none" and not args.prior:
            raise ConfigurationError(
                f"enhancer expects prior_source={enhancer.cfg.prior_source!r}; pass --prior"
            )
        if args.prior:
            from .nifti import read_nifti

            prior_volume, _ = read_nifti(args.prior)
    volume, timing = reconstruct_volume(
        slices, mask, varnet, enhancer=enhancer, prior_volume=prior_volume,
        registration_backend=args.registration_backend,
    )
    out = _resolve_out(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_nifti(out, volume.astype(np.float32))
    report = {"output": str(out), "timing": timing.summary()}
    report_path = out.with_suffix(".report.json") if out.suffix != ".gz" \
        else Path(str(out)[: -len(".nii.gz")] + ".report.json")
    report_path.write_text(json.dumps(report, indent=2))
    print(f"reconstructed {len(slices)} slices -> {out}")
    print(f"timing: registration median "
          f"{timing.summary()['registration_seconds_median']:.3f}s, reconstruction median "
          f"{timing.summary()['reconstruction_seconds_median']:.3f}s per slice")
    return EXIT_OK


def _evaluate_report(args, cases, splits) -> MetricReport:
    if not args.accelerations or any(R < 1 for R in args.accelerations):
        raise ConfigurationError("accelerations must be a nonempty list of values >= 1")
    train_cases, _, test_cases = _split_cases(cases, splits, args.seed)
    if not test_cases:
        raise ConfigurationError("no test subjects in the manifest")
    atlas = build_atlas([c.current_volume for c in train_cases]) if args.include_atlas else None
    report = MetricReport()
    ckpt_root = Path(args.checkpoint_root)
    for R in args.accelerations:
        varnet_dir = ckpt_root / f"varnet_R{R:g}"
        if not varnet_dir.exists():
            raise ConfigurationError(f"missing checkpoint for stage recon at R={R:g}: {varnet_dir}")
        varnet, _ = checkpoint_load(varnet_dir)
        enhancer = None
        enh_dir = ckpt_root / f"enhancer_R{R:g}"
        if enh_dir.exists():
            enhancer, _ = checkpoint_load(enh_dir)
        elif not args.non_enhanced_only:
            raise ConfigurationError(f"missing checkpoint for stage enhance at R={R:g}: {enh_dir}")
        test_samples = simulate_cases(test_cases, args.coils, R, args.seed,
                                      args.center_radius)
        evaluate_samples(
            test_samples, R, varnet, enhancer,
            atlas_volume_for=(lambda s: atlas[s.slice_index]) if atlas is not None else None,
            include_atlas=args.include_atlas,
            include_no_prior=args.include_no_prior,
            report=report,
        )
    return report


def cmd_evaluate(args) -> int:
    cases, splits = load_dataset(args.manifest)
    report = _evaluate_report(args, cases, splits)
    out_dir = _resolve_out(args.out)
    _snapshot(args, out_dir)
    write_reports(report, out_dir, alpha=args.alpha)
    print(f"evaluation reports -> {out_dir}")
    return EXIT_OK


def cmd_report(args) -> int:
    """Re-render aggregates and plots from an existing per-slice CSV."""
    import csv as _csv

    src = Path(args.eval_dir) / "per_slice_metrics.csv"
    if not src.exists():
        raise DataError(f"no per-slice CSV at {src}")
    report = MetricReport()
    with src.open() as f:
        for row in _csv.DictReader(f):
            try:
                report.add(
                    subject_id=row["subject_id"], slice_index=int(row["slice_index"]),
                    method=row["method"], R=float(row["R"]), ssim=float(row["ssim"]),
                    psnr=float(row["psnr"]), nrmse=float(row["nrmse"]),
                )
            except (KeyError, ValueError) as exc:
                raise DataError(f"malformed row in {src}: {exc}") from exc
    out_dir = _resolve_out(args.out or args.eval_dir)
    write_reports(report, out_dir, alpha=args.alpha)
    print(f"reports regenerated -> {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="longrecon",
        description="Prior-informed accelerated MRI reconstruction pipeline",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON or TOML config file; flags override")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("phantom-gen", help="generate longitudinal phantom subjects")
    common(p)
    p.add_argument("--n-subjects", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dims", type=int, nargs=2, default=[128, 128])
    p.add_argument("--slices", type=int, default=8)
    p.add_argument("--coils", type=int, default=4)
    p.add_argument("--deformation", type=float, default=1.0)
    p.add_argument("--contrast-shift", type=float, default=0.05)
    p.add_argument("--atrophy", type=float, default=0.97)
    p.add_argument("--prior-noise", type=float, default=0.001)
    p.add_argument("--texture", type=float, default=0.45)
    p.add_argument("--split", type=float, nargs=3, default=[0.7, 0.15, 0.15])
    p.set_defaults(func=cmd_phantom_gen)

    p = sub.add_parser("mask-gen", help="generate a Poisson-disc sampling mask")
    common(p)
    p.add_argument("--dims", type=int, nargs=2, default=[218, 170])
    p.add_argument("--acceleration", "-R", type=float, required=True)
    p.add_argument("--center-radius", type=int, default=16)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mask_gen)

    p = sub.add_parser("simulate", help="retrospectively undersample a dataset")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--acceleration", "-R", type=float, required=True)
    p.add_argument("--coils", type=int, default=4)
    p.add_argument("--center-radius", type=int, default=8)
    p.add_argument("--noise-std", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train-recon", help="train the initial reconstruction network")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--acceleration", "-R", type=float, required=True)
    p.add_argument("--coils", type=int, default=4)
    p.add_argument("--center-radius", type=int, default=8)
    p.add_argument("--cascades", type=int, default=2)
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--epochs", type=int, default=8)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_recon)

    p = sub.add_parser("train-enhance", help="train the prior-conditioned enhancer")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--acceleration", "-R", type=float, required=True)
    p.add_argument("--varnet-checkpoint", required=True)
    p.add_argument("--coils", type=int, default=4)
    p.add_argument("--center-radius", type=int, default=8)
    p.add_argument("--prior-source", choices=["subject_prior", "atlas", "none"],
                   default="subject_prior")
    p.add_argument("--epochs", type=int, default=90)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--early-stop-patience", type=int, default=35)
    p.add_argument("--augment", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_enhance)

    p = sub.add_parser("reconstruct", help="reconstruct a k-space container")
    common(p)
    p.add_argument("--input", required=True, help="HDF5 acquisition container")
    p.add_argument("--varnet-checkpoint", required=True)
    p.add_argument("--enhancer-checkpoint")
    p.add_argument("--prior", help="NIfTI prior volume matching the input slices")
    p.add_argument("--registration-backend", choices=["identity", "affine", "external"],
                   default="affine")
    p.add_argument("--out", required=True, help="output NIfTI path")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="run the method matrix on the test split")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint-root", required=True)
    p.add_argument("--accelerations", "-R", type=float, nargs="+", default=[5.0, 10.0])
    p.add_argument("--coils", type=int, default=4)
    p.add_argument("--center-radius", type=int, default=8)
    p.add_argument("--include-atlas", action="store_true")
    p.add_argument("--include-no-prior", action="store_true")
    p.add_argument("--non-enhanced-only", action="store_true")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="re-render reports from per-slice CSV")
    common(p)
    p.add_argument("--eval-dir", required=True)
    p.add_argument("--out")
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _merge_config(args, parser)
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, InvalidInputError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except LongreconError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
