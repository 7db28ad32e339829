"""Command line interface.

Sub-commands chain into a batch pipeline:

.. code-block:: shell

    backbone-refine gen-synthetic --kind mixed --n-res 24 --count 30 --test-count 10 --out-dir data
    backbone-refine corrupt --manifest data/manifest.json --random-t --out-dir corrupted
    backbone-refine train --manifest data/manifest.json --config train.json --out model/checkpoint.json
    backbone-refine refine --manifest corrupted/manifest.json --checkpoint model/checkpoint.json --out-dir refined
    backbone-refine eval --manifest refined/manifest.json --format tsv

Every command writes the resolved ``run-config.json`` next to its outputs,
exits 0 on success and prints one ``error: <Class>: <message>`` line on failure.
"""
import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from functools import partial
from pathlib import Path
from typing import Optional, Sequence, Union

import pandas as pd

from backbone_refine import __version__, config
from backbone_refine.diffusion.forward import NoiseRecord, apply_noise, corrupt
from backbone_refine.diffusion.schedule import Channel, ScheduleConfig, make_schedule
from backbone_refine.geometry import frames_from_backbone
from backbone_refine.manifest import Manifest, ManifestEntry, ManifestError, Split, load_manifest
from backbone_refine.metrics import frame_fape, report, score
from backbone_refine.model.checkpoint import load_checkpoint, save_checkpoint
from backbone_refine.model.network import ModelRefiner
from backbone_refine.model.training import TrainConfig, train
from backbone_refine.pdb import read_pdb, save_pdb
from backbone_refine.refinement import GradientRefiner, OracleRefiner, RefineContext, Refiner, iterate_refine, trace_table, transport_atoms
from backbone_refine.report import ReportFormat, ReportRow, format_report
from backbone_refine.structure import DecoyPair
from backbone_refine.synthetic import SyntheticKind, make_synthetic
from backbone_refine.utils import make_rng, ordered_map

logger = logging.getLogger(__name__)

RUN_CONFIG_FILE = "run-config.json"
MANIFEST_FILE = "manifest.json"

#: Random stream keys of the commands under the run seed
_CORRUPT_STREAM = 10
_SYNTHETIC_STREAM = 11


class OutputExists(Exception):
    """Output would overwrite existing files and --force was not given."""


@dataclass
class RunConfig:
    """Resolved parameters of one command run, echoed to ``run-config.json``."""

    command: str
    seed: int = 0
    jobs: int = 1

    #: Command specific arguments, paths as strings
    args: dict = field(default_factory=dict)

    schedule: Optional[dict] = None
    train: Optional[dict] = None
    constants_version: int = config.CONSTANTS_VERSION
    version: str = __version__

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        assert set(data) <= known, f"Unknown run config keys {sorted(set(data) - known)}"
        return cls(**data)

    def save(self, directory: Union[str, Path]) -> Path:
        path = Path(directory) / RUN_CONFIG_FILE
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n")
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _run_config(args: argparse.Namespace, **extra) -> RunConfig:
    skip = {"command", "seed", "jobs", "log_level", "func"}
    plain = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k not in skip}
    return RunConfig(command=args.command, seed=args.seed, jobs=args.jobs, args=plain, **extra)


def _prepare_out_dir(out_dir: Path, force: bool) -> Path:
    """Create the output directory, refusing to reuse a non-empty one without --force."""
    if out_dir.exists() and any(out_dir.iterdir()) and not force:
        raise OutputExists(f"{out_dir} is not empty, use --force to overwrite")
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def _check_file_target(path: Path, force: bool):
    if path.exists() and not force:
        raise OutputExists(f"{path} exists, use --force to overwrite")
    path.parent.mkdir(parents=True, exist_ok=True)


def _schedule_config(args: argparse.Namespace) -> ScheduleConfig:
    if getattr(args, "schedule_config", None):
        return ScheduleConfig.load(args.schedule_config)
    return ScheduleConfig()


def cmd_gen_synthetic(args: argparse.Namespace) -> int:
    """Write synthetic reference backbones and a reference-only manifest."""
    assert args.count >= 1, f"--count must be positive, got {args.count}"
    assert 0 <= args.test_count <= args.count, f"--test-count must be within 0..{args.count}"
    out_dir = _prepare_out_dir(Path(args.out_dir), args.force)
    entries = []
    for i in range(args.count):
        if args.kind == "mixed":
            kind = SyntheticKind.helix if i % 2 == 0 else SyntheticKind.extended
        else:
            kind = SyntheticKind(args.kind)
        seed = int(make_rng(args.seed, _SYNTHETIC_STREAM, i).integers(2**31))
        structure = make_synthetic(kind, args.n_res, rng_seed=seed, jitter=args.jitter)
        target_id = f"{kind.value}-{i:03d}"
        path = out_dir / f"{target_id}.pdb"
        save_pdb(structure, path)
        split = Split.test if i >= args.count - args.test_count else Split.train
        entries.append(ManifestEntry(target_id, path.resolve(), split))
    Manifest(entries, out_dir.resolve()).save(out_dir / MANIFEST_FILE)
    _run_config(args).save(out_dir)
    logger.info("Generated %d synthetic structures in %s", args.count, out_dir)
    return 0


def _corrupt_entry(args, schedules, out_dir: Path, item) -> dict:
    index, entry = item
    reference = read_pdb(entry.reference_path)
    frames = frames_from_backbone(reference)
    s_pos, s_ori = schedules
    record_path = out_dir / f"{entry.target_id}.noise.json"
    if args.replay:
        record = NoiseRecord.load(Path(args.replay) / record_path.name)
        noisy = apply_noise(frames, record, s_pos, s_ori)
    else:
        rng = make_rng(args.seed, _CORRUPT_STREAM, index)
        t = args.timestep if args.timestep else int(rng.integers(1, s_pos.n_steps + 1))
        noisy, record = corrupt(frames, t, s_pos, s_ori, rng)
    decoy = transport_atoms(reference, frames, noisy)
    decoy_path = out_dir / f"{entry.target_id}.decoy.pdb"
    save_pdb(decoy, decoy_path)
    record.save(record_path)
    fape = frame_fape(decoy, reference)
    logger.info("Corrupted %s at T=%d, FAPE %.4f", entry.target_id, record.timestep, fape)
    return {"target_id": entry.target_id, "timestep": record.timestep, "fape": fape, "decoy_path": decoy_path.resolve()}


def cmd_corrupt(args: argparse.Namespace) -> int:
    """Diffuse every reference structure to a decoy and store the noise that was used."""
    manifest = load_manifest(args.manifest)
    schedule_cfg = _schedule_config(args)
    schedules = schedule_cfg.build()
    out_dir = _prepare_out_dir(Path(args.out_dir), args.force)
    entries = manifest.select(args.split)
    results = ordered_map(partial(_corrupt_entry, args, schedules, out_dir), list(enumerate(entries)), args.jobs)

    corrupted = [replace(e, decoy_path=r["decoy_path"], refined_path=None) for e, r in zip(entries, results)]
    Manifest(corrupted, out_dir.resolve()).save(out_dir / MANIFEST_FILE)
    table = pd.DataFrame([{k: r[k] for k in ("target_id", "timestep", "fape")} for r in results])
    table.to_csv(out_dir / "corruption.tsv", sep="\t", index=False, float_format="%.6f")
    _run_config(args, schedule=schedule_cfg.to_dict()).save(out_dir)
    return 0


def _make_refiner(args: argparse.Namespace) -> Refiner:
    if args.oracle:
        return OracleRefiner()
    if args.gradient:
        return GradientRefiner()
    params, meta = load_checkpoint(args.checkpoint)
    return ModelRefiner(params, k=meta.get("train", {}).get("k", config.DEFAULT_K_NEIGHBOURS))


def _refine_entry(refiner: Refiner, n_steps: int, out_dir: Path, entry: ManifestEntry):
    pair = DecoyPair(read_pdb(entry.decoy_path), read_pdb(entry.reference_path), entry.target_id)
    start = frames_from_backbone(pair.decoy)
    context = RefineContext(sequence=pair.decoy.sequence, reference=frames_from_backbone(pair.reference))
    refined_frames, trace = iterate_refine(refiner, start, n_steps, context)
    refined = transport_atoms(pair.decoy, start, refined_frames)
    path = out_dir / f"{entry.target_id}.refined.pdb"
    save_pdb(refined, path)
    table = trace_table(trace)
    table.insert(0, "target_id", entry.target_id)
    logger.info("Refined %s, FAPE %.4f -> %.4f", entry.target_id, trace[0].fape, trace[-1].fape)
    return path.resolve(), table


def cmd_refine(args: argparse.Namespace) -> int:
    """Refine every decoy of the manifest, writing refined structures and a per-step trace."""
    assert args.steps >= 1, f"--steps must be positive, got {args.steps}"
    manifest = load_manifest(args.manifest)
    refiner = _make_refiner(args)
    out_dir = _prepare_out_dir(Path(args.out_dir), args.force)
    entries = [e for e in manifest.select(args.split) if e.decoy_path is not None]
    if not entries:
        raise ManifestError(f"No decoys to refine in {args.manifest}")
    results = ordered_map(partial(_refine_entry, refiner, args.steps, out_dir), entries, args.jobs)

    refined = [replace(e, refined_path=path) for e, (path, _) in zip(entries, results)]
    Manifest(refined, out_dir.resolve()).save(out_dir / MANIFEST_FILE)
    pd.concat([t for _, t in results], ignore_index=True).to_csv(out_dir / "trace.tsv", sep="\t", index=False, float_format="%.6f")
    _run_config(args).save(out_dir)
    return 0


def _eval_row(job: tuple) -> ReportRow:
    target_id, decoy_path, refined_path, reference_path = job
    pair = DecoyPair(read_pdb(decoy_path), read_pdb(reference_path), target_id)
    refined = None
    if refined_path:
        refined = score(DecoyPair(read_pdb(refined_path), pair.reference, target_id).decoy, pair.reference)
    return ReportRow(target_id, report(pair), refined)


def cmd_eval(args: argparse.Namespace) -> int:
    """Score decoys, and refined structures when present, against their references."""
    jobs = []
    if args.manifest:
        for e in load_manifest(args.manifest).select(args.split):
            if e.decoy_path is None:
                logger.warning("%s has no decoy, skipped", e.target_id)
                continue
            jobs.append((e.target_id, e.decoy_path, e.refined_path, e.reference_path))
    for spec in args.pairs or []:
        parts = spec.split(",")
        if len(parts) != 3:
            raise ManifestError(f"--pairs expects decoy,refined,reference, got {spec!r}")
        decoy, refined, reference = parts
        jobs.append((Path(decoy).stem, decoy, refined or None, reference))
    if not jobs:
        raise ManifestError("Nothing to evaluate, give --manifest or --pairs")

    rows = ordered_map(_eval_row, jobs, args.jobs)
    text = format_report(rows, args.format)
    if args.out:
        out = Path(args.out)
        _check_file_target(out, args.force)
        out.write_text(text)
        _run_config(args).save(out.parent)
    else:
        sys.stdout.write(text)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    """Train the toy refiner on the manifest's training split."""
    cfg = TrainConfig.load(args.config) if args.config else TrainConfig()
    overrides = {} if args.seed is None else {"seed": args.seed}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    cfg = TrainConfig.from_dict({**cfg.to_dict(), **overrides})
    args.seed = cfg.seed

    out = Path(args.out)
    _check_file_target(out, args.force)
    manifest = load_manifest(args.manifest)
    train_entries = manifest.select(Split.train)
    if not train_entries:
        raise ManifestError(f"No training entries in {args.manifest}")
    if all(e.decoy_path is not None for e in train_entries):
        data = list(manifest.pairs(Split.train))
    else:
        data = manifest.references(Split.train)
    val_data = manifest.references(Split.val) or None

    params, log = train(data, cfg, val_data=val_data, jobs=args.jobs)
    meta = {"train": cfg.to_dict(), "epochs": cfg.epochs, "final": asdict(log.epochs[-1])}
    save_checkpoint(params, out, meta)
    log.save(out.with_suffix(".log.tsv"))
    _run_config(args, schedule=cfg.schedule.to_dict(), train=cfg.to_dict()).save(out.parent)
    return 0


def cmd_schedule(args: argparse.Namespace) -> int:
    """Build a variance schedule, dump it as JSON or print it as a table."""
    s = make_schedule(args.kind, args.t_max, args.beta_start, args.beta_end, Channel(args.channel))
    if args.dump:
        path = Path(args.dump)
        _check_file_target(path, args.force)
        s.save(path)
        logger.info("Wrote %s schedule to %s", s.kind.value, path)
    else:
        table = pd.DataFrame({"t": range(1, s.n_steps + 1), "beta": s.beta, "alpha_bar": s.alpha_bar})
        sys.stdout.write(table.to_csv(sep="\t", index=False))
    return 0


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--log-level", default="warning", choices=["debug", "info", "warning", "error"], help="Logging verbosity")
    common.add_argument("--seed", type=int, help="Run seed, all randomness derives from it, default 0 or the training config seed")
    common.add_argument("--jobs", type=int, default=1, help="Parallel workers over manifest entries, 0 = one per physical core")
    common.add_argument("--force", action="store_true", help="Overwrite existing outputs")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(prog="backbone-refine", description="Protein backbone diffusion and refinement toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", parents=[common], help="Generate synthetic helices and strands")
    p.add_argument("--kind", default="helix", choices=[k.value for k in SyntheticKind] + ["mixed"])
    p.add_argument("--n-res", type=int, default=24)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--test-count", type=int, default=0, help="Put the last N structures in the test split")
    p.add_argument("--jitter", type=float, default=config.SYNTHETIC_TORSION_JITTER, help="Torsion jitter in degrees")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("corrupt", parents=[common], help="Corrupt references with the forward diffusion process")
    p.add_argument("--manifest", required=True)
    when = p.add_mutually_exclusive_group(required=True)
    when.add_argument("--timestep", type=int, help="Corrupt every structure at this timestep")
    when.add_argument("--random-t", action="store_true", help="Draw a timestep per structure")
    when.add_argument("--replay", help="Directory of noise records to replay")
    p.add_argument("--schedule-config", help="ScheduleConfig JSON")
    p.add_argument("--split", choices=[s.value for s in Split])
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("refine", parents=[common], help="Refine decoys")
    which = p.add_mutually_exclusive_group(required=True)
    which.add_argument("--checkpoint", help="Trained toy refiner checkpoint")
    which.add_argument("--oracle", action="store_true", help="Jump to the reference")
    which.add_argument("--gradient", action="store_true", help="Finite-difference FAPE descent towards the reference")
    p.add_argument("--manifest", required=True)
    p.add_argument("--steps", type=int, default=config.DEFAULT_REFINE_STEPS)
    p.add_argument("--split", choices=[s.value for s in Split])
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("eval", parents=[common], help="Score decoys and refined structures")
    p.add_argument("--manifest")
    p.add_argument("--pairs", action="append", help="decoy,refined,reference PDB paths; refined may be empty")
    p.add_argument("--split", choices=[s.value for s in Split])
    p.add_argument("--format", default="tsv", choices=[f.value for f in ReportFormat])
    p.add_argument("--out", help="Report file, default stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train", parents=[common], help="Train the toy refiner")
    p.add_argument("--config", help="TrainConfig JSON")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="Checkpoint file")
    p.add_argument("--epochs", type=int, help="Override the configured epoch count")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("schedule", parents=[common], help="Build and dump a variance schedule")
    p.add_argument("--kind", default=config.DEFAULT_SCHEDULE_KIND, choices=["linear", "cosine"])
    p.add_argument("--t-max", type=int, default=config.DEFAULT_T_MAX)
    p.add_argument("--beta-start", type=float, default=config.DEFAULT_BETA_START)
    p.add_argument("--beta-end", type=float, default=config.DEFAULT_BETA_END)
    p.add_argument("--channel", default="pos", choices=[c.value for c in Channel])
    p.add_argument("--dump", help="Schedule JSON path, default print a table")
    p.set_defaults(func=cmd_schedule)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point.

    :return: Process exit code
    """
    args = build_parser().parse_args(argv)
    if args.seed is None and args.command != "train":
        args.seed = 0
    logging.basicConfig(level=args.log_level.upper(), format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr, force=True)
    try:
        return args.func(args)
    except Exception as e:
        logger.debug("Command %s failed", args.command, exc_info=True)
        sys.stderr.write(f"error: {e.__class__.__name__}: {' '.join(str(e).split())}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
