"""Command-line entry point.

Commands: simulate, make-toy, train, predict, corrupt, evaluate, fwi,
hybrid, export. Options shared by every command: --config (strict JSON),
--seed, --workers, --out.

Exit codes: 0 success, 1 usage, 2 configuration, 3 data, 4 numerical.
Relative dataset paths resolve against data.root from the config, else the
ONETFWI_DATA_DIR environment variable, else the working directory. Each
run echoes its effective settings to <out>/resolved_config.json.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import evaluation, fwi, training
from .deeponet import DeepONet, ModelConfig, paper_model_config, toy_model_config
from .fields import Grid2D, ShotGatherSet, Stage, VelocityField, make_survey_geometry
from .npyio import NpyFormatError, read_npy, write_npy
from .preprocess import CorruptionSpec, apply_corruption
from .training import DataError, TrainConfig
from .wavesim import (
    NumericalError,
    SimulationConfig,
    StabilityError,
    simulate_first_order,
    simulate_scalar,
)

EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class UsageError(Exception):
    pass


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


_TOP_KEYS = {"data", "model", "train", "simulate", "corruption", "fwi", "output"}


def _strict_keys(d: dict, allowed, where: str):
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")


def load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    _strict_keys(cfg, _TOP_KEYS, "config")
    for key in cfg:
        if not isinstance(cfg[key], dict):
            raise ConfigError(f"config section {key!r} must be an object")
    return cfg


def _build_dataclass(cls, d: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    _strict_keys(d, names, where)
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {where}: {exc}") from exc


def _sim_config(cfg: dict) -> tuple[SimulationConfig, str]:
    d = dict(cfg.get("simulate", {}))
    solver = d.pop("solver", "scalar")
    if solver not in ("scalar", "first_order"):
        raise ConfigError(f"unknown solver {solver!r}")
    allowed = {"spatial_order", "sponge_width", "sponge_strength", "free_surface"}
    _strict_keys(d, allowed, "simulate")
    try:
        return SimulationConfig(**d), solver
    except ValueError as exc:
        raise ConfigError(f"bad simulate section: {exc}") from exc


def _corruption(cfg: dict, seed_override=None) -> CorruptionSpec:
    d = dict(cfg.get("corruption", {}))
    if "masked_receivers" in d:
        d["masked_receivers"] = tuple(d["masked_receivers"])
    if seed_override is not None:
        d["seed"] = seed_override
    return _build_dataclass(CorruptionSpec, d, "corruption")


def _model_config(cfg: dict) -> ModelConfig:
    d = dict(cfg.get("model", {}))
    preset = d.pop("preset", "paper")
    if preset == "paper":
        base = paper_model_config()
    elif preset == "toy":
        base = toy_model_config()
    else:
        raise ConfigError(f"unknown model preset {preset!r}")
    if not d:
        return base
    merged = base.to_dict()
    _strict_keys(d, merged.keys(), "model")
    merged.update(d)
    try:
        return ModelConfig.from_dict(merged)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad model section: {exc}") from exc


def _train_config(cfg: dict, seed_override=None) -> TrainConfig:
    d = dict(cfg.get("train", {}))
    if seed_override is not None:
        d["seed"] = seed_override
    return _build_dataclass(TrainConfig, d, "train")


def _fwi_config(cfg: dict) -> fwi.FwiConfig:
    d = dict(cfg.get("fwi", {}))
    sim_d = d.pop("sim", {})
    _strict_keys(
        sim_d, {"spatial_order", "sponge_width", "sponge_strength", "free_surface"},
        "fwi.sim",
    )
    if "clamp" in d:
        d["clamp"] = tuple(d["clamp"])
    names = {f.name for f in dataclasses.fields(fwi.FwiConfig)} - {"sim"}
    _strict_keys(d, names, "fwi")
    try:
        return fwi.FwiConfig(sim=SimulationConfig(**sim_d), **d)
    except ValueError as exc:
        raise ConfigError(f"bad fwi section: {exc}") from exc


def _data_root(cfg: dict) -> Path:
    root = cfg.get("data", {}).get("root")
    if root:
        return Path(root)
    env = os.environ.get("ONETFWI_DATA_DIR")
    return Path(env) if env else Path.cwd()


def _resolve(path, root: Path) -> Path:
    p = Path(path)
    return p if p.is_absolute() else root / p


def _out_dir(args, cfg: dict) -> Path:
    out = args.out or cfg.get("output", {}).get("dir") or "out"
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(out_dir: Path, cfg: dict, args, command: str):
    doc = {
        "command": command,
        "config": cfg,
        "seed": args.seed,
        "workers": args.workers,
        "out": str(out_dir),
    }
    (out_dir / "resolved_config.json").write_text(json.dumps(doc, indent=2))


def _grid_for(nz: int, nx: int, spacing: float = 10.0) -> Grid2D:
    return Grid2D(nz=nz, nx=nx, extent_z=(nz - 1) * spacing, extent_x=(nx - 1) * spacing)


def _load_models_file(path) -> np.ndarray:
    arr = read_npy(path)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim == 4:
        if arr.shape[1] != 1:
            raise DataError(f"expected a singleton channel axis in {path}")
        arr = arr[:, 0]
    if arr.ndim != 3:
        raise DataError(f"cannot interpret model array of shape {arr.shape}")
    return np.asarray(arr, dtype=np.float32)


def _load_gather_file(path) -> np.ndarray:
    arr = read_npy(path)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise DataError(f"cannot interpret gather array of shape {arr.shape}")
    # stored (B, S, nt, R); in memory (B, S, R, nt)
    return np.ascontiguousarray(arr.transpose(0, 1, 3, 2), dtype=np.float32)


# ---------------------------------------------------------------------------
# commands

def _cmd_simulate(args, cfg):
    out = _out_dir(args, cfg)
    _echo_config(out, cfg, args, "simulate")
    sim_cfg, solver = _sim_config(cfg)
    models = _load_models_file(_resolve(args.models, _data_root(cfg)))
    grid = _grid_for(models.shape[1], models.shape[2])
    geom = make_survey_geometry(grid)
    stacks = []
    for values in models:
        fld = VelocityField(grid, values)
        if solver == "scalar":
            gathers = simulate_scalar(fld, geom, sim_cfg).gathers
        else:
            gathers = simulate_first_order(fld, geom, sim_cfg)
        stacks.append(gathers.data.transpose(0, 2, 1))
    write_npy(out / "simulated_data.npy", np.stack(stacks).astype(np.float32))
    print(f"simulated {len(stacks)} sample(s) -> {out / 'simulated_data.npy'}")
    return 0


def _cmd_make_toy(args, cfg):
    out = _out_dir(args, cfg)
    _echo_config(out, cfg, args, "make-toy")
    sim_cfg, solver = _sim_config(cfg)
    if solver != "scalar":
        raise ConfigError("toy data generation uses the scalar solver")
    seed = args.seed if args.seed is not None else 0
    train_manifest = training.make_toy_dataset(
        out, args.n_train, seed=seed, prefix="train",
        sim_config=sim_cfg, workers=args.workers,
    )
    test_manifest = training.make_toy_dataset(
        out, args.n_test, seed=seed + 1, prefix="test",
        sim_config=sim_cfg, workers=args.workers,
    )
    print(f"wrote {train_manifest} and {test_manifest}")
    return 0


def _require(cfg, section, key) -> str:
    try:
        return cfg[section][key]
    except KeyError:
        raise ConfigError(f"config is missing {section}.{key}") from None


def _cmd_train(args, cfg):
    out = _out_dir(args, cfg)
    _echo_config(out, cfg, args, "train")
    root = _data_root(cfg)
    train_g, train_f = training.load_dataset(
        _resolve(_require(cfg, "data", "train_manifest"), root)
    )
    val_g, val_f = training.load_dataset(
        _resolve(_require(cfg, "data", "test_manifest"), root)
    )
    tcfg = _train_config(cfg, args.seed)
    model_cfg = _model_config(cfg)
    model = DeepONet(model_cfg, seed=tcfg.seed)
    train_n, stats = training.preprocess_gathers(train_g, None)
    val_n, _ = training.preprocess_gathers(val_g, stats)
    grid = make_survey_geometry().grid
    result = training.train(
        model, train_n, train_f, val_n, val_f, grid, tcfg, stats, out
    )
    if result.aborted:
        raise NumericalError("training aborted on non-finite loss")
    print(
        f"trained {len(result.history)} epoch(s); "
        f"best val rel L2 {result.best_val:.4f} at epoch {result.best_epoch}"
    )
    return 0


def _cmd_predict(args, cfg):
    out = _out_dir(args, cfg)
    _echo_config(out, cfg, args, "predict")
    model, stats, _ = training.load_checkpoint(args.checkpoint)
    raw = _load_gather_file(_resolve(args.data, _data_root(cfg)))
    normed, _ = training.preprocess_gathers(raw, stats)
    grid = make_survey_geometry().grid
    preds = np.concatenate(
        [model.predict_velocity(normed[i:i + 8], grid) for i in range(0, len(normed), 8)]
    )
    write_npy(out / "predicted_fields.npy", preds)
    print(f"predicted {len(preds)} field(s) -> {out / 'predicted_fields.npy'}")
    return 0


def _cmd_corrupt(args, cfg):
    out = _out_dir(args, cfg)
    _echo_config(out, cfg, args, "corrupt")
    spec = _corruption(cfg, args.seed)
    raw = _load_gather_file(_resolve(args.data, _data_root(cfg)))
    geom = make_survey_geometry()
    out_arr = np.empty_like(raw)
    for i in range(raw.shape[0]):
        spec_i = dataclasses.replace(spec, seed=spec.seed + i)
        corrupted = apply_corruption(
            ShotGatherSet(raw[i], Stage.RAW), spec_i, dt=geom.dt
        )
        out_arr[i] = corrupted.data
    write_npy(out / "corrupted_data.npy", out_arr.transpose(0, 1, 3, 2))
    print(f"corrupted {raw.shape[0]} sample(s) -> {out / 'corrupted_data.npy'}")
    return 0


def _cmd_evaluate(args, cfg):
    out = _out_dir(args, cfg)
    _echo_config(out, cfg, args, "evaluate")
    model, stats, _ = training.load_checkpoint(args.checkpoint)
    root = _data_root(cfg)
    gathers, fields = training.load_dataset(
        _resolve(_require(cfg, "data", "test_manifest"), root), limit=args.limit
    )
    geom = make_survey_geometry()
    spec = _corruption(cfg, args.seed)
    report, preds = evaluation.evaluate_condition(
        model, stats, gathers, fields, geom.grid, spec, args.label, dt=geom.dt
    )
    evaluation.write_scores_csv(out / f"scores_{args.label}.csv", [report])
    if args.save_fields:
        evaluation.write_field_stack(out / f"fields_{args.label}.npy", preds)
        evaluation.write_field_stack(out / "fields_truth.npy", fields)
    print(
        f"{args.label}: rel L2 {report.rel_l2_mean * 100:.2f}% "
        f"(std {report.rel_l2_std * 100:.2f}%), ssim {report.ssim_mean:.4f}"
    )
    return 0


def _start_field(arg: str, grid: Grid2D, root: Path) -> VelocityField:
    if arg.startswith("homogeneous"):
        speed = 3000.0
        if ":" in arg:
            try:
                speed = float(arg.split(":", 1)[1])
            except ValueError:
                raise ConfigError(f"bad start spec {arg!r}") from None
        return VelocityField(grid, np.full(grid.shape, speed, dtype=np.float32))
    models = _load_models_file(_resolve(arg, root))
    return VelocityField(grid, models[0])


def _cmd_fwi(args, cfg):
    out = _out_dir(args, cfg)
    _echo_config(out, cfg, args, "fwi")
    root = _data_root(cfg)
    raw = _load_gather_file(_resolve(args.observed, root))
    if not 0 <= args.sample < raw.shape[0]:
        raise DataError(f"sample {args.sample} outside file with {raw.shape[0]}")
    observed = ShotGatherSet(raw[args.sample], Stage.RAW)
    grid = make_survey_geometry().grid
    geom = make_survey_geometry()
    start = _start_field(args.start, grid, root)
    result = fwi.invert(observed, geom, start, _fwi_config(cfg))
    write_npy(out / "inverted_field.npy", result.field.values[None])
    evaluation.write_trajectory_csv(out / "trajectory.csv", {"fwi": result.misfits})
    print(
        f"fwi: {result.iterations} iteration(s), misfit "
        f"{result.misfits[0]:.4e} -> {result.misfits[-1]:.4e} ({result.stop_reason})"
    )
    return 0


def _cmd_hybrid(args, cfg):
    out = _out_dir(args, cfg)
    _echo_config(out, cfg, args, "hybrid")
    model, stats, _ = training.load_checkpoint(args.checkpoint)
    root = _data_root(cfg)
    gathers, fields = training.load_dataset(
        _resolve(_require(cfg, "data", "test_manifest"), root)
    )
    if not 0 <= args.sample < gathers.shape[0]:
        raise DataError(f"sample {args.sample} outside dataset of {gathers.shape[0]}")
    geom = make_survey_geometry()
    grid = geom.grid
    normed, _ = training.preprocess_gathers(gathers[args.sample:args.sample + 1], stats)
    predicted = VelocityField(grid, model.predict_velocity(normed, grid)[0])
    observed = ShotGatherSet(gathers[args.sample], Stage.RAW)
    res = fwi.hybrid_run(observed, geom, predicted, _fwi_config(cfg))
    truth = fields[args.sample]
    evaluation.write_field_stack(
        out / "hybrid_fields.npy",
        np.stack([truth, predicted.values, res.informed.field.values,
                  res.baseline.field.values]),
    )
    evaluation.write_trajectory_csv(
        out / "trajectory.csv",
        {"informed": res.informed.misfits, "baseline": res.baseline.misfits},
    )
    summary = {
        "sample": args.sample,
        "informed": {
            "final_misfit": res.informed.misfits[-1],
            "rel_l2": evaluation.relative_l2(truth, res.informed.field.values),
            "stop": res.informed.stop_reason,
        },
        "baseline": {
            "final_misfit": res.baseline.misfits[-1],
            "rel_l2": evaluation.relative_l2(truth, res.baseline.field.values),
            "stop": res.baseline.stop_reason,
        },
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary))
    return 0


def _cmd_export(args, cfg):
    out = _out_dir(args, cfg)
    _echo_config(out, cfg, args, "export")
    root = _data_root(cfg)
    gathers, fields = training.load_dataset(_resolve(args.manifest, root))
    if not 0 <= args.sample < gathers.shape[0]:
        raise DataError(f"sample {args.sample} outside dataset of {gathers.shape[0]}")
    geom = make_survey_geometry()
    if args.what == "traces":
        raw = ShotGatherSet(gathers[args.sample], Stage.RAW)
        evaluation.write_trace_stack(out / f"traces_{args.sample}.npy", raw)
        if "corruption" in cfg:
            spec = _corruption(cfg, args.seed)
            corrupted = apply_corruption(raw, spec, dt=geom.dt)
            evaluation.write_trace_stack(
                out / f"traces_{args.sample}_corrupted.npy", corrupted
            )
    else:
        evaluation.write_field_stack(
            out / f"field_{args.sample}.npy", fields[args.sample]
        )
    print(f"exported sample {args.sample} -> {out}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="onetfwi", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--out", default=None, help="output directory")

    p = sub.add_parser("simulate", help="forward-model gathers from velocity models")
    common(p)
    p.add_argument("--models", required=True, help="NPY of velocity fields")

    p = sub.add_parser("make-toy", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--n-train", type=int, required=True)
    p.add_argument("--n-test", type=int, required=True)

    p = sub.add_parser("train", help="train the operator network")
    common(p)

    p = sub.add_parser("predict", help="predict velocity fields from gathers")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="NPY of raw gathers")

    p = sub.add_parser("corrupt", help="apply noise/masking to raw gathers")
    common(p)
    p.add_argument("--data", required=True)

    p = sub.add_parser("evaluate", help="score a checkpoint on a test set")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--label", default="clean")
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--save-fields", action="store_true")

    p = sub.add_parser("fwi", help="invert observed data by adjoint descent")
    common(p)
    p.add_argument("--observed", required=True)
    p.add_argument("--sample", type=int, default=0)
    p.add_argument("--start", default="homogeneous:3000")

    p = sub.add_parser("hybrid", help="network-seeded vs homogeneous-start inversion")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sample", type=int, default=0)

    p = sub.add_parser("export", help="export traces or fields for plotting")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--sample", type=int, default=0)
    p.add_argument("--what", choices=("traces", "field"), default="traces")
    return parser


_COMMANDS = {
    "simulate": _cmd_simulate,
    "make-toy": _cmd_make_toy,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "corrupt": _cmd_corrupt,
    "evaluate": _cmd_evaluate,
    "fwi": _cmd_fwi,
    "hybrid": _cmd_hybrid,
    "export": _cmd_export,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.workers < 1:
            raise UsageError("--workers must be at least 1")
        cfg = load_config(args.config)
        return _COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"error: code=usage {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"error: code=config {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, NpyFormatError, FileNotFoundError) as exc:
        print(f"error: code=data {exc}", file=sys.stderr)
        return EXIT_DATA
    except (StabilityError, NumericalError) as exc:
        print(f"error: code=numerical {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: code=config {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
