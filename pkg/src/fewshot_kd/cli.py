"""Command-line front end: datagen, pretrain, metatrain, eval, spectrum.

Settings resolve as flag > ``--config`` file (``key = value`` lines, ``#``
comments) > built-in default. Unknown config keys are rejected. Exit codes:
0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import datagen, diagnostics, kernels
from .episodes import episode_accuracies, summarize
from .model import embed_only, init_params, load_checkpoint, save_checkpoint
from .rng import CounterRNG
from .training import (
    PretrainConfig,
    TrainConfig,
    TrainingDiverged,
    base_accuracy,
    metatrain,
    pretrain,
    write_epoch_csv,
    write_pretrain_csv,
)

log = logging.getLogger("fewshot_kd")

DATA_FILE = "dataset.csv"
SPLIT_FILE = "splits.csv"
META_FILE = "metadata.txt"


class UsageError(Exception):
    pass


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(",", " ").split())


def _converter(default):
    if isinstance(default, bool):
        return _parse_bool
    if isinstance(default, tuple):
        return _parse_tuple
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    return str


def read_config_file(path) -> dict[str, str]:
    values = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}: line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def resolve(defaults: dict, file_values: dict[str, str], flags: dict) -> dict:
    """Merge settings with precedence flag > file > default, converting file strings by default type."""
    unknown = sorted(set(file_values) - set(defaults))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    out = dict(defaults)
    for key, text in file_values.items():
        try:
            out[key] = _converter(defaults[key])(text) if defaults[key] is not None else text
        except ValueError as exc:
            raise UsageError(f"config key {key}: {exc}") from exc
    for key, value in flags.items():
        if value is not None:
            out[key] = value
    return out


def _dc_defaults(cls, drop=()) -> dict:
    inst = cls()
    return {f.name: getattr(inst, f.name) for f in dataclasses.fields(cls) if f.name not in drop}


COMMAND_DEFAULTS = {
    "datagen": {**_dc_defaults(datagen.GenSpec), "out": None},
    "pretrain": {**_dc_defaults(PretrainConfig), "data": None, "out": None},
    "metatrain": {
        **_dc_defaults(TrainConfig),
        "data": None,
        "init": None,
        "out": None,
        "sweep": "",
        "sweep_values": "0,0.5,1,2,4",
        "checkpoint_every": 0,
        "threads": 1,
    },
    "eval": {
        "data": None,
        "ckpt": None,
        "out": "",
        "split": "novel",
        "episodes": 2000,
        "way": 5,
        "shot": 1,
        "queries": 15,
        "seed": 0,
        "threads": 1,
    },
    "spectrum": {
        "data": None,
        "ckpt": None,
        "out": None,
        "split": "base",
        "max_samples": 4000,
        "threshold": 1e-3,
        "center": True,
        "seed": 0,
        "geometry_out": "",
    },
}

REQUIRED = {
    "datagen": ("out",),
    "pretrain": ("data", "out"),
    "metatrain": ("data", "init", "out"),
    "eval": ("data", "ckpt"),
    "spectrum": ("data", "ckpt", "out"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fewshot-kd", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, defaults in COMMAND_DEFAULTS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value file; flags override it")
        for key, default in defaults.items():
            flag = "--" + key.replace("_", "-")
            if isinstance(default, bool):
                p.add_argument(flag, dest=key, type=_parse_bool, default=None, metavar="BOOL")
                if key == "center":
                    p.add_argument("--no-center", dest=key, action="store_const", const=False)
            else:
                conv = _converter(default) if default is not None else str
                p.add_argument(flag, dest=key, type=conv, default=None)
    return parser


def settings_for(args: argparse.Namespace) -> dict:
    defaults = COMMAND_DEFAULTS[args.command]
    file_values = read_config_file(args.config) if args.config else {}
    flags = {k: getattr(args, k) for k in defaults}
    cfg = resolve(defaults, file_values, flags)
    missing = [k for k in REQUIRED[args.command] if not cfg.get(k)]
    if missing:
        raise UsageError(f"{args.command}: missing required setting(s): {', '.join('--' + m.replace('_', '-') for m in missing)}")
    return cfg


def _pick(cls, cfg: dict):
    names = {f.name for f in dataclasses.fields(cls)}
    return cls(**{k: v for k, v in cfg.items() if k in names})


def _load_data(data_dir):
    data_dir = Path(data_dir)
    return datagen.load_dataset(data_dir / DATA_FILE, data_dir / SPLIT_FILE)


def _prepare_out(path) -> Path:
    out = Path(path)
    if out.exists() and not out.is_dir():
        raise UsageError(f"output path {out} exists and is not a directory")
    out.mkdir(parents=True, exist_ok=True)
    return out


_run_logs: list[logging.Handler] = []


def _attach_run_log(out_dir: Path) -> None:
    # timestamps live only in run.log so CSV and checkpoint outputs stay byte-stable
    handler = logging.FileHandler(out_dir / "run.log", mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(handler)
    _run_logs.append(handler)


def cmd_datagen(cfg: dict) -> int:
    out = _prepare_out(cfg["out"])
    spec = _pick(datagen.GenSpec, cfg)
    ds, meta = datagen.generate(spec)
    datagen.write_dataset(ds, out / DATA_FILE, out / SPLIT_FILE)
    datagen.write_metadata(meta, out / META_FILE)
    print(f"wrote {len(ds.labels)} samples ({ds.n_base} base / {ds.n_val} val / {ds.n_novel} novel classes, dim {ds.dim}) to {out}")
    return 0


def cmd_pretrain(cfg: dict) -> int:
    ds = _load_data(cfg["data"])
    out = _prepare_out(cfg["out"])
    _attach_run_log(out)
    pcfg = _pick(PretrainConfig, cfg)
    params, logs = pretrain(ds, pcfg)
    save_checkpoint(params, out / "pretrain.ckpt")
    write_pretrain_csv(logs, out / "pretrain_log.csv")
    acc = base_accuracy(params, ds)
    print(f"pretrained {pcfg.epochs} epochs; final base train accuracy {acc:.4f}")
    return 0


def _dump_divergence(exc: TrainingDiverged, out: Path) -> None:
    state = exc.state
    arrays = {}
    student = state.get("student")
    if student is not None:
        arrays.update({name: t for name, t in student.named_tensors()})
    inputs = state.get("inputs")
    if inputs is not None:
        arrays["episode_support"] = inputs.episode.support
        arrays["episode_query"] = inputs.episode.query
        if inputs.skl_indices is not None:
            arrays["skl_indices"] = inputs.skl_indices
    if "losses" in state:
        arrays["losses_sc_skl_nnskl_meta"] = np.asarray(state["losses"])
    np.savez(out / "divergence_dump.npz", **arrays)


def _run_metatrain(cfg: dict, ds, out: Path) -> None:
    tcfg = _pick(TrainConfig, cfg)
    student = load_checkpoint(cfg["init"])
    every = int(cfg["checkpoint_every"])

    def on_epoch(entry, params):
        if every and entry.epoch % every == 0:
            save_checkpoint(params, out / f"student_epoch{entry.epoch:03d}.ckpt")

    try:
        student, best, logs = metatrain(student, ds, tcfg, on_epoch=on_epoch)
    except TrainingDiverged as exc:
        _dump_divergence(exc, out)
        raise
    save_checkpoint(best.params, out / "best_teacher.ckpt")
    save_checkpoint(student, out / "student_final.ckpt")
    write_epoch_csv(logs, out / "epochs.csv")
    print(
        f"{out}: lambda1={tcfg.lambda1:g} lambda2={tcfg.lambda2:g}; best val acc {best.val_accuracy:.4f} "
        f"(epoch {best.epoch_taken})"
    )


def cmd_metatrain(cfg: dict) -> int:
    ds = _load_data(cfg["data"])
    out = _prepare_out(cfg["out"])
    _attach_run_log(out)
    sweep = cfg["sweep"]
    if not sweep:
        _run_metatrain(cfg, ds, out)
        return 0
    if sweep not in ("lambda1", "lambda2"):
        raise UsageError("--sweep must be lambda1 or lambda2")
    try:
        values = [float(v) for v in cfg["sweep_values"].split(",")]
    except ValueError as exc:
        raise UsageError(f"--sweep-values: {exc}") from exc
    other = "lambda2" if sweep == "lambda1" else "lambda1"
    for v in values:
        run_cfg = {**cfg, sweep: v, other: 0.0}
        _run_metatrain(run_cfg, ds, _prepare_out(out / f"{sweep}_{v:g}"))
    return 0


def cmd_eval(cfg: dict) -> int:
    ds = _load_data(cfg["data"])
    params = load_checkpoint(cfg["ckpt"])
    emb = embed_only(params, ds.features)
    accs = episode_accuracies(
        emb, ds, cfg["split"], cfg["episodes"], cfg["way"], cfg["shot"], cfg["queries"],
        CounterRNG(cfg["seed"]).child("eval"), threads=cfg["threads"],
    )
    mean, ci = summarize(accs)
    line = f"{cfg['split']} {cfg['way']}-way {cfg['shot']}-shot over {cfg['episodes']} episodes: {mean:.4f} +- {ci:.4f}"
    print(line)
    if cfg["out"]:
        Path(cfg["out"]).write_text(
            "split,n_way,k_shot,episodes,mean_acc,ci95\n"
            f"{cfg['split']},{cfg['way']},{cfg['shot']},{cfg['episodes']},{mean:.17g},{ci:.17g}\n"
        )
    return 0


def cmd_spectrum(cfg: dict) -> int:
    ds = _load_data(cfg["data"])
    params = load_checkpoint(cfg["ckpt"])
    report = diagnostics.embedding_spectrum(
        params, ds, cfg["split"], cfg["max_samples"], cfg["threshold"], cfg["center"], cfg["seed"]
    )
    diagnostics.write_spectrum_csv(report, cfg["out"])
    if cfg["geometry_out"]:
        diagnostics.write_geometry_csv(diagnostics.class_geometry(params, ds, cfg["split"]), cfg["geometry_out"])
    print(f"effective_rank {report.effective_rank} of {len(report.singular_values)} (threshold {cfg['threshold']:g})")
    return 0


COMMANDS = {
    "datagen": cmd_datagen,
    "pretrain": cmd_pretrain,
    "metatrain": cmd_metatrain,
    "eval": cmd_eval,
    "spectrum": cmd_spectrum,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    console = logging.StreamHandler()
    console.setLevel(logging.INFO if args.verbose else logging.WARNING)
    console.setFormatter(logging.Formatter("%(message)s"))
    log.addHandler(console)
    log.setLevel(logging.INFO)
    log.propagate = False
    try:
        cfg = settings_for(args)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    finally:
        for handler in [console, *_run_logs]:
            log.removeHandler(handler)
            handler.close()
        _run_logs.clear()


if __name__ == "__main__":
    sys.exit(main())
