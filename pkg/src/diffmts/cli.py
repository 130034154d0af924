"""Command-line entry point.

Subcommands: gen-data, train, sample, eval, report, ablate, plot-script.
Exit codes: 0 success, 2 usage error, 3 validation error, 4 I/O or format
error, 1 any other failure. ``DIFFMTS_SEED`` supplies the seed when no
``--seed`` flag is given.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import config as rc
from .checkpoint import file_hash, load_checkpoint, save_checkpoint
from .data import RUL_CAP, SynthConfig, WindowSet, load_dataset, synth_degradation, window, write_cmapss
from .errors import DiffMTSError, FormatError, ValidationError
from .evaluation import evaluate, write_projection
from .recurrent import LSTMConfig
from .sample import SampleRequest, read_samples, sample, write_manifest, write_samples
from .train import train, write_history

log = logging.getLogger("diffmts")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_VALIDATION, EXIT_IO = 0, 1, 2, 3, 4

VARIANTS = {
    "full": {},
    "omega-fixed": {"train.omega_mode": "fixed"},
    "mmd-off": {"train.use_mmd": False},
    "decomp-off": {"model.use_decomposition": False},
    "attn-off": {"model.use_attention": False},
}
VARIANT_LABELS = {
    "full": "Proposed",
    "omega-fixed": "w/o Ada (fixed omega)",
    "mmd-off": "w/o Ada-MMD",
    "decomp-off": "w/o decomposition",
    "attn-off": "w/o attention",
}


def version_string() -> str:
    """``git describe``-style version: v<pkg>[-g<sha>][-dirty]."""
    base = f"v{__version__}"
    try:
        here = Path(__file__).resolve().parent
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--abbrev=7"],
            cwd=here,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{base}-g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return base


def resolve_seed(flag: int | None, fallback: int) -> int:
    if flag is not None:
        return flag
    env = os.environ.get("DIFFMTS_SEED")
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError as exc:
            raise ValidationError(f"DIFFMTS_SEED must be an integer, got {env!r}") from exc
    return fallback


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def manifest(command: str, argv: list, cfg: rc.RunConfig | None, outputs: dict, extra: dict | None = None) -> dict:
    doc = {
        "command": command,
        "argv": list(argv),
        "version": version_string(),
        "outputs": {k: {"path": str(p), "sha256": file_hash(p)} for k, p in outputs.items()},
    }
    if cfg is not None:
        doc["config"] = cfg.to_dict()
        doc["config_sha256"] = cfg.digest()
    doc.update(extra or {})
    return doc


# shared steps -----------------------------------------------------------------

def load_windows(path, length: int, stride: int, cap: float) -> WindowSet:
    return window(load_dataset(path), length, stride, cap)


def run_train(cfg: rc.RunConfig, data_path, out_dir: Path, resume=None):
    out_dir.mkdir(parents=True, exist_ok=True)
    ws = load_windows(data_path, cfg.data.window_length, cfg.data.stride, cfg.data.rul_cap)
    if ws.shape[0] != cfg.model.in_channels:
        raise ValidationError(f"dataset has {ws.shape[0]} channels, model.in_channels is {cfg.model.in_channels}")
    ckpt_path = out_dir / "model.ckpt"
    tcfg = dataclasses.replace(cfg.train, checkpoint_path=str(ckpt_path))
    t0 = time.time()

    def progress(row):
        log.info(
            "epoch %d  l_noise=%.5f  l_mmd=%.5f  l_total=%.5f  omega=%.4f  (%.1fs)",
            row["epoch"], row["l_noise"], row["l_mmd"], row["l_total"], row["omega"], time.time() - t0,
        )

    res = train(ws, cfg.model, tcfg, resume=resume, on_epoch=progress)
    save_checkpoint(res.checkpoint, ckpt_path)
    write_history(res.history, out_dir / "loss.csv")
    return res, ckpt_path


def parse_conditions(text: str) -> list:
    tokens = [t for t in text.replace(",", " ").split() if t]
    try:
        return [float(t) for t in tokens]
    except ValueError as exc:
        raise ValidationError(f"conditions must be numbers: {exc}") from exc


def read_conditions_file(path) -> list:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(f"cannot read conditions file {path}: {exc}") from exc
    stripped = text.strip()
    if stripped.startswith("["):
        try:
            return [float(v) for v in json.loads(stripped)]
        except (ValueError, TypeError) as exc:
            raise FormatError(f"{path}: invalid JSON condition list ({exc})") from exc
    return parse_conditions(text)


def run_sample(ckpt_path, conditions: list, seed: int, out_csv: Path, batch_size: int = 64, guidance_off: bool = False, extra=None):
    ckpt = load_checkpoint(ckpt_path)
    req = SampleRequest(len(conditions), conditions, seed, guidance_off)
    res = sample(ckpt, req, batch_size=batch_size)
    write_samples(res, out_csv)
    man = out_csv.with_suffix(".manifest.json")
    write_manifest(man, req, file_hash(ckpt_path), ckpt, dict(extra or {}, version=version_string()))
    return res, man


def run_eval(cfg: rc.RunConfig, real_path, synth: WindowSet, out_json: Path, pca_csv: Path | None):
    L = synth.shape[1]
    real = load_windows(real_path, L, cfg.data.eval_stride, cfg.data.rul_cap)
    if real.shape != synth.shape:
        raise ValidationError(f"real windows have shape {real.shape}, synthetic windows {synth.shape}")
    e = cfg.eval
    lcfg = LSTMConfig(hidden=e.hidden, layers=e.layers, epochs=e.epochs, batch_size=e.batch_size, lr=e.lr)
    report, proj = evaluate(real, synth, seeds=e.seeds, config=lcfg, jobs=e.jobs)
    report.write(out_json)
    if pca_csv is not None:
        write_projection(proj, len(real), pca_csv)
    return report


def comparison_table(results: dict, fmt: str = "markdown") -> str:
    """Variants as rows; one block per metric; a dataset-length column plus Average.

    ``results`` maps variant label -> {column: report dict}.
    """
    columns = sorted({c for per in results.values() for c in per})
    blocks = [
        ("Discriminative Score (lower is better)", "discriminative_score", 3),
        ("Predictive Score (lower is better)", "predictive_score", 4),
        ("DTW (lower is better)", "dtw_mean", 3),
        ("Frechet (lower is better)", "frechet_mean", 3),
    ]
    lines = []
    if fmt == "csv":
        lines.append(",".join(["metric", "model"] + columns + ["average"]))
        for _, key, _ in blocks:
            for label, per in results.items():
                vals = [per[c][key] for c in columns if c in per]
                cells = [repr(float(per[c][key])) if c in per else "" for c in columns]
                lines.append(",".join([key, label] + cells + [repr(float(np.mean(vals)))]))
        return "\n".join(lines) + "\n"
    header = "| Model | " + " | ".join(columns) + " | Average |"
    rule = "|" + "---|" * (len(columns) + 2)
    for title, key, digits in blocks:
        lines += [f"**{title}**", "", header, rule]
        for label, per in results.items():
            vals = [per[c][key] for c in columns if c in per]
            cells = [f"{per[c][key]:.{digits}f}" if c in per else "-" for c in columns]
            lines.append(f"| {label} | " + " | ".join(cells) + f" | {np.mean(vals):.{digits}f} |")
        lines.append("")
    return "\n".join(lines)


# argument handling ------------------------------------------------------------

def _config_with_flags(args) -> rc.RunConfig:
    cfg = rc.load(args.config) if getattr(args, "config", None) else rc.RunConfig()
    ov = {}
    mapping = {
        "epochs": "train.epochs",
        "batch_size": "train.batch_size",
        "lr": "train.lr",
        "T": "train.T",
        "schedule": "train.schedule",
        "omega_mode": "train.omega_mode",
        "fixed_omega": "train.fixed_omega",
        "max_steps": "train.max_steps",
        "mask_alpha": "train.mask_alpha",
        "window_length": "data.window_length",
        "stride": "data.stride",
        "eval_stride": "data.eval_stride",
        "base_filters": "model.base_filters",
        "eval_epochs": "eval.epochs",
        "jobs": "eval.jobs",
    }
    for attr, key in mapping.items():
        v = getattr(args, attr, None)
        if v is not None:
            ov[key] = v
    if getattr(args, "no_mmd", False):
        ov["train.use_mmd"] = False
    if getattr(args, "no_decomposition", False):
        ov["model.use_decomposition"] = False
    if getattr(args, "no_attention", False):
        ov["model.use_attention"] = False
    if getattr(args, "seeds", None):
        ov["eval.seeds"] = [int(s) for s in args.seeds.split(",")]
    if getattr(args, "data", None):
        ov["data.path"] = args.data
    if hasattr(args, "seed"):
        ov["train.seed"] = resolve_seed(args.seed, cfg.train.seed)
    if ov:
        cfg = rc.with_overrides(cfg, ov)
    return cfg


def _add_train_flags(p):
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--T", type=int, help="diffusion steps")
    p.add_argument("--schedule", choices=["cosine", "linear", "reciprocal"])
    p.add_argument("--omega-mode", choices=["learnable", "fixed"])
    p.add_argument("--fixed-omega", type=float)
    p.add_argument("--mask-alpha", type=float)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--window-length", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--base-filters", type=int)
    p.add_argument("--no-mmd", action="store_true")
    p.add_argument("--no-decomposition", action="store_true")
    p.add_argument("--no-attention", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="diffmts", description="Conditional diffusion for multivariate sensor series")
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("--version", action="version", version=f"diffmts {version_string()}")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic run-to-failure dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--units", type=int, required=True)
    g.add_argument("--channels", type=int, default=14)
    g.add_argument("--max-cycles", type=int, default=200)
    g.add_argument("--noise-std", type=float, default=0.05)
    g.add_argument("--seed", type=int)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--resume", help="checkpoint to continue from")
    _add_train_flags(t)

    s = sub.add_parser("sample", help="generate windows from a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True, help="sample CSV path")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--conditions", help="comma-separated values in [0, 1]")
    src.add_argument("--conditions-file")
    src.add_argument("--match-dataset", metavar="DATA", help="one sample per real window, same labels")
    s.add_argument("--count", type=int, help="repeat a single condition this many times")
    s.add_argument("--seed", type=int)
    s.add_argument("--eval-stride", type=int, help="window stride for --match-dataset")
    s.add_argument("--guidance-off", action="store_true")
    s.add_argument("--batch-size", type=int, default=64)

    e = sub.add_parser("eval", help="score synthetic windows against real data")
    e.add_argument("--real", required=True)
    e.add_argument("--synth", required=True, help="sample CSV")
    e.add_argument("--out", required=True, help="report JSON")
    e.add_argument("--pca", help="PCA projection CSV")
    e.add_argument("--config")
    e.add_argument("--seeds", help="comma-separated evaluator seeds (default 0,1,2,3,4)")
    e.add_argument("--eval-epochs", type=int)
    e.add_argument("--eval-stride", type=int)
    e.add_argument("--jobs", type=int)

    r = sub.add_parser("report", help="comparison table from eval reports")
    r.add_argument("--reports", nargs="+", required=True, metavar="LABEL[@COLUMN]=PATH")
    r.add_argument("--out", required=True)
    r.add_argument("--format", choices=["markdown", "csv"], default="markdown")

    a = sub.add_parser("ablate", help="train, sample and score each ablation variant")
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True, help="output directory")
    a.add_argument("--variants", default=",".join(VARIANTS))
    a.add_argument("--column", help="table column label (default <data stem>-<L>)")
    a.add_argument("--seeds")
    a.add_argument("--eval-epochs", type=int)
    a.add_argument("--eval-stride", type=int)
    a.add_argument("--jobs", type=int)
    _add_train_flags(a)

    ps = sub.add_parser("plot-script", help="emit a gnuplot script for a CSV output")
    ps.add_argument("--pca", help="PCA projection CSV")
    ps.add_argument("--loss", help="loss history CSV")
    ps.add_argument("--out", required=True)
    return ap


# commands ---------------------------------------------------------------------

def cmd_gen_data(args, argv):
    seed = resolve_seed(args.seed, 0)
    cfg = SynthConfig(args.units, args.channels, args.max_cycles, args.noise_std, seed)
    trajs = synth_degradation(cfg)
    out = Path(args.out)
    side = write_cmapss(trajs, out, {"generator": dataclasses.asdict(cfg), "version": version_string()})
    log.info("wrote %d units to %s", len(trajs.units), out)
    return {"data": out, "sidecar": side}


def cmd_train(args, argv):
    cfg = _config_with_flags(args)
    out = Path(args.out)
    resume = load_checkpoint(args.resume) if args.resume else None
    res, ckpt_path = run_train(cfg, args.data, out, resume)
    outputs = {"checkpoint": ckpt_path, "loss_history": out / "loss.csv"}
    write_json(out / "manifest.json", manifest("train", argv, cfg, outputs, {"steps": res.steps}))
    return outputs


def cmd_sample(args, argv):
    seed = resolve_seed(args.seed, 0)
    extra = {}
    if args.match_dataset:
        ckpt = load_checkpoint(args.checkpoint)
        ws = load_windows(args.match_dataset, ckpt.model_config.length, args.eval_stride or 1, RUL_CAP)
        conditions = ws.conditions.tolist()
        extra = {"match_dataset": args.match_dataset, "eval_stride": args.eval_stride or 1}
    elif args.conditions_file:
        conditions = read_conditions_file(args.conditions_file)
    else:
        conditions = parse_conditions(args.conditions)
    if args.count is not None:
        if len(conditions) != 1:
            raise ValidationError("--count needs exactly one condition to repeat")
        conditions = conditions * args.count
    if not conditions:
        raise ValidationError("no conditions given")
    out = Path(args.out)
    res, man = run_sample(args.checkpoint, conditions, seed, out, args.batch_size, args.guidance_off, extra)
    log.info("wrote %d samples to %s", len(conditions), out)
    return {"samples": out, "manifest": man}


def cmd_eval(args, argv):
    cfg = _config_with_flags(args)
    synth = read_samples(args.synth)
    out = Path(args.out)
    report = run_eval(cfg, args.real, synth, out, Path(args.pca) if args.pca else None)
    log.info(
        "discriminative %.4f  predictive %.4f  dtw %.4f  frechet %.4f",
        report.discriminative_score, report.predictive_score, report.dtw_mean, report.frechet_mean,
    )
    outputs = {"report": out}
    if args.pca:
        outputs["pca"] = Path(args.pca)
    write_json(out.with_suffix(".manifest.json"), manifest("eval", argv, cfg, outputs, {"synth_sha256": file_hash(args.synth)}))
    return outputs


def cmd_report(args, argv):
    results: dict = {}
    for spec in args.reports:
        label, sep, path = spec.partition("=")
        if not sep:
            raise ValidationError(f"--reports entries look like LABEL[@COLUMN]=PATH, got {spec!r}")
        label, _, column = label.partition("@")
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as exc:
            raise FormatError(f"cannot read report {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc})") from exc
        results.setdefault(label, {})[column or "run"] = doc
    out = Path(args.out)
    out.write_text(comparison_table(results, args.format))
    return {"table": out}


def cmd_ablate(args, argv):
    base = _config_with_flags(args)
    names = [v.strip() for v in args.variants.split(",") if v.strip()]
    unknown = [v for v in names if v not in VARIANTS]
    if unknown:
        raise ValidationError(f"unknown variant(s): {', '.join(unknown)}; choose from {', '.join(VARIANTS)}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    column = args.column or f"{Path(args.data).stem}-{base.data.window_length}"
    results, outputs = {}, {}
    for name in names:
        cfg = rc.with_overrides(base, VARIANTS[name])
        vdir = out / name
        log.info("variant %s: training", name)
        _, ckpt_path = run_train(cfg, args.data, vdir)
        real = load_windows(args.data, cfg.data.window_length, cfg.data.eval_stride, cfg.data.rul_cap)
        log.info("variant %s: sampling %d windows", name, len(real))
        res, _ = run_sample(ckpt_path, real.conditions.tolist(), cfg.sample.seed, vdir / "samples.csv", cfg.sample.batch_size)
        synth = res.as_windowset()
        report = run_eval(cfg, args.data, synth, vdir / "report.json", vdir / "pca.csv")
        write_json(vdir / "manifest.json", manifest("ablate", argv, cfg, {"checkpoint": ckpt_path, "report": vdir / "report.json"}, {"variant": name}))
        results[VARIANT_LABELS[name]] = {column: report.to_dict()}
        outputs[f"{name}_report"] = vdir / "report.json"
    (out / "table.md").write_text(comparison_table(results))
    (out / "table.csv").write_text(comparison_table(results, "csv"))
    outputs["table"] = out / "table.md"
    write_json(out / "manifest.json", manifest("ablate", argv, base, outputs, {"variants": names}))
    return outputs


def cmd_plot_script(args, argv):
    if not args.pca and not args.loss:
        raise ValidationError("give --pca and/or --loss")
    lines = ["set datafile separator ','", "set key autotitle columnhead"]
    if args.pca:
        lines += [
            "set title 'PCA projection'",
            "set xlabel 'pc1'",
            "set ylabel 'pc2'",
            f"plot '{args.pca}' using (strcol(2) eq 'real' ? $3 : 1/0):4 with points pt 7 ps 0.5 title 'real', \\",
            f"     '{args.pca}' using (strcol(2) eq 'synth' ? $3 : 1/0):4 with points pt 7 ps 0.5 title 'synthetic'",
        ]
    if args.loss:
        if args.pca:
            lines.append("pause -1")
        lines += [
            "set title 'training loss'",
            "set xlabel 'epoch'",
            "set logscale y",
            f"plot '{args.loss}' using 1:2 with lines title 'l_noise', '' using 1:3 with lines title 'l_mmd', "
            "'' using 1:4 with lines title 'l_total'",
        ]
    out = Path(args.out)
    out.write_text("\n".join(lines) + "\n")
    return {"script": out}


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "report": cmd_report,
    "ablate": cmd_ablate,
    "plot-script": cmd_plot_script,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s", stream=sys.stderr, force=True
    )
    try:
        COMMANDS[args.command](args, argv)
    except ValidationError as exc:
        log.error("validation error: %s", exc)
        return EXIT_VALIDATION
    except (FormatError, OSError) as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    except DiffMTSError as exc:
        log.error("error: %s", exc)
        return EXIT_FAIL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
