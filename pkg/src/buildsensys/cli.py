"""Command-line entry point.

Configuration is a flat ``key = value`` text file with keys namespaced
``model.*``, ``train.*``, ``gen.*`` and ``data.*``; command-line flags
override it. Every JSON artifact embeds the resolved configuration and the
package version. Failures print one line to stderr::

    error code=<kind> exit=<n> message=<text>
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import fields
from pathlib import Path


from . import __version__
from .correlation import analyze, read_routes
from .dataset import load_csv, prepare, synchronize_hourly, write_csv
from .errors import BuildSenSysError, ConfigError, DataError
from .evaluation import MODEL_NAMES, evaluate
from .model import ABLATIONS, ModelConfig, forward, load_checkpoint, save_checkpoint
from .synthetic import GenConfig, ROADS, benchmark_suite, frame_digest
from .training import TrainConfig, train

_DEFAULTS: dict[str, object] = {
    "model.L": 24,
    "model.p": 64,
    "model.q": 64,
    "model.tau": 1,
    "model.variant": "full",
    "gen.days": 365,
    "gen.zones": 3,
    "gen.env_channels": 5,
    "gen.noise_std": 0.05,
    "gen.seed": 42,
    "data.path": "",
    "data.road": "road-a",
    "data.routes": "",
    "data.fill_policy": "auto",
    "data.utc_offset_hours": 0.0,
    "data.rush_hours": "7,8,9,10,16,17,18,19",
    "data.interval": 24,
    "data.horizon": 1,
    "data.models": ",".join(MODEL_NAMES[:8]),
    "data.checkpoint": "",
    "data.split": "test",
    "data.windows": "0",
}
for f in fields(TrainConfig):
    _DEFAULTS[f"train.{f.name}"] = f.default


def _coerce(key: str, text: str):
    default = _DEFAULTS[key]
    try:
        if key == "train.clip_norm":
            return None if text.lower() in ("none", "") else float(text)
        if isinstance(default, bool):
            return text.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"config key {key}: cannot parse {text!r}") from None
    return text


def read_config(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    out = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def resolve_config(file_values: dict[str, str] | None = None, overrides: dict[str, object] | None = None) -> dict:
    """Defaults, then file values, then overrides; unknown keys are rejected."""
    cfg = dict(_DEFAULTS)
    for source in (file_values or {}), (overrides or {}):
        for key, value in source.items():
            if key not in _DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            cfg[key] = _coerce(key, value) if isinstance(value, str) else value
    return cfg


def _section(cfg: dict, prefix: str) -> dict:
    n = len(prefix) + 1
    return {k[n:]: v for k, v in cfg.items() if k.startswith(prefix + ".")}


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(**_section(cfg, "train"))


def gen_config(cfg: dict) -> dict:
    g = _section(cfg, "gen")
    GenConfig(**g)  # validates
    return g


def load_frame(cfg: dict):
    """The configured CSV, or the configured synthetic road."""
    if cfg["data.path"]:
        return synchronize_hourly(load_csv(cfg["data.path"]), cfg["data.fill_policy"])
    suite = benchmark_suite(**gen_config(cfg))
    if cfg["data.road"] not in suite:
        raise ConfigError(f"unknown road {cfg['data.road']!r}; choose from {', '.join(suite)}")
    return suite[cfg["data.road"]]


def _model_config(cfg: dict, frame, variant: str | None = None) -> ModelConfig:
    m = _section(cfg, "model")
    return ModelConfig(L=m["L"], n_occ=frame.n_occ, n_env=frame.n_env, p=m["p"], q=m["q"], tau=m["tau"],
                       variant=variant or m["variant"], dropout_rate=cfg["train.dropout_rate"])


def _stamp(cfg: dict) -> dict:
    return {"version": __version__, "config": cfg}


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _int_list(text: str, key: str) -> list[int]:
    try:
        return [int(s) for s in str(text).split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated integers, got {text!r}") from None


# -- commands ------------------------------------------------------------------


def cmd_generate(cfg: dict, out: Path) -> dict:
    suite = benchmark_suite(**gen_config(cfg))
    files = {}
    for name, frame in suite.items():
        path = out / f"{name}.csv"
        out.mkdir(parents=True, exist_ok=True)
        write_csv(frame, path)
        files[name] = {"file": path.name, "rows": len(frame), "sha256": frame_digest(frame)}
    manifest = {**_stamp(cfg), "roads": files,
                "couplings": {name: {"coupling": c, "lag_hours": lag, "base_volume": v} for name, c, lag, v in ROADS}}
    _write_json(out / "manifest.json", manifest)
    return manifest


def cmd_analyze(cfg: dict, out: Path) -> dict:
    frame = load_frame(cfg)
    routes = None
    if cfg["data.routes"]:
        if Path(cfg["data.routes"]).is_file():
            routes = read_routes(cfg["data.routes"])
        else:
            print(f"warning: route file {cfg['data.routes']} not found; passing probabilities omitted",
                  file=sys.stderr)
    report = analyze(frame, routes, rush_hours=_int_list(cfg["data.rush_hours"], "data.rush_hours"),
                     utc_offset_hours=cfg["data.utc_offset_hours"], interval=cfg["data.interval"])
    doc = {**_stamp(cfg), **report}
    _write_json(out / "analysis.json", doc)
    return doc


def cmd_train(cfg: dict, out: Path) -> dict:
    frame = load_frame(cfg)
    mc = _model_config(cfg, frame)
    prep = prepare(frame, mc.L)
    params, report = train(prep, mc, train_config(cfg))
    extra = {**_stamp(cfg), "train_report": report.to_dict(timing=False)}
    save_checkpoint(out / "checkpoint.json", params, mc, prep.stats, extra)
    doc = {**_stamp(cfg), **report.to_dict()}
    _write_json(out / "train_report.json", doc)
    return doc


def _run_eval(cfg: dict, out: Path, models: list[str], stem: str) -> dict:
    frame = load_frame(cfg)
    report, _ = evaluate(frame, models, L=cfg["model.L"], horizon=cfg["data.horizon"],
                         road=cfg["data.road"] if not cfg["data.path"] else Path(cfg["data.path"]).stem,
                         train_config=train_config(cfg), p=cfg["model.p"], q=cfg["model.q"], config=cfg)
    _write_json(out / f"{stem}.json", report.to_dict())
    (out / f"{stem}.csv").write_text(report.to_csv())
    return report.to_dict()


def cmd_evaluate(cfg: dict, out: Path) -> dict:
    models = [m.strip() for m in cfg["data.models"].split(",") if m.strip()]
    unknown = [m for m in models if m not in MODEL_NAMES]
    if unknown or not models:
        raise ConfigError(f"unknown models {unknown}; choose from {', '.join(MODEL_NAMES)}")
    return _run_eval(cfg, out, models, "eval")


def cmd_ablate(cfg: dict, out: Path) -> dict:
    return _run_eval(cfg, out, list(ABLATIONS), "ablation")


def cmd_dump_attention(cfg: dict, out: Path) -> dict:
    if not cfg["data.checkpoint"]:
        raise ConfigError("dump-attention needs --checkpoint or data.checkpoint")
    params, mc, stats, _ = load_checkpoint(cfg["data.checkpoint"])
    frame = load_frame(cfg)
    prep = prepare(frame, mc.L, stats)
    exo, hist, _, rows = prep.windows(cfg["data.split"])
    idx = _int_list(cfg["data.windows"], "data.windows")
    if not idx or min(idx) < 0 or max(idx) >= len(rows):
        raise DataError(f"window indices {idx} outside 0..{len(rows) - 1}")
    _, trace = forward(params.tensors(), mc, exo[idx], hist[idx])
    occ_names, env_names = frame.names[: frame.n_occ], frame.names[frame.n_occ :]
    windows = []
    for k, i in enumerate(idx):
        t = trace.sample(k)
        windows.append({
            "window": i,
            "anchor": int(prep.raw.timestamps[rows[i]]),
            "beta": None if t.beta is None else t.beta.tolist(),
            "alpha": None if t.alpha is None else t.alpha.tolist(),
            "gamma": None if t.gamma is None else t.gamma.tolist(),
        })
    doc = {**_stamp(cfg), "variant": mc.variant, "L": mc.L, "occupancy_channels": occ_names,
           "environmental_channels": env_names, "windows": windows}
    _write_json(out / "attention.json", doc)
    for key, cols in (("beta", occ_names), ("alpha", env_names), ("gamma", None)):
        if windows[0][key] is None:
            continue
        with open(out / f"{key}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            header = cols if cols is not None else [f"h{j + 1}" for j in range(mc.L)]
            w.writerow(["window", "step"] + list(header))
            for win in windows:
                for step, row in enumerate(win[key], start=1):
                    w.writerow([win["window"], step] + [repr(float(x)) for x in row])
    return doc


COMMANDS = {
    "generate": cmd_generate,
    "analyze": cmd_analyze,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "dump-attention": cmd_dump_attention,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="buildsensys", description="Traffic forecasting from building sensing data.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int, help="sets gen.seed and train.seed")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--models", help="comma-separated model names")
        p.add_argument("--road", help="synthetic road name, e.g. road-a")
        p.add_argument("--horizon", type=int, help="forecast horizon in hours")
        p.add_argument("--data", help="CSV input instead of synthetic data")
        p.add_argument("--checkpoint", help="checkpoint for dump-attention")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        file_values = read_config(args.config) if args.config else {}
        overrides: dict[str, object] = {}
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            k, v = item.split("=", 1)
            overrides[k.strip()] = v.strip()
        flag_keys = {"models": "data.models", "road": "data.road", "horizon": "data.horizon",
                     "data": "data.path", "checkpoint": "data.checkpoint"}
        for flag, key in flag_keys.items():
            if getattr(args, flag) is not None:
                overrides[key] = getattr(args, flag)
        if args.seed is not None:
            overrides["gen.seed"] = args.seed
            overrides["train.seed"] = args.seed
        cfg = resolve_config(file_values, overrides)
        COMMANDS[args.command](cfg, Path(args.out))
    except BuildSenSysError as exc:
        msg = " ".join(str(exc).split())
        print(f"error code={exc.code} exit={exc.exit_code} message={msg}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
