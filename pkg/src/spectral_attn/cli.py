"""Command-line interface: train, evaluate, analyze-attention, gradcheck,
synth, sweep.

Config files are flat key=value text mirroring ModelConfig fields; `#`
starts a comment. The SPECTRAL_ATTN_SEED environment variable overrides the
configured seed. All artifacts are byte-deterministic for a fixed
(config, seed, data).
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import analysis, data, models
from .errors import ConfigError, DataError, FormatError, SpectralAttnError
from .models import ForecastModel, ModelConfig

ENV_SEED = "SPECTRAL_ATTN_SEED"

_INT_FIELDS = {"L", "T", "C", "P", "S", "H", "D", "F", "kernel_K", "layers",
               "seed", "batch_size", "epochs"}
_FLOAT_FIELDS = {"dropout", "lr"}
_BOOL_FIELDS = {"mss_enabled", "hcc_enabled"}
_STR_FIELDS = {"architecture", "mechanism"}

_BOOL_WORDS = {"true": True, "false": False, "1": True, "0": False,
               "yes": True, "no": False}


def parse_kv_text(text, source="<config>"):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{source}: line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def config_from_kv(kv, source="<config>"):
    kwargs = {}
    for key, value in kv.items():
        if key in _INT_FIELDS:
            kwargs[key] = int(value)
        elif key in _FLOAT_FIELDS:
            kwargs[key] = float(value)
        elif key in _BOOL_FIELDS:
            word = value.lower()
            if word not in _BOOL_WORDS:
                raise ConfigError(f"{source}: {key} must be a boolean, got {value!r}")
            kwargs[key] = _BOOL_WORDS[word]
        elif key in _STR_FIELDS:
            kwargs[key] = value
        else:
            raise ConfigError(f"{source}: unknown config key {key!r}")
    return ModelConfig(**kwargs)


def load_config(path):
    cfg = config_from_kv(parse_kv_text(Path(path).read_text(encoding="utf-8"), path), path)
    env = os.environ.get(ENV_SEED)
    if env is not None:
        try:
            cfg = replace(cfg, seed=int(env))
        except ValueError:
            raise ConfigError(f"{ENV_SEED} must be an integer, got {env!r}") from None
    return cfg


def _load_split_dataset(path, splits_arg):
    dataset = data.load_csv(path)
    if splits_arg:
        parts = splits_arg.split(",")
        if len(parts) != 2:
            raise ConfigError(f"--splits expects 'train,val' ratios, got {splits_arg!r}")
        ratios = (float(parts[0]), float(parts[1]))
    else:
        ratios = data.default_ratios(dataset.name)
    return data.split(dataset, ratios)


def _resolve_variates(cfg, dataset):
    if cfg.C == 0:
        return replace(cfg, C=dataset.variates)
    if cfg.C != dataset.variates:
        raise ConfigError(f"config C={cfg.C} but dataset has {dataset.variates} variates")
    return cfg


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_train(args):
    cfg = load_config(args.config)
    dataset = _load_split_dataset(args.data, args.splits)
    cfg = _resolve_variates(cfg, dataset)
    model = ForecastModel(cfg)
    report = models.train(model, dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    models.save_checkpoint(out / "checkpoint.json", model)
    analysis.write_json(out / "train_report.json", report.to_dict())
    try:
        metrics = analysis.evaluate_on_split(model, dataset, "test")
        analysis.write_json(out / "metrics.json", metrics.to_dict())
    except DataError as exc:
        print(f"note: no test metrics ({exc})", file=sys.stderr)
    print(f"trained {cfg.mechanism}/{cfg.architecture}: "
          f"best epoch {report.best_epoch}, val mse {report.best_val_mse:.6g}")
    return 0


def cmd_evaluate(args):
    model = models.load_checkpoint(args.checkpoint)
    dataset = _load_split_dataset(args.data, args.splits)
    if model.config.C != dataset.variates:
        raise ConfigError(
            f"checkpoint expects C={model.config.C} but dataset has {dataset.variates} variates"
        )
    report = analysis.evaluate_on_split(model, dataset, args.split)
    if args.out:
        analysis.write_json(args.out, report.to_dict())
    else:
        import json

        print(json.dumps(report.to_dict(), sort_keys=True, indent=2))
    return 0


def cmd_analyze_attention(args):
    model = models.load_checkpoint(args.checkpoint)
    cfg = model.config
    dataset = _load_split_dataset(args.data, args.splits)
    if cfg.C != dataset.variates:
        raise ConfigError(
            f"checkpoint expects C={cfg.C} but dataset has {dataset.variates} variates"
        )
    pairs = data.windows(dataset, args.split, cfg.L, cfg.T)
    stop = args.window_index + args.num_windows
    if args.window_index < 0 or stop > len(pairs):
        raise DataError(
            f"windows [{args.window_index}, {stop}) out of range; split has {len(pairs)}"
        )
    maps = []
    for pair in pairs[args.window_index:stop]:
        capture = []
        model.predict(pair.input, capture=capture)
        maps.extend(entry.final for entry in capture)
    report = analysis.attention_report(maps, cfg.mechanism, rank_tol=args.rank_tol)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    analysis.write_matrix_csv(out / "attention_mean.csv", report.averaged_map)
    analysis.write_pgm(out / "attention_mean.pgm", report.averaged_map)
    payload = report.to_dict()
    payload.update({
        "config_hash": models.config_hash(cfg),
        "seed": cfg.seed,
        "split": args.split,
        "window_index": args.window_index,
        "num_windows": args.num_windows,
        "rank_tolerance": args.rank_tol,
    })
    analysis.write_json(out / "attention_report.json", payload)
    kappa = payload["condition_number"]
    print(f"attention map {report.averaged_map.shape[0]}x{report.averaged_map.shape[0]}: "
          f"rank {report.rank}, condition number {kappa}")
    return 0


def gradcheck_configs(seed=0):
    """Micro-scale configs for every valid mechanism x architecture pair."""
    base = dict(L=16, T=4, C=3, P=4, S=2, H=2, D=8, kernel_K=3, layers=1,
                dropout=0.0, seed=seed)
    combos = [
        ("conventional", "variate", 0),
        ("conventional", "temporal", 0),
        ("fsatten", "variate", 0),
        ("soatten", "variate", 6),
        ("soatten", "temporal", 6),
    ]
    return [
        ModelConfig(mechanism=mech, architecture=arch, F=f, **base)
        for mech, arch, f in combos
    ]


def cmd_gradcheck(args):
    seed = int(os.environ.get(ENV_SEED, "0"))
    configs = gradcheck_configs(seed)
    if args.mechanism != "all":
        configs = [c for c in configs if c.mechanism == args.mechanism]
    all_ok = True
    for cfg in configs:
        report = analysis.grad_check(cfg)
        status = "PASS" if report.passed else "FAIL"
        all_ok = all_ok and report.passed
        print(f"{status} {cfg.mechanism}/{cfg.architecture}: "
              f"max relative error {report.max_rel_error:.3g} "
              f"(threshold {report.threshold:g})")
        if not report.passed:
            for entry in report.entries:
                if not entry.passed:
                    print(f"  {entry.name}: {entry.max_rel_error:.3g}")
    return 0 if all_ok else 1


def _parse_tones(text, source):
    tones = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split(":")
        if len(parts) != 3:
            raise FormatError(f"{source}: tone {chunk!r} must be freq:amplitude:phase")
        tones.append((float(parts[0]), float(parts[1]), float(parts[2])))
    return tones


def cmd_synth(args):
    source = args.spec
    kv = parse_kv_text(Path(source).read_text(encoding="utf-8"), source)
    try:
        c = int(kv.pop("C"))
        length = int(kv.pop("length"))
    except KeyError as exc:
        raise ConfigError(f"{source}: missing required key {exc.args[0]!r}") from None
    period = int(kv.pop("period", "96"))
    noise_sigma = float(kv.pop("noise_sigma", "0"))
    seed = int(os.environ.get(ENV_SEED, kv.pop("seed", "0")))
    name = kv.pop("name", "synth_multisine")
    tone_spec = []
    for i in range(c):
        key = f"tones_{i}"
        tone_spec.append(_parse_tones(kv.pop(key, ""), source))
    if kv:
        raise ConfigError(f"{source}: unknown keys {sorted(kv)}")
    dataset = data.synth_multisine(c, length, tone_spec, noise_sigma, seed,
                                   period=period, name=name)
    data.save_csv(args.out, dataset)
    print(f"wrote {c}x{length} synthetic series to {args.out}")
    return 0


def cmd_sweep(args):
    cfg = load_config(args.config)
    dataset = _load_split_dataset(args.data, args.splits)
    cfg = _resolve_variates(cfg, dataset)
    values = [int(v) for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("--values must list at least one integer")
    rows = []
    for value in values:
        if args.param == "F":
            variant = replace(cfg, F=value)
        else:
            variant = replace(cfg, kernel_K=value)
        model = ForecastModel(variant)
        models.train(model, dataset)
        metrics = analysis.evaluate_on_split(model, dataset, "test")
        rows.append((args.param, value, metrics.mse, metrics.mae))
        print(f"{args.param}={value}: test mse {metrics.mse:.6g}, mae {metrics.mae:.6g}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["param,value,test_mse,test_mae"]
    lines.extend(f"{p},{v},{m!r},{a!r}" for p, v, m, a in rows)
    (out / "sweep_results.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="spectral-attn",
        description="Desk-scale forecasting with spectrum/orthogonal attention.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write its artifacts")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--splits", default=None, help="train,val ratios (default by dataset name)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="metrics for a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--splits", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze-attention", help="averaged attention map, rank, condition number")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--splits", default=None)
    p.add_argument("--window-index", type=int, default=0)
    p.add_argument("--num-windows", type=int, default=1)
    p.add_argument("--rank-tol", type=float, default=1e-10)
    p.set_defaults(func=cmd_analyze_attention)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--mechanism", default="all",
                   choices=("all", "conventional", "fsatten", "soatten"))
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="write a synthetic multi-tone dataset")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sweep", help="sensitivity grid over F or K")
    p.add_argument("--param", required=True, choices=("F", "K"))
    p.add_argument("--values", required=True, help="comma-separated integers")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--splits", default=None)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SpectralAttnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
