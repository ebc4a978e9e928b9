"""Batch command-line entry point.

Subcommands: simulate | import | evaluate | gradcheck | report.
Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
Every run writes its fully resolved configuration next to its outputs so a
directory is self-describing and reproducible.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import dataio, evaluation, kernels, models, synth
from .errors import (
    ConfigError,
    ConversionError,
    DatasetError,
    DegenerateLabelsError,
    DivergenceError,
    InsufficientDataError,
    ProtocolError,
    SchemaError,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

GRADCHECK_THRESHOLD = 1e-4

SIMULATE_DEFAULTS = {
    "n_users": 10,
    "n_lectures": 10,
    "ability_sd": 1.0,
    "state_sd": 0.5,
    "signal_strength": 1.0,
    "difficulty_scale": 1.0,
    "stream_minutes": 8.0,
    "generate_streams": True,
    "seed": 0,
}

EVALUATE_DEFAULTS = {
    "variants": ["rasch"],
    "wl": [1, 2, 3, 4, 5, 6, 7, 8],
    "seed": 0,
    "pool_stride": 1,
    "epochs": 200,
    "lr": 1e-3,
    "batch_size": 64,
    "tcn_readout": "last",
}


def _parse_wl(text):
    """Window list: '1-8', '1,4,8', or a mix like '1,3-5'."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise ConfigError(f"empty window list: {text!r}")
    return sorted(set(out))


def _resolve(defaults, config_path, overrides):
    """Defaults < JSON config file < explicit flags."""
    resolved = dict(defaults)
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: malformed JSON ({exc})") from None
        unknown = set(doc) - set(defaults)
        if unknown:
            raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
        resolved.update(doc)
    for key, value in overrides.items():
        if value is not None:
            resolved[key] = value
    return resolved


def _write_resolved(out_dir, command, resolved):
    doc = {"command": command, **resolved}
    path = Path(out_dir) / "resolved_config.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _check_out_dir(out, force):
    out = Path(out)
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigError(f"output directory {out} is not empty (use --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# SVG figure
# ---------------------------------------------------------------------------

_BAR_COLORS = ("#4878a8", "#e49444", "#5ba053", "#b65fa0", "#85594c", "#6785b5")


def render_accuracy_svg(summary):
    """Grouped bar chart: one group per window length, one bar per variant."""
    variants = sorted(summary["variants"])
    wl_all = sorted({int(w) for v in variants for w in summary["variants"][v]["wl"]})
    bar_w, gap, left, top, plot_h = 22, 24, 56, 20, 280
    group_w = max(1, len(variants)) * bar_w
    width = left + len(wl_all) * (group_w + gap) + 160
    height = top + plot_h + 60

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for k in range(6):
        frac = k / 5.0
        y = top + plot_h * (1.0 - frac)
        parts.append(
            f'<line x1="{left}" y1="{y:.1f}" x2="{left + len(wl_all) * (group_w + gap)}" '
            f'y2="{y:.1f}" stroke="#dddddd"/>'
        )
        parts.append(
            f'<text x="{left - 8}" y="{y + 4:.1f}" text-anchor="end">{frac:.1f}</text>'
        )
    for gi, wl in enumerate(wl_all):
        gx = left + gi * (group_w + gap)
        for vi, variant in enumerate(variants):
            acc = summary["variants"][variant]["wl"].get(str(wl), {}).get("mean_accuracy")
            if acc is None:
                continue
            h = plot_h * acc
            x = gx + vi * bar_w
            y = top + plot_h - h
            parts.append(
                f'<rect x="{x:.1f}" y="{y:.1f}" width="{bar_w - 3}" height="{h:.1f}" '
                f'fill="{_BAR_COLORS[vi % len(_BAR_COLORS)]}"><title>{variant} '
                f'wl={wl}: {acc:.3f}</title></rect>'
            )
        parts.append(
            f'<text x="{gx + group_w / 2:.1f}" y="{top + plot_h + 18}" '
            f'text-anchor="middle">{wl}</text>'
        )
    parts.append(
        f'<text x="{left + len(wl_all) * (group_w + gap) / 2:.1f}" '
        f'y="{top + plot_h + 40}" text-anchor="middle">window length (minutes)</text>'
    )
    legend_x = left + len(wl_all) * (group_w + gap) + 16
    for vi, variant in enumerate(variants):
        y = top + 16 * vi
        parts.append(
            f'<rect x="{legend_x}" y="{y}" width="12" height="12" '
            f'fill="{_BAR_COLORS[vi % len(_BAR_COLORS)]}"/>'
        )
        parts.append(f'<text x="{legend_x + 18}" y="{y + 10}">{variant}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args):
    overrides = {
        "n_users": args.n_users,
        "n_lectures": args.n_lectures,
        "ability_sd": args.ability_sd,
        "state_sd": args.state_sd,
        "signal_strength": args.signal_strength,
        "difficulty_scale": args.difficulty_scale,
        "stream_minutes": args.stream_minutes,
        "generate_streams": False if args.no_streams else None,
        "seed": args.seed,
    }
    resolved = _resolve(SIMULATE_DEFAULTS, args.config, overrides)
    if resolved["n_users"] < 2:
        print("warning: leave-one-out evaluation needs at least 2 users", file=sys.stderr)
    config = synth.SynthConfig(**resolved)
    sessions, bank, truth = synth.generate(config)
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise ConfigError(f"output directory {out} is not empty (use --force to overwrite)")
    provenance = "synthetic " + json.dumps(resolved, sort_keys=True)
    manifest = dataio.write_dataset(sessions, bank, out, provenance=provenance, force=True)
    _write_resolved(out, "simulate", resolved)
    print(f"wrote {len(sessions)}-user dataset to {manifest}")
    print(f"forced-consistency cells: {truth.n_forced}")
    return EXIT_OK


def cmd_import(args):
    mapping_path = Path(args.mapping)
    if not mapping_path.exists():
        raise ConfigError(f"mapping spec not found: {mapping_path}")
    result = dataio.import_external(args.source, mapping_path)
    out = _check_out_dir(args.out, args.force)
    manifest = dataio.write_dataset(
        result.sessions, result.bank, out,
        provenance=f"imported from {args.source} via {mapping_path.name}", force=True,
    )
    _write_resolved(out, "import", {"source": str(args.source), "mapping": str(mapping_path)})
    for w in result.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"imported {len(result.sessions)} sessions, {len(result.bank)} items -> {manifest}")
    return EXIT_OK


def cmd_evaluate(args):
    overrides = {
        "variants": args.variants.split(",") if args.variants else None,
        "wl": _parse_wl(args.wl) if args.wl else None,
        "seed": args.seed,
        "pool_stride": args.pool_stride,
        "epochs": args.epochs,
        "lr": args.lr,
        "batch_size": args.batch_size,
        "tcn_readout": args.tcn_readout,
    }
    resolved = _resolve(EVALUATE_DEFAULTS, args.config, overrides)
    for v in resolved["variants"]:
        if v not in evaluation.VARIANT_NAMES:
            raise ConfigError(f"unknown variant {v!r}, expected one of {evaluation.VARIANT_NAMES}")

    sessions, bank, warnings = dataio.load_dataset(args.dataset)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)

    out = _check_out_dir(args.out, args.force)
    resolved_doc = {**resolved, "dataset": str(args.dataset), "numba": kernels.use_numba()}

    reports = []
    for variant in resolved["variants"]:
        reports.append(evaluation.run_sweep(
            sessions, bank, variant, resolved["wl"],
            base_seed=resolved["seed"], pool_stride=resolved["pool_stride"],
            epochs=resolved["epochs"], lr=resolved["lr"],
            batch_size=resolved["batch_size"], tcn_readout=resolved["tcn_readout"],
        ))
        print(f"{variant}: " + " ".join(
            f"wl{wl}={reports[-1].mean_accuracy(wl):.3f}" for wl in reports[-1].wl_values
        ))

    summary = evaluation.write_reports(reports, out, resolved_doc)
    (out / "accuracy_vs_window.svg").write_text(render_accuracy_svg(summary), encoding="utf-8")
    _write_resolved(out, "evaluate", resolved_doc)
    print(f"reports written to {out}")
    return EXIT_OK


def cmd_gradcheck(args):
    reports = models.gradcheck_architectures(seed=args.seed, h=args.h, corrupt=args.corrupt)
    failed = False
    for variant, report in sorted(reports.items()):
        status = "PASS" if report.max_rel_error < GRADCHECK_THRESHOLD else "FAIL"
        failed = failed or status == "FAIL"
        print(f"{variant}: max relative error {report.max_rel_error:.3e} [{status}]")
        for name, err in report.per_param:
            print(f"  {name}: {err:.3e}")
    if failed:
        print("gradient check FAILED", file=sys.stderr)
        return EXIT_NUMERIC
    print("gradient check passed")
    return EXIT_OK


def cmd_report(args):
    summary_path = Path(args.summary)
    if not summary_path.exists():
        raise ConfigError(f"summary file not found: {summary_path}")
    summary = json.loads(summary_path.read_text(encoding="utf-8"))
    out = _check_out_dir(args.out, args.force)

    lines = ["variant,wl,fold,held_out_user,threshold,accuracy,auc"]
    for variant in sorted(summary["variants"]):
        by_wl = summary["variants"][variant]["wl"]
        for wl in sorted(by_wl, key=int):
            entry = by_wl[wl]
            aucs = []
            for fr in entry["folds"]:
                auc = fr.get("auc")
                if auc is not None:
                    aucs.append(auc)
                lines.append(",".join([
                    variant, wl, str(fr["fold"]), fr["held_out_user"],
                    repr(float(fr["threshold"])), repr(float(fr["accuracy"])),
                    "" if auc is None else repr(float(auc)),
                ]))
            mean_auc = repr(sum(aucs) / len(aucs)) if aucs else ""
            lines.append(",".join([
                variant, wl, "mean", "", "", repr(float(entry["mean_accuracy"])), mean_auc,
            ]))
    (out / "accuracy_vs_window.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    lines = ["variant,wl,level,n_lectures,accuracy"]
    for variant in sorted(summary["variants"]):
        by_wl = summary["variants"][variant]["wl"]
        for wl in sorted(by_wl, key=int):
            for lvl in sorted(by_wl[wl]["difficulty"]):
                cell = by_wl[wl]["difficulty"][lvl]
                lines.append(",".join([
                    variant, wl, lvl, str(cell["n_lectures"]), repr(float(cell["accuracy"])),
                ]))
    (out / "difficulty_table.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    (out / "accuracy_vs_window.svg").write_text(render_accuracy_svg(summary), encoding="utf-8")
    print(f"report files written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="edustate",
        description="Understanding estimation: simulate data, import datasets, "
                    "evaluate models, verify gradients, and regenerate reports.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("--n-users", dest="n_users", type=int)
    p.add_argument("--n-lectures", dest="n_lectures", type=int)
    p.add_argument("--ability-sd", dest="ability_sd", type=float)
    p.add_argument("--state-sd", dest="state_sd", type=float)
    p.add_argument("--signal-strength", dest="signal_strength", type=float)
    p.add_argument("--difficulty-scale", dest="difficulty_scale", type=float)
    p.add_argument("--stream-minutes", dest="stream_minutes", type=float)
    p.add_argument("--no-streams", action="store_true", help="skip facial stream synthesis")
    p.add_argument("--seed", type=int)
    p.add_argument("--force", action="store_true", help="overwrite an existing directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("import", help="convert an external dataset to canonical form")
    p.add_argument("--source", required=True, help="external dataset directory")
    p.add_argument("--mapping", required=True, help="JSON mapping spec")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_import)

    p = sub.add_parser("evaluate", help="run the leave-one-out window sweep")
    p.add_argument("--dataset", required=True, help="dataset directory or manifest path")
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("--variants", help="comma list from: rasch,deep-irt,smart-mlp,smart-tcn")
    p.add_argument("--wl", help="window minutes, e.g. '1-8' or '1,4,8'")
    p.add_argument("--seed", type=int)
    p.add_argument("--pool-stride", dest="pool_stride", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--tcn-readout", dest="tcn_readout", choices=["last", "mean"])
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference check of all architectures")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--h", type=float, default=1e-4)
    p.add_argument("--corrupt", action="store_true",
                   help="debug: corrupt one gradient to prove the check detects it")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("report", help="regenerate CSV/SVG reports from a summary.json")
    p.add_argument("--summary", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, ConversionError, SchemaError, ProtocolError,
            InsufficientDataError, DegenerateLabelsError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DivergenceError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
