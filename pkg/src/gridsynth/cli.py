"""Command line interface: ``gridsynth <command> [options]``.

Settings resolve as flag > ``--config`` file > ``GRIDSYNTH_*`` environment
variable > built-in default.  Exit codes: 0 success, 1 internal error,
2 invalid input, 3 search budget exceeded.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import datagen, evaluation, plotting
from .errors import BudgetError, GridsynthError
from .extrapolation import PartialImage, complete, extrapolate, read_mask
from .grid import DistanceConfig, build_similarity_tensor, load_png, save_png
from .program import execute, read_program, write_program
from .synthesis import SynthesisConfig, greedy_synthesize, oracle_candidate_count, oracle_synthesize

ENV_PREFIX = "GRIDSYNTH_"


class UsageError(GridsynthError):
    pass


def parse_color(text: str) -> tuple[int, int, int]:
    t = text.strip().lstrip("#")
    if "," in t:
        parts = [int(p) for p in t.split(",")]
    elif len(t) == 6:
        parts = [int(t[i : i + 2], 16) for i in (0, 2, 4)]
    else:
        raise ValueError(f"bad color {text!r}; use RRGGBB or r,g,b")
    if len(parts) != 3 or not all(0 <= p <= 255 for p in parts):
        raise ValueError(f"bad color {text!r}")
    return tuple(parts)


def parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"bad boolean {text!r}")


def _optional_color(text: str):
    return None if text.strip().lower() in ("", "none") else parse_color(text)


# key -> (parser, default); keys double as config-file keys and env suffixes
OPTIONS = {
    "grid_n": (int, None),
    "cell_m": (int, None),
    "eps": (float, 0.15),
    "lambda": (float, 0.01),
    "k": (int, 12),
    "min_cover": (int, 1),
    "early_stop": (parse_bool, True),
    "hist_bins": (int, 16),
    "w_emd": (float, 0.5),
    "w_struct": (float, 0.5),
    "seed": (int, 0),
    "threads": (int, 1),
    "exclude_color": (_optional_color, None),
    "canvas_color": (parse_color, (0, 0, 0)),
    "paint_order": (str, "consistent"),
    "repair": (parse_bool, True),
    "oracle_budget": (int, 5_000_000),
    "backward": (parse_bool, False),
    "singletons": (parse_bool, False),
    "noise": (parse_bool, True),
    "axis_maximal": (parse_bool, False),
    "tiles_per_label": (int, 8),
    "tile_source": (str, "procedural"),
    "gen_background": (parse_color, (40, 40, 40)),
    "gen_params": (str, None),
    "tol": (int, None),
    "calibrate": (parse_bool, False),
}
# execution-only settings that must not change any output bytes
_NOT_ECHOED = ("threads",)


def read_config_file(path: str) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip().replace("-", "_")
            if not sep:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            if key not in OPTIONS:
                raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = value.strip()
    return out


def resolve_config(args: argparse.Namespace, environ=os.environ) -> dict:
    file_values = read_config_file(args.config) if getattr(args, "config", None) else {}
    cfg = {}
    for key, (parse, default) in OPTIONS.items():
        flag = getattr(args, key, None)
        env_key = ENV_PREFIX + key.upper()
        try:
            if flag is not None:
                cfg[key] = flag
            elif key in file_values:
                cfg[key] = parse(file_values[key])
            elif env_key in environ:
                cfg[key] = parse(environ[env_key])
            else:
                cfg[key] = default
        except ValueError as exc:
            raise UsageError(f"setting {key}: {exc}") from None
    return cfg


def echo(cfg: dict) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.items() if k not in _NOT_ECHOED}


def synthesis_config(cfg: dict) -> SynthesisConfig:
    try:
        return SynthesisConfig(
            k=cfg["k"],
            eps=cfg["eps"],
            lam=cfg["lambda"],
            distance=DistanceConfig(cfg["hist_bins"], cfg["w_emd"], cfg["w_struct"]),
            min_cover=cfg["min_cover"],
            early_stop=cfg["early_stop"],
            threads=cfg["threads"],
            background=cfg["exclude_color"],
            oracle_budget=cfg["oracle_budget"],
            paint_order=cfg["paint_order"],
            repair=cfg["repair"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def generator_spec(cfg: dict) -> datagen.GeneratorSpec:
    extra = {}
    if cfg["gen_params"]:
        with open(cfg["gen_params"], encoding="utf-8") as fh:
            params = json.load(fh)
        unknown = set(params) - {"transition", "sketch_stats"}
        if unknown:
            raise UsageError(f"{cfg['gen_params']}: unknown keys {sorted(unknown)}")
        extra = params
    try:
        return datagen.GeneratorSpec(
            grid_n=cfg["grid_n"] or 9,
            cell_m=cfg["cell_m"] or 16,
            k=cfg["k"],
            noise=cfg["noise"],
            seed=cfg["seed"],
            tile_source=cfg["tile_source"],
            tiles_per_label=cfg["tiles_per_label"],
            background=cfg["gen_background"],
            axis_maximal=cfg["axis_maximal"],
            **extra,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _require_grid(cfg: dict) -> tuple[int, int]:
    if cfg["grid_n"] is None or cfg["cell_m"] is None:
        raise UsageError("--grid-n and --cell-m are required")
    return cfg["grid_n"], cfg["cell_m"]


def _write_json(path: Path, data) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(data, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _emit(summary: dict) -> None:
    print(json.dumps(summary, sort_keys=True))


def _progress_writer(enabled: bool):
    if not enabled:
        return None
    return lambda rec: print(json.dumps(rec, sort_keys=True), file=sys.stderr)


# --------------------------------------------------------------------------
# commands


def cmd_synth(args, cfg) -> int:
    grid_n, cell_m = _require_grid(cfg)
    img = load_png(args.image, grid_n, cell_m)
    scfg = synthesis_config(cfg)
    scored = greedy_synthesize(img, scfg, progress=_progress_writer(args.progress))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.image).stem
    write_program(scored.program, out / f"{stem}.prog")
    summary = {
        "command": "synth",
        "image": Path(args.image).name,
        "program": f"{stem}.prog",
        "pairs": len(scored.program),
        "objective": scored.objective,
        "true_positives": scored.true_positives,
        "agreeing_zeros": scored.agreeing_zeros,
        "per_step_gains": list(scored.per_step_gains),
        "repairs": scored.repairs,
        "config": echo(cfg),
    }
    if args.render or args.figures:
        rendering = execute(scored.program, cfg["canvas_color"], source=img)
        if args.render:
            save_png(rendering.image, out / f"{stem}_struct.png")
            summary["rendering"] = f"{stem}_struct.png"
        if args.figures:
            plotting.plot_synthesis(img, rendering.image, scored.program, out / f"{stem}_synth.png")
            summary["figure"] = f"{stem}_synth.png"
    _write_json(out / f"{stem}.json", summary)
    _emit(summary)
    return 0


def cmd_render(args, cfg) -> int:
    program = read_program(args.program)
    source = load_png(args.source, program.grid_n, program.cell_m) if args.source else None
    rendering = execute(program, cfg["canvas_color"], source=source)
    save_png(rendering.image, args.out)
    _emit({"command": "render", "output": str(args.out), "covered_cells": int(rendering.covered.sum())})
    return 0


def cmd_extrapolate(args, cfg) -> int:
    program = read_program(args.program)
    full = extrapolate(program, program.grid_n, backward=cfg["backward"], singletons=cfg["singletons"])
    write_program(full, args.out)
    _emit({"command": "extrapolate", "output": str(args.out), "pairs": len(full)})
    return 0


def cmd_complete(args, cfg) -> int:
    grid_n, cell_m = _require_grid(cfg)
    mask = read_mask(args.mask)
    if mask.shape[0] != grid_n:
        raise UsageError(f"mask is {mask.shape[0]}x{mask.shape[0]}, grid is {grid_n}x{grid_n}")
    partial = PartialImage.from_full(load_png(args.partial, grid_n, cell_m), mask)
    scfg = synthesis_config(cfg)
    result = complete(
        partial,
        scfg,
        backward=cfg["backward"],
        singletons=cfg["singletons"],
        progress=_progress_writer(args.progress),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.partial).stem
    save_png(result.image, out / f"{stem}_completed.png")
    save_png(result.structure.image, out / f"{stem}_struct.png")
    write_program(result.partial_program.program, out / f"{stem}_part.prog")
    write_program(result.program, out / f"{stem}_extrapolated.prog")
    summary = {
        "command": "complete",
        "completed": f"{stem}_completed.png",
        "structure": f"{stem}_struct.png",
        "partial_program": f"{stem}_part.prog",
        "program": f"{stem}_extrapolated.prog",
        "partial_objective": result.partial_program.objective,
        "covered_unknown_cells": int((result.structure.covered & ~partial.known_mask).sum()),
        "filled_cells": int(result.filled.sum()),
        "config": echo(cfg),
    }
    if args.figures:
        plotting.plot_completion(partial.image, result.structure.image, result.image, out / f"{stem}_complete.png")
        summary["figure"] = f"{stem}_complete.png"
    _write_json(out / f"{stem}.json", summary)
    _emit(summary)
    return 0


def cmd_gen(args, cfg) -> int:
    spec = generator_spec(cfg)
    records = datagen.generate_corpus(
        spec, args.count, args.occlusion, args.out, threads=cfg["threads"], config=echo(cfg)
    )
    _emit({"command": "gen", "out": str(args.out), "count": len(records), "spec_hash": spec.digest()})
    return 0


def cmd_eval(args, cfg) -> int:
    scfg = synthesis_config(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = evaluation.evaluate_corpus(
        args.corpus,
        scfg,
        mode=args.mode,
        grid_n=cfg["grid_n"],
        cell_m=cfg["cell_m"],
        tol=cfg["tol"],
        calibrate=cfg["calibrate"],
        backward=cfg["backward"],
        records_path=out / "records.jsonl",
    )
    report["config"] = echo(cfg)
    _write_json(out / "report.json", report)
    if args.figures:
        plotting.plot_corpus_report(report, out / "report.png")
    _emit({"command": "eval", "mode": args.mode, "aggregate": report["aggregate"]})
    return 0


def cmd_oracle(args, cfg) -> int:
    grid_n, cell_m = _require_grid(cfg)
    img = load_png(args.image, grid_n, cell_m)
    scfg = synthesis_config(cfg)
    count = oracle_candidate_count(img, scfg)
    if count > scfg.oracle_budget:
        raise BudgetError(f"oracle would evaluate {count} programs (budget {scfg.oracle_budget})", count)
    bx = build_similarity_tensor(img, scfg.eps, scfg.distance, threads=scfg.threads)
    start = time.perf_counter()
    best = oracle_synthesize(img, scfg, bx=bx)
    oracle_ms = (time.perf_counter() - start) * 1000
    greedy = greedy_synthesize(img, scfg, bx=bx)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.image).stem
    write_program(best.program, out / f"{stem}_oracle.prog")
    write_program(greedy.program, out / f"{stem}_greedy.prog")
    ratio = greedy.objective / best.objective if best.objective else 1.0
    summary = {
        "command": "oracle",
        "candidates": count,
        "oracle_objective": best.objective,
        "greedy_objective": greedy.objective,
        "ratio": ratio,
        "bound": 1 - np.exp(-1),
        "oracle_program": f"{stem}_oracle.prog",
        "greedy_program": f"{stem}_greedy.prog",
        "config": echo(cfg),
    }
    _write_json(out / f"{stem}_oracle.json", summary)
    summary["oracle_ms"] = round(oracle_ms, 1)
    _emit(summary)
    return 0


# --------------------------------------------------------------------------
# argument parsing


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("settings (flag > config file > GRIDSYNTH_* env > default)")
    g.add_argument("--config", help="key = value settings file")
    g.add_argument("--grid-n", dest="grid_n", type=int, help="cells per side (N)")
    g.add_argument("--cell-m", dest="cell_m", type=int, help="pixels per cell side (M)")
    g.add_argument("--eps", type=float, help="similarity threshold (default 0.15)")
    g.add_argument("--lambda", dest="lambda", type=float, help="weight on agreeing zeros (default 0.01)")
    g.add_argument("--k", type=int, help="maximum loops per program (default 12)")
    g.add_argument("--min-cover", dest="min_cover", type=int)
    g.add_argument("--early-stop", dest="early_stop", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--hist-bins", dest="hist_bins", type=int)
    g.add_argument("--w-emd", dest="w_emd", type=float)
    g.add_argument("--w-struct", dest="w_struct", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--threads", type=int)
    g.add_argument("--exclude-color", dest="exclude_color", type=_optional_color,
                   help="leave cells of this flat color out of synthesis (RRGGBB)")
    g.add_argument("--canvas-color", dest="canvas_color", type=parse_color, help="render background (RRGGBB)")
    g.add_argument("--paint-order", dest="paint_order", choices=("consistent", "selection"))
    g.add_argument("--repair", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--oracle-budget", dest="oracle_budget", type=int)
    g.add_argument("--backward", action=argparse.BooleanOptionalAction, default=None,
                   help="also extrapolate toward index 1")
    g.add_argument("--singletons", action=argparse.BooleanOptionalAction, default=None,
                   help="extrapolate loop axes that run only once")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridsynth", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize a program for an image")
    p.add_argument("image")
    p.add_argument("--out", default=".")
    p.add_argument("--render", action="store_true", help="also write the structure rendering")
    p.add_argument("--figures", action="store_true", help="write a matplotlib summary figure")
    p.add_argument("--progress", action="store_true", help="JSON lines per iteration on stderr")
    _add_config_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("render", help="execute a program file")
    p.add_argument("program")
    p.add_argument("--source", help="image that cell: components refer to")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("extrapolate", help="extend a partial-image program to the full grid")
    p.add_argument("program")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_extrapolate)

    p = sub.add_parser("complete", help="complete a partial image")
    p.add_argument("partial")
    p.add_argument("mask")
    p.add_argument("--out", default=".")
    p.add_argument("--figures", action="store_true")
    p.add_argument("--progress", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("gen", help="generate a synthetic corpus")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--occlusion", type=float, default=1 / 3, help="bottom fraction of rows hidden")
    p.add_argument("--out", required=True)
    p.add_argument("--noise", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--axis-maximal", dest="axis_maximal", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--tiles-per-label", dest="tiles_per_label", type=int)
    p.add_argument("--tile-source", dest="tile_source", help="'procedural' or a directory with 0..4 subdirs")
    p.add_argument("--gen-background", dest="gen_background", type=parse_color)
    p.add_argument("--gen-params", dest="gen_params", help="JSON with transition and/or sketch_stats")
    _add_config_flags(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("eval", help="evaluate a corpus")
    p.add_argument("corpus")
    p.add_argument("--mode", choices=("synth", "complete"), default="synth")
    p.add_argument("--out", required=True)
    p.add_argument("--tol", type=int, help="per-channel byte tolerance (default 0, or 8 for noisy corpora)")
    p.add_argument("--calibrate", action=argparse.BooleanOptionalAction, default=None,
                   help="pick eps per instance from the ground truth")
    p.add_argument("--figures", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("oracle", help="exhaustive optimum vs. greedy on a small image")
    p.add_argument("image")
    p.add_argument("--out", default=".")
    _add_config_flags(p)
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        return args.func(args, cfg)
    except BudgetError as exc:
        print(f"gridsynth: {exc}; candidate count {exc.count}", file=sys.stderr)
        return 3
    except (GridsynthError, OSError, ValueError) as exc:
        print(f"gridsynth: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"gridsynth: internal error: {exc!r}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
