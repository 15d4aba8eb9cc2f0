"""Command-line entry point: ``bell-lab <subcommand> [options]``.

Options come from three layers: built-in defaults, an optional TOML file
(``--config``), and explicit flags, in increasing priority.  Every report
starts with comment lines holding the tool version, the resolved config and
the seed.  Exit codes: 0 success, 1 bad input or configuration, 2 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

from . import __version__
from .errors import BellLabError, InvariantViolation
from .streams import check_seed

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

OUT_ENV = "BELL_LAB_OUT"

# keys that never change results and therefore stay out of report headers
NON_RESULT_KEYS = {"workers", "out", "config"}

COMMON_DEFAULTS = {"seed": 0, "workers": 1, "format": "csv", "out": None}

DEFAULTS = {
    "chsh": {"model": "quantum", "angles": "standard", "n": 100_000, "bootstrap": 0,
             "save_sheets": False},
    "quadruples": {"model": "lrhvm", "angles": "standard", "n": 10_000},
    "violation-freq": {"model": "lrhvm", "setup": "boundary", "angles": None, "n": 1000,
                       "replications": 2000},
    "coupling": {"input": None, "model": "quantum", "angles": "standard", "alpha": 0.01,
                 "guard": [], "mc_n": 1_000_000},
    "reshuffle": {"input": None},
    "coincidence": {"delay": "reference", "delta": 1e-6, "power": 2.0, "rate": 1e4,
                    "windows": "1.25e-7,2.5e-7,5e-7,1e-6,2e-6,1e-5,inf", "mode": "nearest",
                    "angles": "standard", "n": 100_000, "save_events": False},
    "bertrand": {"protocol": "all", "n": 1_000_000, "radius": 1.0},
    "purity": {"input": [], "block_length": 2, "resamples": 1, "alpha": 0.01},
    "fine-structure": {"input": None, "max_lag": 20, "alpha": 0.01},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


# ------------------------------------------------------------ value parsing

def parse_angle(text) -> float:
    """Radians, or degrees with a ``deg`` suffix (``45deg``)."""
    if isinstance(text, (int, float)):
        value = float(text)
    else:
        s = str(text).strip().lower()
        try:
            if s.endswith("deg"):
                value = math.radians(float(s[:-3]))
            else:
                value = float(s)
        except ValueError:
            raise UsageError(f"bad angle {text!r}") from None
    if not math.isfinite(value):
        raise UsageError(f"angle must be finite, got {text!r}")
    return value


def parse_angles(value):
    from .sheets import Design
    if value == "standard":
        return Design.standard()
    items = value.split(",") if isinstance(value, str) else list(value)
    if len(items) != 4:
        raise UsageError("--angles needs four values a,a',b,b'")
    return Design(*(parse_angle(v) for v in items))


def parse_windows(value) -> list[float]:
    items = value.split(",") if isinstance(value, str) else list(value)
    out = []
    for v in items:
        try:
            w = float(v)
        except (TypeError, ValueError):
            raise UsageError(f"bad window {v!r}") from None
        if not w > 0:
            raise UsageError("windows must be > 0")
        out.append(w)
    if not out:
        raise UsageError("window grid is empty")
    return out


def _positive_int(cfg, key, minimum=1) -> int:
    v = cfg[key]
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        raise UsageError(f"{key} must be an integer >= {minimum}, got {v!r}")
    return v


# ------------------------------------------------------------ report writing

class Reporter:
    """Writes reports into the output directory with a provenance header."""

    def __init__(self, command: str, cfg: dict):
        self.command = command
        self.cfg = cfg
        self.fmt = cfg["format"]
        self.out = Path(cfg["out"] or os.environ.get(OUT_ENV) or ".")
        self.written: list[Path] = []

    def provenance(self) -> dict:
        shown = {k: v for k, v in sorted(self.cfg.items()) if k not in NON_RESULT_KEYS}
        return {"tool": f"bell-lab {__version__}", "command": self.command,
                "config": shown, "seed": self.cfg["seed"]}

    def write(self, stem: str, header: list[str], rows: list[list], notes=()) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        meta = self.provenance()
        path = self.out / f"{stem}.{self.fmt}"
        if self.fmt == "csv":
            from .sheets import rows_to_csv
            comments = [meta["tool"], f"command: {self.command}",
                        "config: " + json.dumps(meta["config"], sort_keys=True),
                        f"seed: {meta['seed']}", *notes]
            text = rows_to_csv(header, [[_cell(v) for v in r] for r in rows], comments)
        else:
            lines = [json.dumps({"meta": {**meta, "notes": list(notes)}}, sort_keys=True)]
            lines += [json.dumps(dict(zip(header, (_json_cell(v) for v in r)))) for r in rows]
            text = "\n".join(lines) + "\n"
        path.write_text(text)
        self.written.append(path)
        return path


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    if hasattr(v, "item"):
        return _cell(v.item())
    return v


def _json_cell(v):
    if hasattr(v, "item"):
        v = v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    return v


# ------------------------------------------------------------ subcommands

def _model(name):
    from .models import model_from_name
    return model_from_name(str(name))


def cmd_chsh(cfg, rep: Reporter):
    from .experiment import bootstrap_se, chsh_from_pairs, run_pair_experiments
    from .sheets import PAIR_HEADER, pair_sheets_to_rows
    design = parse_angles(cfg["angles"])
    n = _positive_int(cfg, "n")
    sheets = run_pair_experiments(_model(cfg["model"]), design, n, cfg["seed"], workers=cfg["workers"])
    r = chsh_from_pairs(sheets)
    rows = r.rows()
    if cfg["bootstrap"]:
        rows.append(["S_bootstrap_se", bootstrap_se(sheets, _positive_int(cfg, "bootstrap"), cfg["seed"]),
                     "", sum(r.counts)])
    rep.write("chsh", ["quantity", "estimate", "se", "n"], rows)
    if cfg["save_sheets"]:
        rep.write("chsh_sheets", PAIR_HEADER, pair_sheets_to_rows(sheets))
    return [f"S = {r.S:.6f} +- {r.se_S:.6f}, |S| {'>' if r.violated else '<='} 2"]


def cmd_quadruples(cfg, rep):
    from .experiment import chsh_from_quadruples, run_counterfactual_experiment
    from .sheets import QUAD_HEADER, quadruples_to_rows
    design = parse_angles(cfg["angles"])
    sheet = run_counterfactual_experiment(_model(cfg["model"]), design, _positive_int(cfg, "n"),
                                          cfg["seed"], workers=cfg["workers"])
    r = chsh_from_quadruples(sheet)
    rep.write("quadruples", QUAD_HEADER, quadruples_to_rows(sheet))
    rep.write("quadruples_chsh", ["quantity", "estimate", "se", "n"], r.rows())
    return [f"S = {r.S:.6f} from {sheet.n} quadruples (|S| <= 2 holds row by row)"]


def cmd_violation_freq(cfg, rep):
    from .experiment import boundary_setup, interior_setup, violation_frequency
    setups = {"boundary": boundary_setup, "interior": interior_setup}
    if cfg["setup"] not in setups:
        raise UsageError(f"setup must be one of {sorted(setups)}")
    model, design = setups[cfg["setup"]]()
    if cfg["model"] != "lrhvm":
        model = _model(cfg["model"])
    if cfg["angles"] is not None:
        design = parse_angles(cfg["angles"])
    cfg["angles"] = list(design.angles)
    r = violation_frequency(model, design, _positive_int(cfg, "n"), _positive_int(cfg, "replications", 100),
                            cfg["seed"], workers=cfg["workers"])
    rep.write("violation_freq", ["n_per_pair", "replications", "violations", "fraction", "ci_low",
                                 "ci_high", "mean_S"],
              [[r.n_per_pair, r.replications, r.violations, r.fraction, r.ci_low, r.ci_high, r.mean_S]])
    return [f"|S-hat| > 2 in {r.violations}/{r.replications} replications "
            f"(fraction {r.fraction:.4f}, 95% CI [{r.ci_low:.4f}, {r.ci_high:.4f}])"]


def _require_input(cfg):
    if not cfg["input"]:
        raise UsageError("--input is required")
    return cfg["input"]


def _run_series(paths):
    from .completeness import read_run_series
    return [read_run_series(p, run_id=i) for i, p in enumerate(paths)]


def cmd_coupling(cfg, rep):
    from .completeness import homogeneity_guard
    from .experiment import coupling_check
    from .sheets import read_pair_sheets
    design = parse_angles(cfg["angles"])
    sheets = read_pair_sheets(_require_input(cfg), design)
    guard = homogeneity_guard(_run_series(cfg["guard"])) if cfg["guard"] else None
    r = coupling_check(_model(cfg["model"]), sheets, cfg["alpha"], guard=guard,
                       mc_n=_positive_int(cfg, "mc_n"), seed=cfg["seed"])
    notes = [] if r.reliable else [r.annotation]
    rows = [[t.name, t.setting_pair, t.observed, t.expected, t.z, t.p_value, t.failed] for t in r.tests]
    rep.write("coupling", ["test", "setting_pair", "observed", "expected", "z", "p_value", "failed"],
              rows, notes)
    out = [f"coupling {'holds' if r.passed else 'rejected'}: {len(r.failures)} of {len(r.tests)} "
           f"equalities fail at alpha={r.alpha} (Bonferroni)"]
    return out + notes


def cmd_reshuffle(cfg, rep):
    from .reshuffle import reshuffle_feasibility
    from .sheets import (COUNT_HEADER, PAIR_HEADER, QUAD_HEADER, CountTable, quadruples_to_rows,
                         read_count_table, read_pair_sheets, read_quadruples, sniff_header)
    path = _require_input(cfg)
    header = sniff_header(path)
    if header == PAIR_HEADER:
        table = CountTable.from_sheets(read_pair_sheets(path))
    elif header == COUNT_HEADER:
        table = read_count_table(path)
    elif header == QUAD_HEADER:
        table = CountTable.from_sheets(read_quadruples(path).pair_sheets())
    else:
        raise UsageError(f"unrecognised input header {','.join(header)}")
    r = reshuffle_feasibility(table)
    verdict = "feasible" if r.feasible else "infeasible"
    rep.write("reshuffle", ["verdict", "violated", "min_chsh_slack", "N"],
              [[verdict, r.violated or "", r.max_slack, int(table.totals[0])]])
    if r.feasible:
        rep.write("reshuffle_witness", QUAD_HEADER, quadruples_to_rows(r.quadruple_sheet()))
    return [verdict + ("" if r.feasible else f": {r.violated}")]


def cmd_coincidence(cfg, rep):
    from . import coincidence as co
    design = parse_angles(cfg["angles"])
    delta = float(cfg["delta"])
    if not (delta >= 0 and math.isfinite(delta)):
        raise UsageError("delta must be finite and >= 0")
    delays = {"reference": lambda: co.PowerDelay(delta, float(cfg["power"])),
              "independent": lambda: co.JitterDelay(delta),
              "zero": lambda: co.ZeroDelay()}
    if cfg["delay"] not in delays:
        raise UsageError(f"delay must be one of {sorted(delays)}")
    model = co.DelayModel(delays[cfg["delay"]](), delta, float(cfg["rate"]))
    windows = parse_windows(cfg["windows"])
    n = _positive_int(cfg, "n")
    curve = co.coincidence_chsh_scan(model, design, n, windows, cfg["seed"], mode=cfg["mode"],
                                     workers=cfg["workers"])
    rep.write("coincidence", ["window", "retained_fraction", "S", "se"],
              [[p.window, p.retained_fraction, p.S, p.se] for p in curve])
    if cfg["save_events"]:
        a, b = co.generate_event_streams(model, design, n, cfg["seed"], workers=cfg["workers"])
        rep.write("coincidence_events", co.EVENT_HEADER, a.rows() + b.rows())
    return [f"W={p.window:.4g}: retained {p.retained_fraction:.4f}, S = {p.S:.4f} +- {p.se:.4f}"
            for p in curve]


def cmd_bertrand(cfg, rep):
    from .bertrand import ChordProtocol, Variant, analytic_probability, hit_probability
    names = [v.value for v in Variant] if cfg["protocol"] == "all" else [cfg["protocol"]]
    n = _positive_int(cfg, "n")
    rows, lines = [], []
    for name in names:
        proto = ChordProtocol(name, float(cfg["radius"]))
        est, se = hit_probability(proto, n, cfg["seed"], workers=cfg["workers"])
        exact = analytic_probability(proto)
        rows.append([name, n, est, se, str(exact)])
        lines.append(f"{name}: P = {est:.6f} +- {se:.6f} (exact {exact})")
    rep.write("bertrand", ["protocol", "n", "estimate", "se", "exact"], rows)
    return lines


def cmd_purity(cfg, rep):
    from .completeness import PURITY_HEADER, homogeneity_guard, purity_test
    paths = cfg["input"] or []
    if isinstance(paths, str):
        paths = [paths]
    if len(paths) < 2:
        raise UsageError("purity needs at least two --input run files")
    runs = _run_series(paths)
    r = purity_test(runs, _positive_int(cfg, "block_length"), _positive_int(cfg, "resamples"),
                    cfg["alpha"], cfg["seed"])
    g = homogeneity_guard(runs, cfg["alpha"])
    rows = r.rows() + [["homogeneity_guard", g.statistic, g.p_value, g.dof,
                        f"{g.segments} segments per run", not g.passed]]
    notes = [f"verdict: {r.verdict} at alpha={r.alpha} over {r.n_tests} tests (Bonferroni)",
             f"sub-ensemble sizes: {json.dumps(r.subensemble_size)}"]
    rep.write("purity", PURITY_HEADER, rows, notes)
    return notes + g.lines()


def cmd_fine_structure(cfg, rep):
    from .completeness import FINE_HEADER, fine_structure, read_run_series
    series = read_run_series(_require_input(cfg))
    r = fine_structure(series, _positive_int(cfg, "max_lag"), cfg["alpha"])
    rep.write("fine_structure", FINE_HEADER, r.rows(), r.lines())
    return r.lines()


COMMANDS = {
    "chsh": cmd_chsh, "quadruples": cmd_quadruples, "violation-freq": cmd_violation_freq,
    "coupling": cmd_coupling, "reshuffle": cmd_reshuffle, "coincidence": cmd_coincidence,
    "bertrand": cmd_bertrand, "purity": cmd_purity, "fine-structure": cmd_fine_structure,
}


# ------------------------------------------------------------ argument parsing

def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    common = _Parser(add_help=False, argument_default=S)
    common.add_argument("--seed", type=int, help="64-bit unsigned seed (default 0)")
    common.add_argument("--workers", type=int, help="worker threads; never changes results")
    common.add_argument("--format", choices=["csv", "jsonl"], help="report format (default csv)")
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or .)")
    common.add_argument("--config", help="TOML file with option values; flags override it")

    parser = _Parser(prog="bell-lab", description="Bell-CHSH simulation and analysis toolkit.")
    parser.add_argument("--version", action="version", version=f"bell-lab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_text):
        return sub.add_parser(name, parents=[common], help=help_text, argument_default=S)

    models = ["lrhvm", "shvm", "rot_chvm", "quantum"]
    angles_help = "a,a',b,b' in radians; suffix 'deg' for degrees (default: standard CHSH angles)"

    p = add("chsh", "estimate S from four simulated pair sheets")
    p.add_argument("--model", choices=models)
    p.add_argument("--angles", help=angles_help)
    p.add_argument("--n", type=int, help="trials per setting pair")
    p.add_argument("--bootstrap", type=int, help="bootstrap resamples for se(S)")
    p.add_argument("--save-sheets", action="store_true", dest="save_sheets")

    p = add("quadruples", "counterfactual quadruple sheet from a local realistic model")
    p.add_argument("--model", choices=models)
    p.add_argument("--angles", help=angles_help)
    p.add_argument("--n", type=int)

    p = add("violation-freq", "how often finite samples show |S| > 2")
    p.add_argument("--model", choices=models)
    p.add_argument("--setup", choices=["boundary", "interior"])
    p.add_argument("--angles", help=angles_help)
    p.add_argument("--n", type=int, help="trials per setting pair")
    p.add_argument("--replications", type=int)

    p = add("coupling", "test a model against pair sheets")
    p.add_argument("--input", help="pair-sheet CSV trial,setting_x,setting_y,a,b")
    p.add_argument("--model", choices=models)
    p.add_argument("--angles", help=angles_help)
    p.add_argument("--alpha", type=float)
    p.add_argument("--guard", nargs="+", help="run-series CSVs for the homogeneity guard")
    p.add_argument("--mc-n", type=int, dest="mc_n")

    p = add("reshuffle", "can four pair sheets be rearranged into quadruples?")
    p.add_argument("--input", help="pair-sheet, quadruple or count-table (setting_pair,a,b,count) CSV")

    p = add("coincidence", "CHSH versus coincidence window for a local delay model")
    p.add_argument("--delay", choices=["reference", "independent", "zero"])
    p.add_argument("--delta", type=float, help="maximum delay in seconds")
    p.add_argument("--power", type=float)
    p.add_argument("--rate", type=float, help="emission rate per second")
    p.add_argument("--windows", help="comma-separated window widths in seconds ('inf' allowed)")
    p.add_argument("--mode", choices=["nearest", "bins"])
    p.add_argument("--angles", help=angles_help)
    p.add_argument("--n", type=int, help="emitted pairs")
    p.add_argument("--save-events", action="store_true", dest="save_events")

    p = add("bertrand", "chord paradox hit probabilities")
    p.add_argument("--protocol", choices=["parallel", "endpoints", "midpoint", "all"])
    p.add_argument("--n", type=int)
    p.add_argument("--radius", type=float)

    p = add("purity", "purity tests across runs")
    p.add_argument("--input", nargs="+", help="two or more trial,outcome CSVs")
    p.add_argument("--block-length", type=int, dest="block_length")
    p.add_argument("--resamples", type=int)
    p.add_argument("--alpha", type=float)

    p = add("fine-structure", "autocorrelation, periodogram and runs test")
    p.add_argument("--input", help="trial,outcome CSV")
    p.add_argument("--max-lag", type=int, dest="max_lag")
    p.add_argument("--alpha", type=float)
    return parser


def _load_toml(path: str, command: str) -> dict:
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e}") from None
    except tomllib.TOMLDecodeError as e:
        raise UsageError(f"invalid TOML in {path}: {e}") from None
    flat = {k: v for k, v in data.items() if not isinstance(v, dict)}
    section = data.get(command, {})
    if not isinstance(section, dict):
        raise UsageError(f"[{command}] must be a table")
    merged = {**flat, **section}
    return {k.replace("-", "_"): v for k, v in merged.items()}


def resolve_config(command: str, flags: dict) -> dict:
    cfg = {**COMMON_DEFAULTS, **DEFAULTS[command]}
    if "config" in flags:
        from_file = _load_toml(flags["config"], command)
        unknown = sorted(set(from_file) - set(cfg))
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {', '.join(unknown)}")
        cfg.update(from_file)
    cfg.update({k: v for k, v in flags.items() if k not in ("command", "config")})
    try:
        cfg["seed"] = check_seed(cfg["seed"])
    except (TypeError, ValueError) as e:
        raise UsageError(str(e)) from None
    _positive_int(cfg, "workers")
    if cfg.get("angles") is not None:
        # echo resolved radians in every report header
        cfg["angles"] = list(parse_angles(cfg["angles"]).angles)
    if cfg["format"] not in ("csv", "jsonl"):
        raise UsageError("format must be csv or jsonl")
    return cfg


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    flags = vars(args)
    command = flags["command"]
    try:
        cfg = resolve_config(command, flags)
        rep = Reporter(command, cfg)
        lines = COMMANDS[command](cfg, rep)
    except InvariantViolation as e:
        print(f"bell-lab: internal invariant violated: {e}", file=sys.stderr)
        return 2
    except (UsageError, BellLabError, OSError) as e:
        print(f"bell-lab {command}: error: {e}", file=sys.stderr)
        return 1
    for line in lines:
        print(line)
    for path in rep.written:
        print(f"wrote {path}")
    return 0


def main() -> int:
    return run(sys.argv[1:])
