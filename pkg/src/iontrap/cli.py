"""Command line: ``run``, ``sweep``, ``validate`` and ``info``.

Exit codes: 0 success, 1 validation failure, 2 usage or configuration
error, 3 resource cap exceeded.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import itertools
import os
import sys
import time
from pathlib import Path
from typing import Sequence

from . import analysis
from .analysis import SimulationConfig
from .benchmarks import (
    BENCHMARK_NAMES,
    FACTOR_DEFAULTS,
    PUBLISHED_COUNTS,
    MultiplierLayout,
    build_grover,
    controlled_modmult,
    default_grover_instance,
    evaluate_classical,
    get_benchmark,
    grover_success_closed_form,
    pack,
    reference_trace,
)
from .circuits import Circuit, PulseTable, TableError, TableValidationError, compile, default_tables, eval_angle
from .circuits import parse_circuit, validate_tables
from .engine import DEFAULT_MEMORY_CAP, CapacityError, dense_bytes, probability_of
from .noise import DecoherenceModel, ErrorModel

EXIT_OK, EXIT_VALIDATION, EXIT_USAGE, EXIT_CAPACITY = 0, 1, 2, 3

TRACE_FIELDS = [
    "benchmark", "seed", "dec", "mode", "mu_theta", "sigma_theta", "mu_phi", "sigma_phi",
    "gate_index", "pulse_index", "fidelity", "norm_sq", "marker", "success_prob",
]
SUMMARY_FIELDS = [
    "benchmark", "param_point", "n_runs", "mean_final_fidelity", "ci_low", "ci_high",
    "error_rate_per_gate", "omega_max", "omega_avg", "wall_seconds",
]
GRID_KEYS = ("mu_theta", "sigma_theta", "mu_phi", "sigma_phi", "dec")


class UsageError(ValueError):
    pass


def fmt(x) -> str:
    """Numbers at 12 significant digits; ``None`` becomes an empty field."""
    if x is None:
        return ""
    if isinstance(x, (int, str)):
        return str(x)
    return f"{x:.12g}"


def parse_size(text: str) -> int:
    units = {"k": 1024, "m": 1024**2, "g": 1024**3, "t": 1024**4}
    t = text.strip().lower().rstrip("ib")
    if t and t[-1] in units:
        return int(float(t[:-1]) * units[t[-1]])
    return int(float(t))


def parse_list(text: str | None) -> list[str] | None:
    """Split a comma list; ``None`` stays ``None`` (option not given)."""
    if text is None:
        return None
    return [tok.strip() for tok in text.split(",") if tok.strip()]


def parse_seeds(text: str) -> list[int]:
    seeds: list[int] = []
    for tok in parse_list(text) or []:
        if "-" in tok[1:]:
            lo, hi = tok.split("-", 1) if not tok.startswith("-") else (tok, tok)
            seeds += range(int(lo), int(hi) + 1)
        else:
            seeds.append(int(tok))
    return sorted(set(seeds))


def worker_count(text: str | None) -> int:
    text = text or os.environ.get("IONSIM_WORKERS", "1")
    if text == "max":
        return os.cpu_count() or 1
    n = int(text)
    if n < 1:
        raise UsageError("--workers must be >= 1")
    return n


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--benchmark", "-b", choices=BENCHMARK_NAMES)
    src.add_argument("--circuit", type=Path, help="circuit text file")
    p.add_argument("--iterations", type=int, help="Grover iterations (default: the optimal 8)")
    p.add_argument("--tables", type=Path, help="pulse table file (validated before use)")
    p.add_argument("--memory-cap", default=None, help="dense state cap, e.g. 2G (default 2 GiB)")


def _add_sim(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("errors (angles accept pi/k; sweep takes comma lists)")
    g.add_argument("--sigma", help="set sigma for both angles")
    g.add_argument("--mu", help="set mu for both angles")
    for key in ("mu_theta", "sigma_theta", "mu_phi", "sigma_phi"):
        g.add_argument("--" + key.replace("_", "-"), dest=key)
    g.add_argument("--dec", help="phonon decay per pulse")
    g.add_argument("--dec-mode", choices=("decay", "jump"), default="decay")
    g.add_argument("--no-aux-levels", action="store_true", help="decay phonon level 1 only")
    p.add_argument("--mode", choices=("auto", "dense", "sparse"), default="auto")
    p.add_argument(
        "--allow-sparse-noise", action="store_true",
        help="permit sparse mode with operational errors (the support grows to dense size)",
    )
    p.add_argument("--seed", type=int, help="single seed")
    p.add_argument("--seeds", help="seed list, e.g. 1,2,5-8")
    p.add_argument("--stride", type=int, default=10, help="fidelity sampling stride in gates")
    p.add_argument("--workers", help="process count or 'max' (env IONSIM_WORKERS)")
    p.add_argument("--out", "-o", type=Path, help="CSV path (default stdout)")
    p.add_argument("--emit-plot", action="store_true", help="write a matplotlib script next to the CSV")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iontrap", description="Ion-trap pulse-level noise simulator")
    parser.add_argument("--config", type=Path, help="file of key=value option defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="noisy run(s) with a fidelity trace")
    _add_common(run)
    _add_sim(run)

    sweep = sub.add_parser("sweep", help="replicated runs over a parameter grid")
    _add_common(sweep)
    _add_sim(sweep)
    sweep.add_argument("--ci", type=float, help="target 95%% CI half-width (default 0.02; 0.03 phase-only)")
    sweep.add_argument("--min-runs", type=int, default=4)
    sweep.add_argument("--max-runs", type=int, default=64)
    sweep.add_argument("--correlate", action="store_true", help="add paired-seed omega columns")
    sweep.add_argument("--no-timing", action="store_true", help="write wall_seconds as 0 for reproducible bytes")

    val = sub.add_parser("validate", help="check pulse tables and benchmark structure")
    val.add_argument("--tables", type=Path)

    info = sub.add_parser("info", help="qubit, gate and pulse counts")
    info.add_argument("name", nargs="?", choices=BENCHMARK_NAMES)
    info.add_argument("--circuit", type=Path)
    info.add_argument("--iterations", type=int)
    info.add_argument("--tables", type=Path)
    info.add_argument("--memory-cap", default=None)
    return parser


def expand_config(argv: list[str]) -> list[str]:
    """Splice ``--config`` key=value lines in front of the explicit options."""
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    if i + 1 >= len(argv):
        raise UsageError("--config needs a file")
    path = Path(argv[i + 1])
    rest = argv[:i] + argv[i + 2 :]
    extra: list[str] = []
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    for raw in lines:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {raw!r} is not key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        flag = "--" + key.replace("_", "-")
        if value.lower() in ("true", "yes", "on"):
            extra.append(flag)
        elif value.lower() not in ("false", "no", "off"):
            extra += [flag, value]
    cmd = next((j for j, a in enumerate(rest) if a in ("run", "sweep", "validate", "info")), None)
    if cmd is None:
        raise UsageError("no command given")
    return rest[: cmd + 1] + extra + rest[cmd + 1 :]


# ---------------------------------------------------------------------------
# shared setup


def load_tables(path: Path | None) -> PulseTable:
    if path is None:
        return default_tables()
    table = PulseTable.load(path)
    validate_tables(table)
    return table


def load_circuit(args) -> Circuit:
    if getattr(args, "circuit", None) is not None:
        return parse_circuit(args.circuit.read_text(), name=args.circuit.stem)
    name = getattr(args, "benchmark", None) or getattr(args, "name", None)
    if name is None:
        raise UsageError("give --benchmark or --circuit")
    return get_benchmark(name, iterations=args.iterations)


SHARED = {"sigma": ("sigma_theta", "sigma_phi"), "mu": ("mu_theta", "mu_phi")}


def angle_grid(args) -> dict[tuple[str, ...], list[str]]:
    """Value lists per sweep axis; ``--sigma``/``--mu`` tie both angles to one axis."""
    grid: dict[tuple[str, ...], list[str]] = {}
    for shared, keys in SHARED.items():
        vals = parse_list(getattr(args, shared))
        if vals is not None:
            grid[keys] = vals
    for key in GRID_KEYS:
        vals = parse_list(getattr(args, key))
        if vals is not None:
            for axis in [a for a in grid if key in a]:
                rest = tuple(k for k in axis if k != key)
                kept = grid.pop(axis)
                if rest:
                    grid[rest] = kept
            grid[(key,)] = vals
    for axis, vals in grid.items():
        if not vals:
            raise UsageError(f"empty value list for {'/'.join(axis)}")
    return grid


def grid_points(grid: dict[tuple[str, ...], list[str]]) -> list[dict[str, str]]:
    order = {k: i for i, k in enumerate(GRID_KEYS)}
    axes = sorted(grid, key=lambda a: order[a[0]])
    points = []
    for combo in itertools.product(*(grid[a] for a in axes)):
        point = {k: v for axis, v in zip(axes, combo) for k in axis}
        points.append({k: point[k] for k in GRID_KEYS if k in point})
    return points


def models_for(point: dict[str, str], args) -> tuple[ErrorModel, DecoherenceModel]:
    vals = {k: eval_angle(point.get(k, "0")) for k in GRID_KEYS}
    error = ErrorModel(vals["mu_theta"], vals["sigma_theta"], vals["mu_phi"], vals["sigma_phi"])
    deco = DecoherenceModel(vals["dec"], args.dec_mode, not args.no_aux_levels)
    return error, deco


def representation_for(args, error: ErrorModel) -> str:
    if args.mode == "auto":
        return "dense" if not error.is_zero else "sparse"
    if args.mode == "sparse" and not error.is_zero:
        if not args.allow_sparse_noise:
            raise UsageError("sparse mode needs zero operational error (override: --allow-sparse-noise)")
        print("warning: sparse mode with operational error; expect dense-sized support", file=sys.stderr)
    return args.mode


def seeds_for(args) -> list[int]:
    if args.seeds:
        seeds = parse_seeds(args.seeds)
        if not seeds:
            raise UsageError("empty seed list")
        return seeds
    return [args.seed if args.seed is not None else 1]


@contextlib.contextmanager
def open_out(path: Path | None):
    """The CSV destination; stdout is flushed but left open."""
    if path is None:
        yield sys.stdout
        sys.stdout.flush()
        return
    with open(path, "w", newline="") as fh:
        yield fh


def _memory_cap(args) -> int:
    return parse_size(args.memory_cap) if args.memory_cap else DEFAULT_MEMORY_CAP


def _prepare(args, circuit: Circuit, tables: PulseTable) -> SimulationConfig:
    cfg = SimulationConfig(circuit, stride=args.stride, memory_cap=_memory_cap(args))
    cfg.schedule = compile(circuit, tables)
    cfg.reference = reference_trace(circuit, args.stride, cfg.schedule)
    return cfg


# ---------------------------------------------------------------------------
# commands


def cmd_run(args) -> int:
    grid = angle_grid(args)
    if any(len(v) > 1 for v in grid.values()):
        raise UsageError("run takes single values; use sweep for grids")
    point = grid_points(grid)[0] if grid else {}
    error, deco = models_for(point, args)
    tables = load_tables(args.tables)
    circuit = load_circuit(args)
    base = _prepare(args, circuit, tables)
    cfg = base.with_models(error, deco)
    cfg.representation = representation_for(args, error)
    traces = analysis.run_many(cfg, seeds_for(args), worker_count(args.workers))
    with open_out(args.out) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_FIELDS)
        for tr in traces:
            head = [circuit.name, tr.seed, fmt(deco.dec), cfg.representation, fmt(error.mu_theta),
                    fmt(error.sigma_theta), fmt(error.mu_phi), fmt(error.sigma_phi)]
            for s in tr.samples:
                w.writerow(head + [s.gate_index, s.pulse_index, fmt(s.fidelity), fmt(s.norm_sq),
                                   s.marker, fmt(s.success_prob)])
    if args.emit_plot and args.out:
        write_plot_script(args.out, "trace")
    return EXIT_OK


def cmd_sweep(args) -> int:
    grid = angle_grid(args)
    if not grid:
        raise UsageError("sweep needs at least one parameter list (e.g. --sigma pi/256,pi/128)")
    tables = load_tables(args.tables)
    circuit = load_circuit(args)
    workers = worker_count(args.workers)
    base = _prepare(args, circuit, tables)
    base_seed = seeds_for(args)[0]
    is_grover = "success_qubits" in circuit.metadata
    rows = []
    for point in grid_points(grid):
        start = time.perf_counter()
        error, deco = models_for(point, args)
        cfg = base.with_models(error, deco)
        cfg.representation = representation_for(args, error)
        summary = analysis.replicate(
            cfg, args.ci, args.min_runs, args.max_runs, base_seed, workers,
            metric="success" if is_grover else "fidelity",
        )
        try:
            rate = analysis.error_rate(summary, stride=10).rate
        except ValueError:
            rate = None
        omega_max = omega_avg = None
        if args.correlate:
            if error.is_zero or deco.dec == 0:
                raise UsageError("--correlate needs both operational error and dec > 0")
            seeds = summary.seeds if len(summary.seeds) > 1 else list(range(base_seed, base_seed + args.min_runs))
            rep = analysis.correlation(cfg, seeds, workers)
            omega_max, omega_avg = rep.omega_max, rep.omega_avg
        lo, hi = summary.final_ci
        wall = 0.0 if args.no_timing else time.perf_counter() - start
        label = ";".join(f"{k}={v}" for k, v in point.items())
        if summary.capped:
            print(f"warning: {label} stopped at {summary.n_runs} runs before reaching the CI target", file=sys.stderr)
        rows.append([circuit.name, label, summary.n_runs, fmt(summary.mean_final_fidelity), fmt(lo), fmt(hi),
                     fmt(rate), fmt(omega_max), fmt(omega_avg), fmt(wall)])
    with open_out(args.out) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        w.writerows(rows)
    if args.emit_plot and args.out:
        write_plot_script(args.out, "summary")
    return EXIT_OK


def structural_checks() -> list[tuple[str, bool, str]]:
    """Grover closed form on the default instance and the multiplier's permutation."""
    results = []
    inst = default_grover_instance(12)
    circuit = build_grover(inst)
    # marks are always sampled, so a full-length stride keeps only them
    ref = reference_trace(circuit, stride=circuit.num_gates)
    worst = 0.0
    for j in range(inst.iterations + 1):
        g = circuit.marks[f"iteration_{j}"]
        p = probability_of(ref.snapshots[g], inst.keys, inst.solutions)
        worst = max(worst, abs(p - grover_success_closed_form(inst.key_bits, inst.num_solutions, j)))
    results.append(("grover closed form", worst < 1e-9, f"max deviation {worst:.2e}"))

    bad = 0
    for n, spec in sorted(FACTOR_DEFAULTS.items()):
        lay = MultiplierLayout.after(1, spec.L)
        gates = controlled_modmult(0, lay, spec.X, spec.N)
        for ctrl in (0, 1):
            for y in range(spec.N):
                out = evaluate_classical(gates, pack({(0,): ctrl, lay.y: y}))
                want = pack({(0,): ctrl, lay.y: (y * spec.X) % spec.N if ctrl else y})
                bad += out != want
    results.append(("modmult permutation", bad == 0, f"{bad} wrong outputs"))
    return results


def cmd_validate(args) -> int:
    ok = True
    try:
        table = PulseTable.load(args.tables) if args.tables else PulseTable.parse(default_tables().dump())
        report = validate_tables(table)
    except TableValidationError as exc:
        report, ok = exc.report, False
        failed = exc.failures
    else:
        failed = {}
    for variant, r in report.items():
        status = "FAIL" if variant in failed else "ok"
        print(f"{variant:6s} pulses={r['pulses']} max_deviation={r['max_deviation']:.3e} "
              f"phonon_residue={r['phonon_residue']:.3e} {status}")
    if ok:
        for name, passed, detail in structural_checks():
            print(f"{name}: {'ok' if passed else 'FAIL'} ({detail})")
            ok &= passed
    return EXIT_OK if ok else EXIT_VALIDATION


def cmd_info(args) -> int:
    tables = load_tables(args.tables)
    circuit = load_circuit(args)
    sched = compile(circuit, tables)
    cap = _memory_cap(args)
    need = dense_bytes(circuit.num_qubits)
    print(f"benchmark        {circuit.name}")
    print(f"qubits           {circuit.num_qubits}")
    print(f"gates            {sched.num_gates}")
    print(f"pulses           {sched.num_pulses}")
    print(f"pulses_per_gate  {sched.num_pulses / max(sched.num_gates, 1):.3f}")
    print("pulse_kinds      " + " ".join(f"{k}={v}" for k, v in sched.kind_counts().items()))
    flag = "  EXCEEDS CAP (sparse decoherence-only runs still possible)" if need > cap else ""
    print(f"dense_memory     {need / 2**20:.1f} MiB (cap {cap / 2**20:.0f} MiB){flag}")
    if circuit.name in PUBLISHED_COUNTS:
        q, p = PUBLISHED_COUNTS[circuit.name]
        print(f"published        qubits={q} pulses={p} (pulse difference {100 * (sched.num_pulses - p) / p:+.1f}%)")
    return EXIT_OK


PLOT_TEMPLATE = '''"""Plot {csv_name}; run with python."""
import csv
from collections import defaultdict

import matplotlib.pyplot as plt

rows = list(csv.DictReader(open({csv_path!r})))
kind = {kind!r}
fig, ax = plt.subplots()
if kind == "trace":
    by_seed = defaultdict(list)
    for r in rows:
        by_seed[r["seed"]].append(r)
    iterations = [r for r in rows if r["marker"].startswith("iteration_") and r["success_prob"]]
    if iterations:
        for seed, rs in by_seed.items():
            pts = [(int(r["marker"].split("_")[1]), float(r["success_prob"])) for r in rs
                   if r["marker"].startswith("iteration_")]
            ax.plot(*zip(*pts), marker="o", label=f"seed {{seed}}")
        ax.set_xlabel("iteration")
        ax.set_ylabel("probability of a matching key")
    else:
        for seed, rs in by_seed.items():
            ax.plot([int(r["gate_index"]) for r in rs], [float(r["fidelity"]) for r in rs], label=f"seed {{seed}}")
        ax.set_xlabel("gates")
        ax.set_ylabel("fidelity")
else:
    labels = [r["param_point"] for r in rows]
    mean = [float(r["mean_final_fidelity"]) for r in rows]
    err = [float(r["ci_high"]) - float(r["mean_final_fidelity"]) for r in rows]
    ax.errorbar(range(len(rows)), mean, yerr=err, fmt="o")
    ax.set_xticks(range(len(rows)), labels, rotation=60, ha="right", fontsize=7)
    ax.set_ylabel("final fidelity")
ax.legend(fontsize=7) if kind == "trace" else None
fig.tight_layout()
fig.savefig({png_path!r}, dpi=150)
'''


def write_plot_script(csv_path: Path, kind: str) -> Path:
    script = csv_path.with_suffix(".plot.py")
    script.write_text(
        PLOT_TEMPLATE.format(
            csv_name=csv_path.name, csv_path=str(csv_path), kind=kind, png_path=str(csv_path.with_suffix(".png"))
        )
    )
    return script


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "validate": cmd_validate, "info": cmd_info}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(expand_config(argv))
        return COMMANDS[args.command](args)
    except CapacityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except TableValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (UsageError, TableError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
