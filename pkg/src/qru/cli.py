"""Command-line entry point: ``qru run|gradcheck|param-count|simulate``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .cell import (
    REFERENCE_PARAM_COUNTS,
    PRESET_NAMES,
    ParameterLayout,
    build_cell_circuit,
    circuit_depth,
    forward_cell,
    init_params,
    param_count,
    preset,
)
from .errors import ConfigError, QRUError
from .gradients import Batch, finite_difference_gradient, gradient, max_relative_error
from .losses import LossSpec


def _gradcheck_batch(arch, rng, batch_size: int, steps: int):
    """Random inputs and loss head matching what the architecture is used for."""
    x = rng.uniform(-1, 1, size=(batch_size, steps, arch.input_dim))
    n_out = len(arch.output_qubits)
    if not arch.use_scale:
        return Batch(x, rng.uniform(-1, 1, size=(batch_size, steps, n_out)), "all"), LossSpec("mse")
    if n_out == 1:
        return Batch(x, rng.integers(0, 2, size=batch_size), "final"), LossSpec("bce")
    return Batch(x, np.eye(n_out)[rng.integers(0, n_out, size=batch_size)], "final"), LossSpec("ce")


def gradcheck(arch_name: str, seed: int = 0, batch_size: int = 2, steps: int = 3, step: float = 1e-5) -> dict:
    arch = preset(arch_name)
    rng = np.random.default_rng(seed)
    params = init_params(arch, rng, spread=np.pi)
    batch, spec = _gradcheck_batch(arch, rng, batch_size, steps)
    analytic = gradient(arch, params, batch, spec)
    numeric = finite_difference_gradient(arch, params, batch, spec, step=step)
    return {
        "architecture": arch.name,
        "seed": seed,
        "num_params": int(params.size),
        "loss": spec.kind,
        "max_relative_error": max_relative_error(analytic, numeric),
        "max_abs_error": float(np.max(np.abs(analytic - numeric))),
    }


_KIND_TARGETS = {"oscillation": "s1", "wdbc": "s2", "mnist35": "s3"}


def _resolve_arch(item: str):
    """A preset name, or an experiment config whose kind picks the reference count."""
    if item in PRESET_NAMES:
        return item, preset(item), REFERENCE_PARAM_COUNTS[item.split("-")[0]]
    if item.endswith((".yaml", ".yml", ".json")):
        from .experiments import load_config

        cfg = load_config(item)
        return item, cfg.arch(), REFERENCE_PARAM_COUNTS[_KIND_TARGETS[cfg.kind]]
    raise ConfigError(f"{item!r} is neither a preset ({', '.join(PRESET_NAMES)}) nor a config file")


def param_count_rows(items) -> list[dict]:
    rows = []
    for item in items:
        label, arch, target = _resolve_arch(item)
        count = param_count(arch)
        rows.append({"architecture": label, "count": count, "target": target, "match": count == target})
    return rows


def format_param_counts(rows) -> str:
    width = max([12] + [len(r["architecture"]) for r in rows])
    lines = [f"{'architecture':<{width}} {'count':>6} {'target':>6}  status"]
    for r in rows:
        status = "ok" if r["match"] else f"MISMATCH ({r['count'] - r['target']:+d})"
        lines.append(f"{r['architecture']:<{width}} {r['count']:>6} {r['target']:>6}  {status}")
    return "\n".join(lines)


def simulate_dump(arch_name: str, seed: int, x, hidden=None) -> dict:
    arch = preset(arch_name)
    params = init_params(arch, np.random.default_rng(seed))
    x = np.zeros(arch.input_dim) if x is None else np.asarray(x, dtype=float)
    gates = build_cell_circuit(arch, params, x, hidden)
    out = forward_cell(arch, params, x, hidden)
    return {
        "architecture": arch.name,
        "num_qubits": arch.num_qubits,
        "gate_count": len(gates),
        "depth": circuit_depth(gates, arch.num_qubits),
        "gates": [[g.kind, list(g.qubits), [float(p) for p in g.params]] for g in gates],
        "parameters": dict(zip(ParameterLayout.from_arch(arch).names(), params.tolist())),
        "outputs": out.outputs.tolist(),
        "next_hidden": out.next_hidden.tolist(),
    }


def _floats(text: str):
    return [float(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qru", description="Quantum recurrent unit simulator and experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config")
    run.add_argument("--seed", type=int, help="run a single seed instead of the config's list")
    run.add_argument("--output-dir", help="overrides $QRU_OUTPUT_DIR and the config value")
    run.add_argument("-q", "--quiet", action="store_true", help="no per-fold progress on stderr")

    gc = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    gc.add_argument("architecture", nargs="?", default="all", choices=("all",) + PRESET_NAMES)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--batch-size", type=int, default=2)
    gc.add_argument("--steps", type=int, default=3)
    gc.add_argument("--tolerance", type=float, default=1e-4)

    pc = sub.add_parser("param-count", help="closed-form parameter counts against the reference counts")
    pc.add_argument("architecture", nargs="*", help="preset names or experiment config files (default: all presets)")

    sim = sub.add_parser("simulate", help="dump one cell's circuit and readout as JSON")
    sim.add_argument("architecture", choices=PRESET_NAMES)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--x", type=_floats, help="comma-separated input values")
    sim.add_argument("--hidden", type=_floats, help="comma-separated previous hidden state")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            from .experiments import run_experiment

            logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                                format="%(levelname)s %(message)s", stream=sys.stderr)

            result = run_experiment(args.config, output_dir=args.output_dir, seed=args.seed)
            print(json.dumps(result.record["summary"], indent=2, sort_keys=True))
            print(f"wrote {result.results_path}")
            print(f"wrote {result.series_path}")
            return 0
        if args.command == "gradcheck":
            names = PRESET_NAMES[:3] if args.architecture == "all" else (args.architecture,)
            failed = False
            for name in names:
                r = gradcheck(name, args.seed, args.batch_size, args.steps)
                ok = r["max_relative_error"] < args.tolerance
                failed |= not ok
                print(f"{r['architecture']:<10} params={r['num_params']:<4} loss={r['loss']:<4} "
                      f"max_rel_err={r['max_relative_error']:.3e} {'ok' if ok else 'FAIL'}")
            return 1 if failed else 0
        if args.command == "param-count":
            print(format_param_counts(param_count_rows(args.architecture or PRESET_NAMES)))
            return 0
        if args.command == "simulate":
            print(json.dumps(simulate_dump(args.architecture, args.seed, args.x, args.hidden), indent=2))
            return 0
    except QRUError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 2


if __name__ == "__main__":
    sys.exit(main())
