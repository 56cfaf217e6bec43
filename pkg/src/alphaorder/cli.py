"""Command-line interface: datasets, training, search, enumeration,
simulation, comparison reports, and transfer/fine-tuning.

Every run directory receives exactly one ``run_manifest.json`` recording the
command line, config digests, seeds, and artifact paths; outputs are
byte-reproducible for a fixed seed (with ``--jobs 1``). Exit codes: 0 on
success, 1 for runtime/I-O failures, 2 for usage or config errors.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from multiprocessing import Pool

import numpy as np

from . import __version__
from .baselines import FULL_ENUMERATION_MAX_N, enumerate_optimal, fifo_order, sample_orders_grouped
from .core import (
    evaluate_objective,
    load_scenario,
    repair_order,
    scenario_to_dict,
)
from .data import default_geometry_path
from .exceptions import ConfigurationError, ContractViolation
from .geometry import default_geometry, load_geometry
from .neural import decode_order, load_checkpoint, save_checkpoint
from .search import improvement_ratio, mcts_search
from .simulator import (
    ALGORITHMS,
    DemandConfig,
    load_demand,
    load_demand_preset,
    run_simulation,
)
from .training import (
    TrainConfig,
    fine_tune_from_search,
    load_dataset,
    load_pairs,
    matched_arrival_rate,
    sample_dataset,
    train,
    transfer_init,
)

TIME_FMT = "{:.6f}"


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir: str, args: argparse.Namespace, inputs: list[str], outputs: list[str]) -> None:
    manifest = {
        "schema": "alphaorder/run-manifest",
        "version": 1,
        "tool_version": __version__,
        "command": [os.path.basename(sys.argv[0])] + sys.argv[1:] if sys.argv else [],
        "args": {k: v for k, v in sorted(vars(args).items()) if k != "func"},
        "seed": getattr(args, "seed", None),
        "input_digests": {p: _sha256(p) for p in sorted(set(inputs)) if os.path.exists(p)},
        "outputs": sorted(outputs),
    }
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "run_manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_geometry_arg(path: str | None):
    if path is None:
        return default_geometry()
    return load_geometry(path)


def _load_demand_arg(spec: str | None, arrival_rate: float | None) -> DemandConfig:
    if spec is None:
        return DemandConfig(arrival_rate=arrival_rate if arrival_rate is not None else 300.0)
    if os.path.exists(spec):
        return load_demand(spec, arrival_rate=arrival_rate)
    return load_demand_preset(spec, arrival_rate=arrival_rate)


def _load_policy(ckpt: str):
    theta, _, _, _ = load_checkpoint(ckpt)
    return theta


# --- subcommands ----------------------------------------------------------------


def cmd_gen_data(args) -> int:
    from .training import save_dataset

    geometry = _load_geometry_arg(args.geometry)
    demand = None
    if args.demand is not None or args.arrival_rate is not None:
        demand = _load_demand_arg(args.demand, args.arrival_rate)
    dataset = sample_dataset(geometry, demand, args.n_vehicles, args.count, args.seed)
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "dataset.jsonl")
    save_dataset(dataset, out_path)
    inputs = [p for p in (args.geometry, args.demand) if p and os.path.exists(p)]
    _write_manifest(args.out, args, inputs, [out_path])
    print(f"wrote {len(dataset.instances)} instances (N={dataset.n_vehicles}) to {out_path}")
    return 0


def cmd_train(args) -> int:
    dataset = load_dataset(args.dataset)
    n = args.n_vehicles if args.n_vehicles is not None else dataset.n_vehicles
    cfg = TrainConfig(
        n_vehicles=n,
        batch_size=args.batch,
        lr0=args.lr,
        penalty=args.penalty,
        epochs=args.epochs,
        seed=args.seed,
        embed_dim=args.embed_dim,
        hidden_dim=args.hidden_dim,
    )
    result = train(dataset, cfg, out_dir=args.out)
    outputs = [os.path.join(args.out, "curve.csv"), os.path.join(args.out, "final.ckpt")]
    _write_manifest(args.out, args, [args.dataset], outputs)
    last = result.curve[-1] if result.curve else {}
    print(
        f"trained {result.iterations} iterations; "
        f"final mean J {last.get('mean_J', float('nan')):.3f}, "
        f"enforceable {last.get('enforceable_frac', float('nan')):.3f}"
    )
    return 0


def _candidate_from_spec(spec: str, scenario) -> tuple:
    if spec == "fifo":
        return fifo_order(scenario), []
    if spec.startswith("pointer:"):
        ckpt = spec.split(":", 1)[1]
        theta = _load_policy(ckpt)
        return repair_order(decode_order(theta, scenario, mode="greedy").order, scenario), [ckpt]
    if spec.startswith("file:"):
        path = spec.split(":", 1)[1]
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        return tuple(data["order"]), [path]
    raise ConfigurationError(
        f"unknown candidate spec {spec!r}; use fifo, pointer:CKPT, or file:PATH"
    )


def cmd_search(args) -> int:
    scenario = load_scenario(args.scenario)
    candidate, extra_inputs = _candidate_from_spec(args.candidate, scenario)
    budget_iters = args.budget_iters
    budget_s = args.budget_ms / 1000.0 if args.budget_ms is not None else None
    if budget_iters is None and budget_s is None:
        budget_s = 0.1
    order = mcts_search(
        scenario,
        candidate,
        budget_iters=budget_iters,
        budget_s=budget_s,
        lam=getattr(args, "lambda"),
        gamma=args.gamma,
        rng=np.random.default_rng(args.seed),
    )
    j_candidate = evaluate_objective(candidate, scenario)
    j_final = evaluate_objective(order, scenario)
    result = {
        "order": list(order),
        "candidate_order": list(candidate),
        "J_candidate_seconds": round(j_candidate, 6),
        "J_seconds": round(j_final, 6),
        "mu": round(improvement_ratio(j_candidate, j_final), 6),
    }
    text = json.dumps(result, indent=2, sort_keys=True) + "\n"
    if args.out:
        out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        _write_manifest(out_dir, args, [args.scenario] + extra_inputs, [args.out])
    sys.stdout.write(text)
    return 0


def cmd_enumerate(args) -> int:
    scenario = load_scenario(args.scenario)
    limit = None if args.limit == 0 else args.limit
    if limit is None and scenario.n > FULL_ENUMERATION_MAX_N:
        raise ConfigurationError(
            f"full enumeration refused for N={scenario.n} > {FULL_ENUMERATION_MAX_N}; "
            "pass --limit"
        )
    res = enumerate_optimal(scenario, limit=limit, collect_samples=True)
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    os.makedirs(out_dir, exist_ok=True)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["J_seconds"])
        for j in res.j_samples:
            writer.writerow([TIME_FMT.format(j)])
    _write_manifest(out_dir, args, [args.scenario], [args.out])
    print(
        f"evaluated {res.orders_evaluated} enforceable orders; "
        f"best J {res.best_j:.6f} s -> {args.out}"
    )
    return 0


def cmd_simulate(args) -> int:
    geometry = _load_geometry_arg(args.geometry)
    demand = _load_demand_arg(args.demand, args.arrival_rate)
    theta = _load_policy(args.ckpt) if args.ckpt else None
    if args.algo == "alphaorder" and theta is None:
        raise ConfigurationError("--algo alphaorder requires --ckpt")
    metrics = run_simulation(
        geometry,
        demand,
        algorithm=args.algo,
        duration_s=args.duration_s,
        replan_interval_s=args.replan_interval,
        warmup_s=args.warmup_s,
        seed=args.seed,
        theta=theta,
        budget_iters=args.budget_iters,
    )
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    os.makedirs(out_dir, exist_ok=True)
    new_file = not os.path.exists(args.out) or args.overwrite
    mode = "w" if new_file else "a"
    with open(args.out, mode, newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if new_file:
            writer.writerow(
                [
                    "algo", "seed", "arrival_rate", "p_left", "p_straight", "p_right",
                    "vehicles_served", "mean_delay_s",
                ]
            )
        writer.writerow(
            [
                args.algo,
                args.seed,
                TIME_FMT.format(demand.arrival_rate),
                TIME_FMT.format(demand.turning[0]),
                TIME_FMT.format(demand.turning[1]),
                TIME_FMT.format(demand.turning[2]),
                metrics.vehicles_served,
                TIME_FMT.format(metrics.mean_delay),
            ]
        )
    inputs = [p for p in (args.geometry, args.demand, args.ckpt) if p and os.path.exists(p)]
    _write_manifest(out_dir, args, inputs, [args.out])
    print(
        f"{args.algo}: served {metrics.vehicles_served} vehicles, "
        f"mean delay {metrics.mean_delay:.3f} s (warmup {metrics.warmup_s:.0f} s excluded)"
    )
    return 0


def _compare_one(task) -> list[dict]:
    scenario_dict, algos, ckpt, budget_iters, seed, idx = task
    from .core import scenario_from_dict

    scenario = scenario_from_dict(scenario_dict)
    theta = _load_policy(ckpt) if ckpt else None
    rows = []
    for algo in algos:
        if algo == "fifo":
            candidate = final = fifo_order(scenario)
        elif algo == "optimal":
            candidate = final = enumerate_optimal(scenario).best_order
        elif algo == "pointer":
            candidate = final = repair_order(
                decode_order(theta, scenario, mode="greedy").order, scenario
            )
        elif algo in ("mcts", "mcts_baseline", "alphaorder"):
            if algo == "alphaorder":
                candidate = repair_order(
                    decode_order(theta, scenario, mode="greedy").order, scenario
                )
            else:
                candidate = fifo_order(scenario)
            final = mcts_search(
                scenario,
                candidate,
                budget_iters=budget_iters,
                rng=np.random.default_rng([seed, 0xC0DE, idx]),
            )
        else:
            raise ConfigurationError(f"unknown compare algorithm {algo!r}")
        j_c = evaluate_objective(candidate, scenario)
        j_f = evaluate_objective(final, scenario)
        rows.append(
            {
                "algo": algo,
                "scenario_id": idx,
                "J": j_f,
                "candidate_J": j_c,
                "mu": improvement_ratio(j_c, j_f),
            }
        )
    return rows


def cmd_compare(args) -> int:
    algos = [a.strip() for a in args.algos.split(",") if a.strip()]
    if not algos:
        raise ConfigurationError("--algos must name at least one algorithm")
    needs_ckpt = {"pointer", "alphaorder"} & set(algos)
    if needs_ckpt and not args.ckpt:
        raise ConfigurationError(f"algorithms {sorted(needs_ckpt)} require --ckpt")
    if "optimal" in algos and args.n > FULL_ENUMERATION_MAX_N:
        raise ConfigurationError(
            f"optimal comparison limited to N <= {FULL_ENUMERATION_MAX_N}"
        )
    geometry = _load_geometry_arg(args.geometry)
    dataset = sample_dataset(geometry, None, args.n, args.count, args.seed)
    tasks = [
        (scenario_to_dict(s), algos, args.ckpt, args.budget_iters, args.seed, i)
        for i, s in enumerate(dataset.instances)
    ]
    if args.jobs > 1:
        with Pool(args.jobs) as pool:
            all_rows = pool.map(_compare_one, tasks)
    else:
        all_rows = [_compare_one(t) for t in tasks]

    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    os.makedirs(out_dir, exist_ok=True)
    outputs = [args.out]
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["algo", "scenario_id", "J_seconds", "candidate_J_seconds", "mu"])
        sums: dict[str, list[float]] = {a: [0.0, 0.0, 0.0] for a in algos}
        for rows in all_rows:
            for r in rows:
                writer.writerow(
                    [
                        r["algo"],
                        r["scenario_id"],
                        TIME_FMT.format(r["J"]),
                        TIME_FMT.format(r["candidate_J"]),
                        TIME_FMT.format(r["mu"]),
                    ]
                )
                acc = sums[r["algo"]]
                acc[0] += r["J"]
                acc[1] += r["candidate_J"]
                acc[2] += r["mu"]
        for algo in algos:
            acc = sums[algo]
            writer.writerow(
                [
                    algo,
                    "mean",
                    TIME_FMT.format(acc[0] / len(tasks)),
                    TIME_FMT.format(acc[1] / len(tasks)),
                    TIME_FMT.format(acc[2] / len(tasks)),
                ]
            )

    if args.histogram_out:
        hist_scenario = dataset.instances[0]
        js = sample_orders_grouped(
            hist_scenario, args.histogram_samples, np.random.default_rng([args.seed, 0x415]))
        with open(args.histogram_out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["J_seconds"])
            for j in js:
                writer.writerow([TIME_FMT.format(j)])
        outputs.append(args.histogram_out)

    inputs = [p for p in (args.geometry, args.ckpt) if p and os.path.exists(p)]
    _write_manifest(out_dir, args, inputs, outputs)
    print(f"compared {algos} on {len(tasks)} scenarios -> {args.out}")
    return 0


def cmd_transfer(args) -> int:
    theta, delta, _, meta = load_checkpoint(args.ckpt)
    geometry = _load_geometry_arg(args.geometry)
    theta2, delta2 = transfer_init(theta, delta, geometry, seed=args.seed)
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    os.makedirs(out_dir, exist_ok=True)
    meta = dict(meta)
    meta["transfer"] = {"source": args.ckpt, "seed": args.seed}
    save_checkpoint(args.out, theta2, delta2, meta=meta)
    inputs = [args.ckpt] + ([args.geometry] if args.geometry else [])
    _write_manifest(out_dir, args, inputs, [args.out])
    print(f"transferred model -> {args.out}")
    return 0


def cmd_fine_tune(args) -> int:
    theta, delta, _, meta = load_checkpoint(args.ckpt)
    pairs = load_pairs(args.pairs)
    theta2, losses = fine_tune_from_search(theta, pairs, steps=args.steps, lr=args.lr)
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    os.makedirs(out_dir, exist_ok=True)
    meta = dict(meta)
    meta["fine_tune"] = {"pairs": args.pairs, "steps": args.steps, "lr": args.lr}
    save_checkpoint(args.out, theta2, delta, meta=meta)
    _write_manifest(out_dir, args, [args.ckpt, args.pairs], [args.out])
    print(
        f"fine-tuned {args.steps} steps on {len(pairs)} pairs; "
        f"loss {losses[0]:.4f} -> {losses[-1]:.4f} -> {args.out}"
    )
    return 0


# --- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="alphaorder",
        description=(
            "Passing-order optimization for signal-free intersections: "
            "pointer-network policy plus short-budget grouped tree search."
        ),
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="sample training scenarios from the simulator")
    p.add_argument("--n-vehicles", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--geometry", help="geometry JSON (default: built-in 3-lane layout)")
    p.add_argument("--demand", help="demand preset name or JSON path (default: matched rate)")
    p.add_argument("--arrival-rate", type=float, help="override arrival rate, veh/(lane*h)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the pointer network and critic")
    p.add_argument("--dataset", required=True)
    p.add_argument("--n-vehicles", type=int, help="defaults to the dataset's N")
    p.add_argument("--batch", type=int, default=64, help="batch size (paper scale: 512)")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--penalty", type=float, default=1000.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--embed-dim", type=int, default=256)
    p.add_argument("--hidden-dim", type=int, default=256)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("search", help="refine a candidate order by tree search")
    p.add_argument("--scenario", required=True)
    p.add_argument("--candidate", default="fifo", help="fifo | pointer:CKPT | file:PATH")
    p.add_argument("--budget-ms", type=float, help="wall-clock budget (default 100)")
    p.add_argument("--budget-iters", type=int, help="deterministic iteration budget")
    p.add_argument("--lambda", type=float, default=0.85, dest="lambda")
    p.add_argument("--gamma", type=float, default=0.15)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the JSON result here as well")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("enumerate", help="enumerate enforceable orders of a scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--limit", type=int, default=0, help="0 = full enumeration (N <= 10)")
    p.add_argument("--out", required=True, help="CSV of evaluated J values")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_enumerate)

    p = sub.add_parser("simulate", help="run the rolling-horizon intersection simulation")
    p.add_argument("--geometry")
    p.add_argument("--demand", help="preset name or JSON path")
    p.add_argument("--arrival-rate", type=float)
    p.add_argument("--algo", choices=ALGORITHMS, default="fifo")
    p.add_argument("--ckpt", help="policy checkpoint (required for alphaorder)")
    p.add_argument("--duration-s", type=float, default=600.0)
    p.add_argument("--replan-interval", type=float, default=1.0)
    p.add_argument("--warmup-s", type=float, default=120.0)
    p.add_argument("--budget-iters", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="metrics CSV (appends unless --overwrite)")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="per-scenario J for several algorithms")
    p.add_argument("--n", type=int, required=True, help="vehicles per scenario")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--algos", default="fifo,mcts,optimal")
    p.add_argument("--ckpt")
    p.add_argument("--budget-iters", type=int, default=2000)
    p.add_argument("--geometry")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--histogram-out", help="also dump grouped-sampler J values for scenario 0")
    p.add_argument("--histogram-samples", type=int, default=10_000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("transfer", help="adapt a checkpoint to a new intersection")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--geometry", help="target geometry JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("fine-tune", help="push the policy toward improved orders")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--pairs", required=True, help="JSONL of scenario/order pairs")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fine_tune)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, ContractViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
