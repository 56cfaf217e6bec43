"""Policy-gradient training of the pointer network with a critic baseline.

Each iteration samples a batch of scenarios, decodes one stochastic order per
scenario, and scores it with the delay-sum objective. The policy gradient is
the advantage-weighted score-function estimator (advantage = objective minus
the critic's prediction); the critic itself regresses the observed objective
with a squared loss. Both parameter sets are updated with ADAM under a
held-then-decaying learning rate. All randomness is derived statelessly from
(seed, epoch, step), so interrupted runs resume bit-exactly from checkpoints.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .core import (
    Scenario,
    Vehicle,
    critic_input_dim,
    evaluate_objective,
    is_enforceable,
    make_scenario,
    pointer_input_dim,
    scenario_from_dict,
    scenario_to_dict,
)
from .exceptions import ConfigurationError, ContractViolation
from .geometry import IntersectionGeometry, geometry_from_dict, geometry_to_dict
from .neural import (
    CriticDims,
    Params,
    PolicyDims,
    critic_graph,
    critic_value,
    decode_order,
    grad_logprob,
    infer_critic_dims,
    infer_policy_dims,
    init_critic,
    init_params,
    load_checkpoint,
    logprob_graph,
    save_checkpoint,
)
from .simulator import DemandConfig, run_simulation

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
GRAD_CLIP_NORM = 2.0


@dataclass(frozen=True)
class TrainConfig:
    """Training settings; desk-scale defaults, paper-scale values selectable.

    The published configuration uses batch size 512 over 200k-instance
    datasets; the desk default of 64 keeps CI runs tractable.
    """

    n_vehicles: int
    batch_size: int = 64
    lr0: float = 1e-3
    lr_hold_iters: int = 10_000
    lr_decay: float = 0.98
    lr_decay_every: int = 1_000
    penalty: float = 1000.0
    epochs: int = 20
    max_iterations: int | None = None  # hard cap across epochs, None = no cap
    seed: int = 0
    embed_dim: int = 256
    hidden_dim: int = 256
    grad_clip: float = GRAD_CLIP_NORM
    plateau_window: int = 5
    plateau_rel_change: float = 1e-3

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.lr0 <= 0:
            raise ConfigurationError("lr0 must be positive")
        if self.n_vehicles < 1:
            raise ConfigurationError("n_vehicles must be >= 1")


def lr_schedule(cfg: TrainConfig, iteration: int) -> float:
    """Hold lr0, then multiply by the decay factor on a fixed period."""
    if iteration <= cfg.lr_hold_iters:
        return cfg.lr0
    steps = (iteration - cfg.lr_hold_iters) // cfg.lr_decay_every
    return cfg.lr0 * cfg.lr_decay**steps


# --- ADAM ---------------------------------------------------------------------


@dataclass
class AdamState:
    m: Params
    v: Params
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Params) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: Params,
    grads: Params,
    state: AdamState,
    lr: float,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
) -> Params:
    """One bias-corrected ADAM update; returns new params, mutates state."""
    state.t += 1
    t = state.t
    out: Params = {}
    for name, p in params.items():
        g = grads[name]
        state.m[name] = beta1 * state.m[name] + (1 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1 - beta2) * g * g
        m_hat = state.m[name] / (1 - beta1**t)
        v_hat = state.v[name] / (1 - beta2**t)
        out[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return out


def clip_global_norm(grads: Params, max_norm: float) -> Params:
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm or total == 0.0:
        return grads
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}


# --- datasets -------------------------------------------------------------------

DATASET_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Dataset:
    geometry: IntersectionGeometry
    instances: list[Scenario]
    n_vehicles: int
    provenance: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for s in self.instances:
            if s.n != self.n_vehicles:
                raise ContractViolation(
                    f"dataset requires exactly {self.n_vehicles} vehicles per instance"
                )


def save_dataset(dataset: Dataset, path: str) -> None:
    """JSON-lines: one header object, then one scenario per line (geometry
    factored into the header; floats round-trip exactly)."""
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "schema": "alphaorder/dataset",
            "version": DATASET_SCHEMA_VERSION,
            "n_vehicles": dataset.n_vehicles,
            "count": len(dataset.instances),
            "provenance": dataset.provenance,
            "geometry": geometry_to_dict(dataset.geometry),
        }
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for s in dataset.instances:
            fh.write(json.dumps(scenario_to_dict(s, include_geometry=False), sort_keys=True) + "\n")


def load_dataset(path: str) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("schema") != "alphaorder/dataset":
            raise ConfigurationError(f"{path} is not a dataset file")
        geometry = geometry_from_dict(header["geometry"])
        instances = [
            scenario_from_dict(json.loads(line), geometry=geometry)
            for line in fh
            if line.strip()
        ]
    if len(instances) != header["count"]:
        raise ConfigurationError(
            f"{path}: header promises {header['count']} instances, found {len(instances)}"
        )
    return Dataset(
        geometry=geometry,
        instances=instances,
        n_vehicles=header["n_vehicles"],
        provenance=header.get("provenance", {}),
    )


def matched_arrival_rate(geometry: IntersectionGeometry, n_vehicles: int) -> float:
    """Per-lane arrival rate (veh/h) whose steady-state open-vehicle count is
    about ``n_vehicles`` (arrival flow times the control-zone transit time)."""
    transit = geometry.control_zone_length / geometry.v_max
    return n_vehicles * 3600.0 / (geometry.n_lanes * transit)


def sample_dataset(
    geometry: IntersectionGeometry,
    demand: DemandConfig | None,
    n_vehicles: int,
    count: int,
    seed: int,
    max_duration_s: float = 500_000.0,
) -> Dataset:
    """Planning-round snapshots with exactly ``n_vehicles`` open vehicles.

    Streams the FIFO-scheduled simulator and keeps rounds whose open-vehicle
    set has the requested size (and differs from the previous snapshot),
    stopping as soon as enough exist. With ``demand=None`` the arrival rate
    is matched to the target vehicle count. Exhausting ``max_duration_s`` of
    simulated traffic without enough snapshots raises with a rate hint.
    """
    if count < 1:
        raise ConfigurationError("count must be >= 1")
    if demand is None:
        demand = DemandConfig(
            arrival_rate=matched_arrival_rate(geometry, n_vehicles),
            turning=(1 / 3, 1 / 3, 1 / 3),
        )

    instances: list[Scenario] = []
    state = {"prev_ids": None, "last_t": 0.0}

    def hook(t: float, s: Scenario) -> bool:
        state["last_t"] = t
        if s.n != n_vehicles:
            return False
        ids = frozenset(v.vehicle_id for v in s.vehicles)
        if ids == state["prev_ids"]:
            return False
        state["prev_ids"] = ids
        renumbered = [
            Vehicle(i, v.lane, v.steering, v.exit_lane, v.distance, v.speed)
            for i, v in enumerate(s.vehicles)
        ]
        instances.append(make_scenario(geometry, renumbered, s.rightofway))
        return len(instances) >= count  # stop the run once enough

    run_simulation(
        geometry,
        demand,
        algorithm="fifo",
        duration_s=max_duration_s,
        seed=seed,
        warmup_s=0.0,
        scenario_hook=hook,
    )
    if len(instances) < count:
        rate_hint = matched_arrival_rate(geometry, n_vehicles)
        raise ConfigurationError(
            f"collected only {len(instances)}/{count} snapshots with "
            f"N={n_vehicles} in {max_duration_s:.0f}s of traffic; the demand "
            f"rarely leaves exactly {n_vehicles} open vehicles. Try an "
            f"arrival rate near {rate_hint:.0f} veh/(lane*h)."
        )
    return Dataset(
        geometry=geometry,
        instances=instances,
        n_vehicles=n_vehicles,
        provenance={
            "kind": "simulator",
            "seed": seed,
            "arrival_rate": demand.arrival_rate,
            "turning": list(demand.turning),
            "pattern": list(demand.pattern),
            "duration_s": state["last_t"],
        },
    )


# --- the training loop -----------------------------------------------------------


@dataclass
class StepStats:
    mean_j: float
    mean_abs_advantage: float
    enforceable_frac: float
    mean_baseline: float


def train_step(
    theta: Params,
    delta: Params,
    batch: list[Scenario],
    opt_theta: AdamState,
    opt_delta: AdamState,
    cfg: TrainConfig,
    rng: np.random.Generator,
    lr: float,
) -> tuple[Params, Params, StepStats]:
    """One REINFORCE + critic update over a batch; returns new parameters."""
    b_size = len(batch)
    tvars = {k: ad.Var(v) for k, v in theta.items()}
    dvars = {k: ad.Var(v) for k, v in delta.items()}
    j_sum = 0.0
    abs_adv_sum = 0.0
    base_sum = 0.0
    enforceable = 0
    for s in batch:
        res = decode_order(theta, s, mode="sample", rng=rng)
        j = evaluate_objective(res.order, s, penalty=cfg.penalty)
        baseline = critic_value(delta, s)
        advantage = j - baseline
        lp = logprob_graph(tvars, s, res.order)
        ad.backward(lp, adjoint=advantage / b_size)
        bq = critic_graph(dvars, s)
        ad.backward(bq, adjoint=(baseline - j) / b_size)
        j_sum += j
        abs_adv_sum += abs(advantage)
        base_sum += baseline
        enforceable += int(is_enforceable(res.order, s))

    def collect(vars_: dict[str, ad.Var], kind: str) -> Params:
        grads: Params = {}
        for name, v in vars_.items():
            g = v.grad if v.grad is not None else np.zeros_like(v.value)
            if not np.all(np.isfinite(g)):
                raise ArithmeticError(f"non-finite gradient in {kind} group {name!r}")
            grads[name] = g
        return grads

    g_theta = clip_global_norm(collect(tvars, "policy"), cfg.grad_clip)
    g_delta = clip_global_norm(collect(dvars, "critic"), cfg.grad_clip)
    theta2 = adam_step(theta, g_theta, opt_theta, lr)
    delta2 = adam_step(delta, g_delta, opt_delta, lr)
    stats = StepStats(
        mean_j=j_sum / b_size,
        mean_abs_advantage=abs_adv_sum / b_size,
        enforceable_frac=enforceable / b_size,
        mean_baseline=base_sum / b_size,
    )
    return theta2, delta2, stats


@dataclass
class TrainResult:
    theta: Params
    delta: Params
    curve: list[dict]  # per-epoch: epoch, mean_j, enforceable_frac, lr
    iterations: int
    stopped_early: bool


def _step_rng(seed: int, epoch: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, 0xA11CE, epoch, step])


def train(
    dataset: Dataset,
    cfg: TrainConfig,
    out_dir: str | None = None,
    theta: Params | None = None,
    delta: Params | None = None,
    opt_theta: AdamState | None = None,
    opt_delta: AdamState | None = None,
    start_epoch: int = 0,
    iterations_done: int = 0,
) -> TrainResult:
    """Epoch loop over the shuffled dataset with per-epoch checkpoints.

    Stops at ``cfg.epochs`` or earlier when the moving-average objective
    plateaus. Pass the optional state arguments (or use ``resume``) to
    continue a run; the result is bit-identical to the uninterrupted run.
    """
    if dataset.n_vehicles != cfg.n_vehicles:
        raise ConfigurationError(
            f"dataset holds N={dataset.n_vehicles} but config expects N={cfg.n_vehicles}"
        )
    pol_dims = PolicyDims(
        input_dim=pointer_input_dim(), embed_dim=cfg.embed_dim, hidden_dim=cfg.hidden_dim
    )
    cr_dims = CriticDims(
        input_dim=critic_input_dim(dataset.geometry),
        embed_dim=cfg.embed_dim,
        hidden_dim=cfg.hidden_dim,
    )
    if theta is None or delta is None:
        theta, delta = init_params(pol_dims, cr_dims, np.random.default_rng(cfg.seed))
    opt_theta = opt_theta or AdamState.zeros_like(theta)
    opt_delta = opt_delta or AdamState.zeros_like(delta)

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    curve: list[dict] = []
    curve_path = os.path.join(out_dir, "curve.csv") if out_dir else None
    if curve_path and start_epoch == 0:
        with open(curve_path, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh).writerow(["epoch", "mean_J", "enforceable_frac", "lr"])

    iteration = iterations_done
    epoch_means: list[float] = []
    stopped_early = False
    for epoch in range(start_epoch, cfg.epochs):
        if cfg.max_iterations is not None and iteration >= cfg.max_iterations:
            break
        order = np.random.default_rng([cfg.seed, 0x0EDE, epoch]).permutation(
            len(dataset.instances)
        )
        j_accum = 0.0
        enf_accum = 0.0
        steps = 0
        lr = cfg.lr0
        for lo in range(0, len(order) - cfg.batch_size + 1, cfg.batch_size):
            if cfg.max_iterations is not None and iteration >= cfg.max_iterations:
                break
            batch = [dataset.instances[i] for i in order[lo : lo + cfg.batch_size]]
            iteration += 1
            lr = lr_schedule(cfg, iteration)
            theta, delta, stats = train_step(
                theta,
                delta,
                batch,
                opt_theta,
                opt_delta,
                cfg,
                _step_rng(cfg.seed, epoch, lo // cfg.batch_size),
                lr,
            )
            j_accum += stats.mean_j
            enf_accum += stats.enforceable_frac
            steps += 1
        if steps == 0:
            raise ConfigurationError("dataset smaller than one batch")
        row = {
            "epoch": epoch,
            "mean_J": j_accum / steps,
            "enforceable_frac": enf_accum / steps,
            "lr": lr,
        }
        curve.append(row)
        epoch_means.append(row["mean_J"])
        if curve_path:
            with open(curve_path, "a", newline="", encoding="utf-8") as fh:
                csv.writer(fh).writerow(
                    [row["epoch"], f"{row['mean_J']:.6f}", f"{row['enforceable_frac']:.6f}", f"{row['lr']:.8f}"]
                )
        if out_dir is not None:
            _save_train_checkpoint(
                os.path.join(out_dir, f"epoch_{epoch:04d}.ckpt"),
                theta, delta, opt_theta, opt_delta, cfg, epoch, iteration,
            )
        # plateau: relative change of the moving-average objective
        w = cfg.plateau_window
        if len(epoch_means) > w:
            ma_now = float(np.mean(epoch_means[-w:]))
            ma_prev = float(np.mean(epoch_means[-w - 1 : -1]))
            if ma_prev > 0 and abs(ma_now - ma_prev) / ma_prev < cfg.plateau_rel_change:
                stopped_early = True
                break

    if out_dir is not None:
        _save_train_checkpoint(
            os.path.join(out_dir, "final.ckpt"),
            theta, delta, opt_theta, opt_delta, cfg,
            curve[-1]["epoch"] if curve else start_epoch - 1, iteration,
        )
    return TrainResult(
        theta=theta, delta=delta, curve=curve, iterations=iteration, stopped_early=stopped_early
    )


def _save_train_checkpoint(path, theta, delta, opt_theta, opt_delta, cfg, epoch, iteration):
    extra: dict[str, np.ndarray] = {}
    for prefix, state in (("opt_theta", opt_theta), ("opt_delta", opt_delta)):
        for name, arr in state.m.items():
            extra[f"{prefix}.m.{name}"] = arr
        for name, arr in state.v.items():
            extra[f"{prefix}.v.{name}"] = arr
    meta = {
        "epoch": epoch,
        "iteration": iteration,
        "opt_theta_t": opt_theta.t,
        "opt_delta_t": opt_delta.t,
        "config": {k: getattr(cfg, k) for k in TrainConfig.__dataclass_fields__},
    }
    save_checkpoint(path, theta, delta, extra_arrays=extra, meta=meta)


def load_train_checkpoint(path: str):
    """(theta, delta, opt_theta, opt_delta, meta) from a training checkpoint."""
    theta, delta, extra, meta = load_checkpoint(path)

    def unpack(prefix: str, params: Params, t: int) -> AdamState:
        state = AdamState.zeros_like(params)
        state.t = t
        for name in params:
            m_key, v_key = f"{prefix}.m.{name}", f"{prefix}.v.{name}"
            if m_key in extra:
                state.m[name] = extra[m_key]
                state.v[name] = extra[v_key]
        return state

    opt_theta = unpack("opt_theta", theta, int(meta.get("opt_theta_t", 0)))
    opt_delta = unpack("opt_delta", delta, int(meta.get("opt_delta_t", 0)))
    return theta, delta, opt_theta, opt_delta, meta


def resume(
    dataset: Dataset, path: str, out_dir: str | None = None, epochs: int | None = None
) -> TrainResult:
    """Continue a checkpointed run to its configured (or overridden) epoch count."""
    theta, delta, opt_theta, opt_delta, meta = load_train_checkpoint(path)
    cfg = TrainConfig(**meta["config"])
    if epochs is not None:
        cfg = replace(cfg, epochs=epochs)
    return train(
        dataset,
        cfg,
        out_dir=out_dir,
        theta=theta,
        delta=delta,
        opt_theta=opt_theta,
        opt_delta=opt_delta,
        start_epoch=int(meta["epoch"]) + 1,
        iterations_done=int(meta["iteration"]),
    )


# --- transfer and fine-tuning ------------------------------------------------------


def transfer_init(
    theta: Params,
    delta: Params,
    new_geometry: IntersectionGeometry,
    seed: int = 0,
) -> tuple[Params, Params]:
    """Adapt a trained model to a new intersection layout.

    The pointer network's input encoding is layout-independent, so the policy
    transfers unchanged; only the critic embedding must match the new
    right-of-way width and is re-initialized when it differs.
    """
    pol_dims = infer_policy_dims(theta)
    if pol_dims.input_dim != pointer_input_dim():
        raise ConfigurationError(
            f"policy input width {pol_dims.input_dim} differs from the fixed "
            f"pointer encoding ({pointer_input_dim()}); transfer refused"
        )
    if new_geometry.n_lanes > 12:
        raise ConfigurationError(
            "pointer encoding supports at most 12 entry lanes; transfer refused"
        )
    theta2 = {k: v.copy() for k, v in theta.items()}
    delta2 = {k: v.copy() for k, v in delta.items()}
    new_width = critic_input_dim(new_geometry)
    cr_dims = infer_critic_dims(delta)
    if new_width != cr_dims.input_dim:
        fresh = init_critic(replace(cr_dims, input_dim=new_width), np.random.default_rng(seed))
        delta2["embed_w"] = fresh["embed_w"]
        delta2["embed_b"] = fresh["embed_b"]
    return theta2, delta2


def save_pairs(pairs: list[tuple[Scenario, tuple[int, ...]]], path: str) -> None:
    """JSON-lines of (scenario, improved order) fine-tuning pairs."""
    with open(path, "w", encoding="utf-8") as fh:
        for s, order in pairs:
            fh.write(
                json.dumps(
                    {"scenario": scenario_to_dict(s), "order": list(order)}, sort_keys=True
                )
                + "\n"
            )


def load_pairs(path: str) -> list[tuple[Scenario, tuple[int, ...]]]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            data = json.loads(line)
            pairs.append((scenario_from_dict(data["scenario"]), tuple(data["order"])))
    return pairs


def fine_tune_from_search(
    theta: Params,
    pairs: list[tuple[Scenario, tuple[int, ...]]],
    steps: int = 50,
    lr: float = 1e-4,
    grad_clip: float = GRAD_CLIP_NORM,
) -> tuple[Params, list[float]]:
    """Cross-entropy updates pushing the policy toward search-improved orders.

    Returns the tuned parameters and the loss (mean negative log-likelihood
    of the improved orders) per step.
    """
    for s, order in pairs:
        if not is_enforceable(order, s):
            raise ContractViolation("fine-tuning targets must be enforceable orders")
    opt = AdamState.zeros_like(theta)
    losses: list[float] = []
    for _ in range(steps):
        tvars = {k: ad.Var(v) for k, v in theta.items()}
        total = 0.0
        for s, order in pairs:
            lp = logprob_graph(tvars, s, order)
            ad.backward(lp, adjoint=-1.0 / len(pairs))  # minimize -mean log p
            total += float(lp.value)
        grads = {
            k: (v.grad if v.grad is not None else np.zeros_like(v.value))
            for k, v in tvars.items()
        }
        grads = clip_global_norm(grads, grad_clip)
        theta = adam_step(theta, grads, opt, lr)
        losses.append(-total / len(pairs))
    return theta, losses
