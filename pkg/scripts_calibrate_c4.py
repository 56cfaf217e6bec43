"""Calibration probe for the desk-scale training acceptance target."""
import sys
import time

import numpy as np

from alphaorder.baselines import enumerate_optimal
from alphaorder.core import critic_input_dim, evaluate_objective, is_enforceable, pointer_input_dim, repair_order
from alphaorder.geometry import default_geometry
from alphaorder.neural import CriticDims, PolicyDims, decode_order, init_params
from alphaorder.search import mcts_search
from alphaorder.training import AdamState, TrainConfig, lr_schedule, sample_dataset, train_step

D = int(sys.argv[1]) if len(sys.argv) > 1 else 32
RATE = float(sys.argv[2]) if len(sys.argv) > 2 else 220.0
N = 8
geo = default_geometry()

from alphaorder.simulator import DemandConfig
from alphaorder.simulator import turning_from_ratio
demand = DemandConfig(arrival_rate=RATE, turning=turning_from_ratio(0.8, 0.5))
t0 = time.time()
train_ds = sample_dataset(geo, demand, N, 10_000, seed=42)
held = sample_dataset(geo, demand, N, 100, seed=43)
print(f"datasets ready in {time.time()-t0:.0f}s", flush=True)

opt_j = [enumerate_optimal(s).best_j for s in held.instances]
print(f"held-out optimum mean J: {np.mean(opt_j):.4f} (sum {np.sum(opt_j):.2f})", flush=True)

cfg = TrainConfig(n_vehicles=N, batch_size=64, embed_dim=D, hidden_dim=D, seed=7)
theta, delta = init_params(
    PolicyDims(pointer_input_dim(), D, D),
    CriticDims(critic_input_dim(geo), D, D),
    np.random.default_rng(cfg.seed),
)
ot, od = AdamState.zeros_like(theta), AdamState.zeros_like(delta)

order_rng = np.random.default_rng([cfg.seed, 1])
perm = order_rng.permutation(len(train_ds.instances))
pos = 0
t0 = time.time()
for it in range(1, 2001):
    if pos + cfg.batch_size > len(perm):
        perm = order_rng.permutation(len(train_ds.instances))
        pos = 0
    batch = [train_ds.instances[i] for i in perm[pos : pos + cfg.batch_size]]
    pos += cfg.batch_size
    theta, delta, st = train_step(
        theta, delta, batch, ot, od, cfg, np.random.default_rng([9, it]), lr_schedule(cfg, it)
    )
    if it % 100 == 0:
        enf = 0
        cand_sum = 0.0
        for s in held.instances:
            order = repair_order(decode_order(theta, s).order, s)
            enf += is_enforceable(decode_order(theta, s).order, s)
            cand_sum += evaluate_objective(order, s)
        line = (
            f"iter {it}: {time.time()-t0:.0f}s trainJ={st.mean_j:.2f} "
            f"enf(greedy,held)={enf/100:.2f} candSum={cand_sum:.2f} optSum={np.sum(opt_j):.2f}"
        )
        if enf >= 99:
            alpha_sum = 0.0
            for i, s in enumerate(held.instances):
                candidate = repair_order(decode_order(theta, s).order, s)
                out = mcts_search(s, candidate, budget_iters=2000, rng=np.random.default_rng([5, i]))
                alpha_sum += evaluate_objective(out, s)
            gap = alpha_sum / max(np.sum(opt_j), 1e-9) - 1.0
            line += f" alphaSum={alpha_sum:.2f} gap={gap*100:.2f}%"
        print(line, flush=True)
