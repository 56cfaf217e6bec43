"""Pointer network policy and critic value network, hand-rolled on numpy.

The policy embeds each vehicle's feature row, encodes the sequence with an
LSTM, and decodes a permutation step by step: at every step an additive
attention over the encoder outputs scores the not-yet-selected vehicles, a
softmax turns the scores into selection probabilities, and the chosen
vehicle's embedding feeds the next decoder step. The critic shares the
embed+encode structure (over the wider input that includes the right-of-way
state) and regresses the objective value through three fully connected
layers.

Two forward implementations exist on purpose: a plain numpy path used for
inference (fast, no tape) and an autodiff-graph path used for gradients.
Tests pin them to identical outputs and validate the graph path against
finite differences.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .core import (
    PassingOrder,
    Scenario,
    encode_critic_input,
    encode_pointer_input,
)
from .exceptions import ConfigurationError, ContractViolation

DEFAULT_EMBED_DIM = 256
DEFAULT_HIDDEN_DIM = 256
DEFAULT_FC1 = 1024
DEFAULT_FC2 = 256

Params = dict[str, np.ndarray]


@dataclass(frozen=True)
class PolicyDims:
    input_dim: int = 27
    embed_dim: int = DEFAULT_EMBED_DIM
    hidden_dim: int = DEFAULT_HIDDEN_DIM


@dataclass(frozen=True)
class CriticDims:
    input_dim: int = 63
    embed_dim: int = DEFAULT_EMBED_DIM
    hidden_dim: int = DEFAULT_HIDDEN_DIM
    fc1: int = DEFAULT_FC1
    fc2: int = DEFAULT_FC2


def policy_shapes(dims: PolicyDims) -> dict[str, tuple[int, ...]]:
    de, dh, di = dims.embed_dim, dims.hidden_dim, dims.input_dim
    return {
        "embed_w": (de, di),
        "embed_b": (de,),
        "enc_wx": (4 * dh, de),
        "enc_wh": (4 * dh, dh),
        "enc_b": (4 * dh,),
        "dec_wx": (4 * dh, de),
        "dec_wh": (4 * dh, dh),
        "dec_b": (4 * dh,),
        "att_v": (dh,),
        "att_w1": (dh, dh),
        "att_w2": (dh, dh),
        "dec_g0": (de,),
    }


def critic_shapes(dims: CriticDims) -> dict[str, tuple[int, ...]]:
    de, dh, di = dims.embed_dim, dims.hidden_dim, dims.input_dim
    return {
        "embed_w": (de, di),
        "embed_b": (de,),
        "enc_wx": (4 * dh, de),
        "enc_wh": (4 * dh, dh),
        "enc_b": (4 * dh,),
        "fc1_w": (dims.fc1, dh),
        "fc1_b": (dims.fc1,),
        "fc2_w": (dims.fc2, dims.fc1),
        "fc2_b": (dims.fc2,),
        "fc3_w": (1, dims.fc2),
        "fc3_b": (1,),
    }


def n_params(shapes: dict[str, tuple[int, ...]]) -> int:
    return sum(int(np.prod(shape)) for shape in shapes.values())


def _init(shapes: dict[str, tuple[int, ...]], hidden_dim: int, rng: np.random.Generator) -> Params:
    r = 1.0 / np.sqrt(hidden_dim)
    return {
        name: rng.uniform(-r, r, size=shape)
        for name, shape in sorted(shapes.items())
    }


def init_policy(dims: PolicyDims, rng: np.random.Generator) -> Params:
    return _init(policy_shapes(dims), dims.hidden_dim, rng)


def init_critic(dims: CriticDims, rng: np.random.Generator) -> Params:
    return _init(critic_shapes(dims), dims.hidden_dim, rng)


def init_params(
    policy_dims: PolicyDims, critic_dims: CriticDims, rng: np.random.Generator
) -> tuple[Params, Params]:
    return init_policy(policy_dims, rng), init_critic(critic_dims, rng)


def infer_policy_dims(theta: Params) -> PolicyDims:
    de, di = theta["embed_w"].shape
    return PolicyDims(input_dim=di, embed_dim=de, hidden_dim=theta["att_v"].shape[0])


def infer_critic_dims(delta: Params) -> CriticDims:
    de, di = delta["embed_w"].shape
    return CriticDims(
        input_dim=di,
        embed_dim=de,
        hidden_dim=delta["enc_wh"].shape[1],
        fc1=delta["fc1_w"].shape[0],
        fc2=delta["fc2_w"].shape[0],
    )


# --- numpy forward path ------------------------------------------------------


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(x, -60.0, 60.0)))


def _lstm_step_np(p: Params, prefix: str, x, h, c):
    d = h.shape[0]
    z = p[prefix + "_wx"] @ x + p[prefix + "_wh"] @ h + p[prefix + "_b"]
    i = _sigmoid_np(z[:d])
    f = _sigmoid_np(z[d : 2 * d])
    g = np.tanh(z[2 * d : 3 * d])
    o = _sigmoid_np(z[3 * d :])
    c2 = f * c + i * g
    return o * np.tanh(c2), c2


def attention_scores(
    theta: Params,
    encoder_states: np.ndarray,
    decoder_state: np.ndarray,
    selected_mask: np.ndarray,
) -> np.ndarray:
    """Selection probabilities over vehicles: softmax of the additive
    attention scores, with already selected vehicles pinned to probability 0."""
    selected_mask = np.asarray(selected_mask, dtype=bool)
    if selected_mask.all():
        raise ContractViolation("attention over zero unselected vehicles")
    scores = np.tanh(
        encoder_states @ theta["att_w1"].T + theta["att_w2"] @ decoder_state
    ) @ theta["att_v"]
    u = np.where(selected_mask, -np.inf, scores)
    m = np.max(u)
    e = np.exp(u - m)  # -inf -> exact 0
    return e / e.sum()


def _encode_np(theta: Params, rows: np.ndarray):
    dh = theta["enc_wh"].shape[1]
    embeds = rows @ theta["embed_w"].T + theta["embed_b"]
    h = np.zeros(dh)
    c = np.zeros(dh)
    states = np.empty((rows.shape[0], dh))
    for i in range(rows.shape[0]):
        h, c = _lstm_step_np(theta, "enc", embeds[i], h, c)
        states[i] = h
    return embeds, states, h, c


@dataclass(frozen=True)
class DecodeResult:
    order: PassingOrder
    log_prob: float
    step_probs: np.ndarray  # step k row: selection distribution over vehicles


def _check_input_order(s: Scenario) -> None:
    key = [(v.distance, v.vehicle_id) for v in s.vehicles]
    if key != sorted(key):
        raise ContractViolation("scenario vehicles must be in ascending-distance order")


def decode_order(
    theta: Params,
    s: Scenario,
    mode: str = "greedy",
    rng: np.random.Generator | None = None,
) -> DecodeResult:
    """Run the pointer decoder over a scenario.

    ``greedy`` picks the argmax vehicle at every step (deterministic);
    ``sample`` draws from the step distribution and requires ``rng``.
    """
    if mode not in ("greedy", "sample"):
        raise ContractViolation(f"unknown decode mode {mode!r}")
    if mode == "sample" and rng is None:
        raise ContractViolation("sample mode requires an rng")
    _check_input_order(s)
    rows = encode_pointer_input(s)
    n = rows.shape[0]
    embeds, states, h, c = _encode_np(theta, rows)

    selected = np.zeros(n, dtype=bool)
    order_idx: list[int] = []
    log_prob = 0.0
    step_probs = np.zeros((n, n))
    x = theta["dec_g0"]
    for k in range(n):
        h, c = _lstm_step_np(theta, "dec", x, h, c)
        probs = attention_scores(theta, states, h, selected)
        step_probs[k] = probs
        if mode == "greedy":
            pick = int(np.argmax(probs))
        else:
            pick = int(rng.choice(n, p=probs / probs.sum()))
        log_prob += float(np.log(probs[pick]))
        selected[pick] = True
        order_idx.append(pick)
        x = embeds[pick]
    order = tuple(s.vehicles[i].vehicle_id for i in order_idx)
    return DecodeResult(order=order, log_prob=log_prob, step_probs=step_probs)


def critic_value(delta: Params, s: Scenario) -> float:
    """Predicted objective value from the critic's encoder + MLP head."""
    _check_input_order(s)
    rows = encode_critic_input(s)
    _, _, h, _ = _encode_np(delta, rows)
    a1 = np.maximum(delta["fc1_w"] @ h + delta["fc1_b"], 0.0)
    a2 = np.maximum(delta["fc2_w"] @ a1 + delta["fc2_b"], 0.0)
    return float((delta["fc3_w"] @ a2 + delta["fc3_b"])[0])


# --- autodiff graph path -----------------------------------------------------


def transpose(a: ad.Var) -> ad.Var:
    def bw(g, out):
        a.add_grad(g.T)

    return ad.Var(a.value.T, (a,), bw)


def _lstm_step_graph(v: dict[str, ad.Var], prefix: str, x: ad.Var, h: ad.Var, c: ad.Var):
    d = h.value.shape[0]
    z = ad.add(
        ad.add(ad.matmul(v[prefix + "_wx"], x), ad.matmul(v[prefix + "_wh"], h)),
        v[prefix + "_b"],
    )
    i = ad.sigmoid(ad.vslice(z, 0, d))
    f = ad.sigmoid(ad.vslice(z, d, 2 * d))
    g = ad.tanh(ad.vslice(z, 2 * d, 3 * d))
    o = ad.sigmoid(ad.vslice(z, 3 * d, 4 * d))
    c2 = ad.add(ad.mul(f, c), ad.mul(i, g))
    return ad.mul(o, ad.tanh(c2)), c2


def _wrap(params: Params) -> dict[str, ad.Var]:
    return {name: ad.Var(value) for name, value in params.items()}


def _grads_of(wrapped: dict[str, ad.Var]) -> Params:
    return {
        name: (v.grad if v.grad is not None else np.zeros_like(v.value))
        for name, v in wrapped.items()
    }


def logprob_graph(
    tvars: dict[str, ad.Var], s: Scenario, order: PassingOrder
) -> ad.Var:
    """Teacher-forced decode of ``order``; returns ln p(order | s) as a Var."""
    _check_input_order(s)
    rows = encode_pointer_input(s)
    n = rows.shape[0]
    index_of = {v.vehicle_id: i for i, v in enumerate(s.vehicles)}
    forced = [index_of[vid] for vid in order]
    if sorted(forced) != list(range(n)):
        raise ContractViolation("order is not a permutation of the scenario's vehicles")

    dh = tvars["att_v"].value.shape[0]
    embeds = [
        ad.add(ad.matmul(tvars["embed_w"], ad.Var(rows[i])), tvars["embed_b"])
        for i in range(n)
    ]
    h = ad.Var(np.zeros(dh))
    c = ad.Var(np.zeros(dh))
    enc_states = []
    for i in range(n):
        h, c = _lstm_step_graph(tvars, "enc", embeds[i], h, c)
        enc_states.append(h)
    states = ad.stack_rows(enc_states)  # (n, dh)
    w1h = ad.matmul(states, transpose(tvars["att_w1"]))

    selected: list[int] = []
    log_prob: ad.Var | None = None
    x = tvars["dec_g0"]
    for k in range(n):
        h, c = _lstm_step_graph(tvars, "dec", x, h, c)
        w2d = ad.matmul(tvars["att_w2"], h)
        act = ad.tanh(ad.add(w1h, w2d))
        u = ad.matmul(act, tvars["att_v"])  # (n,)
        open_idx = [i for i in range(n) if i not in selected]
        lse = ad.logsumexp(ad.gather(u, open_idx))
        pick = forced[k]
        if pick in selected:
            raise ContractViolation("forced order repeats a vehicle")
        step_lp = ad.sub(ad.pick(u, pick), lse)
        log_prob = step_lp if log_prob is None else ad.add(log_prob, step_lp)
        selected.append(pick)
        x = embeds[pick]
    assert log_prob is not None
    return log_prob


def critic_graph(dvars: dict[str, ad.Var], s: Scenario) -> ad.Var:
    _check_input_order(s)
    rows = encode_critic_input(s)
    n = rows.shape[0]
    dh = dvars["enc_wh"].value.shape[1]
    h = ad.Var(np.zeros(dh))
    c = ad.Var(np.zeros(dh))
    for i in range(n):
        x = ad.add(ad.matmul(dvars["embed_w"], ad.Var(rows[i])), dvars["embed_b"])
        h, c = _lstm_step_graph(dvars, "enc", x, h, c)
    a1 = ad.relu(ad.add(ad.matmul(dvars["fc1_w"], h), dvars["fc1_b"]))
    a2 = ad.relu(ad.add(ad.matmul(dvars["fc2_w"], a1), dvars["fc2_b"]))
    out = ad.add(ad.matmul(dvars["fc3_w"], a2), dvars["fc3_b"])
    return ad.pick(out, 0)


def grad_logprob(theta: Params, s: Scenario, order: PassingOrder) -> tuple[Params, float]:
    """Gradient of ln p(order | s) w.r.t. every policy weight group."""
    tvars = _wrap(theta)
    lp = logprob_graph(tvars, s, order)
    ad.backward(lp)
    return _grads_of(tvars), float(lp.value)


def grad_critic(delta: Params, s: Scenario, target: float) -> tuple[Params, float]:
    """Gradient of the squared-error loss (b - target)^2 / 2 w.r.t. delta."""
    dvars = _wrap(delta)
    b = critic_graph(dvars, s)
    ad.backward(b, adjoint=float(b.value) - target)
    return _grads_of(dvars), float(b.value)


# --- checkpoint file format --------------------------------------------------
#
# Layout (little endian):
#   8 bytes   magic "AORDCKPT"
#   u32       format version (1)
#   u32       header length in bytes
#   bytes     header: UTF-8 JSON with dims, metadata, and the ordered list of
#             weight groups [{kind, name, shape}, ...]
#   bytes     for each group in header order, row-major float64 data
#   32 bytes  SHA-256 over everything above
#
# Round-trips are bit-exact; the checksum guards against truncation.

CHECKPOINT_MAGIC = b"AORDCKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(
    path: str,
    policy: Params,
    critic: Params,
    extra_arrays: dict[str, np.ndarray] | None = None,
    meta: dict | None = None,
) -> None:
    groups: list[tuple[str, str, np.ndarray]] = []
    for name in sorted(policy):
        groups.append(("policy", name, policy[name]))
    for name in sorted(critic):
        groups.append(("critic", name, critic[name]))
    for name in sorted(extra_arrays or {}):
        groups.append(("extra", name, (extra_arrays or {})[name]))

    header = {
        "policy_dims": asdict(infer_policy_dims(policy)),
        "critic_dims": asdict(infer_critic_dims(critic)),
        "meta": meta or {},
        "groups": [
            {"kind": kind, "name": name, "shape": list(arr.shape)}
            for kind, name, arr in groups
        ],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<II", CHECKPOINT_VERSION, len(header_bytes))
    blob += header_bytes
    for _, _, arr in groups:
        blob += np.ascontiguousarray(arr, dtype=np.float64).tobytes()
    blob += hashlib.sha256(bytes(blob)).digest()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load_checkpoint(path: str) -> tuple[Params, Params, dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(CHECKPOINT_MAGIC) + 8 + 32:
        raise ConfigurationError(f"checkpoint {path} is truncated")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ConfigurationError(f"checkpoint {path} failed its checksum")
    if body[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ConfigurationError(f"{path} is not a checkpoint file")
    off = len(CHECKPOINT_MAGIC)
    version, header_len = struct.unpack_from("<II", body, off)
    if version != CHECKPOINT_VERSION:
        raise ConfigurationError(f"unsupported checkpoint version {version}")
    off += 8
    header = json.loads(body[off : off + header_len].decode("utf-8"))
    off += header_len
    out: dict[str, Params] = {"policy": {}, "critic": {}, "extra": {}}
    for entry in header["groups"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) * 8
        arr = np.frombuffer(body[off : off + size], dtype="<f8").reshape(shape).copy()
        out[entry["kind"]][entry["name"]] = arr
        off += size
    if off != len(body):
        raise ConfigurationError(f"checkpoint {path} has trailing bytes")
    return out["policy"], out["critic"], out["extra"], header["meta"]
