"""Adam updates and the hierarchical training loop on synthetic features."""

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import hierarchy as hier
from .errors import NonFiniteLoss, ShapeMismatch
from .evaluation import score
from .linalg import col_argmax, format_real, read_csv, write_csv
from .losses import (LossWeights, cluster_loss, distill_loss, hierarchy_match_loss,
                     total_loss)
from .synthdata import generate
from .transport import SinkhornSettings


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def adam_step(state, params, grads):
    """Bias-corrected Adam update. Returns ``(new_params, new_state)``; inputs are untouched."""
    for k, p in params.items():
        if k not in grads:
            raise ShapeMismatch(f"no gradient for parameter {k!r}")
        if np.shape(grads[k]) != np.shape(p):
            raise ShapeMismatch(f"{k}: gradient {np.shape(grads[k])} vs parameter {np.shape(p)}")
    t = state.step + 1
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    new_params, m1, m2 = {}, {}, {}
    for k, p in params.items():
        g = np.asarray(grads[k], dtype=np.float64)
        m = state.first_moment.get(k, np.zeros_like(p))
        v = state.second_moment.get(k, np.zeros_like(p))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        m1[k], m2[k] = m, v
        new_params[k] = p - state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return new_params, replace(state, step=t, first_moment=m1, second_moment=m2)


@dataclass
class Projector:
    """Location-wise two-layer perceptron ``C -> hidden -> D`` with a ReLU in between."""
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def init(cls, in_dim, hidden, out_dim, rng):
        w1 = rng.standard_normal((hidden, in_dim)) * math.sqrt(2.0 / in_dim)
        w2 = rng.standard_normal((out_dim, hidden)) * math.sqrt(1.0 / hidden)
        return cls(w1, np.zeros(hidden), w2, np.zeros(out_dim))

    def params(self):
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def forward(self, x):
        pre = x @ self.w1.T + self.b1
        hid = np.maximum(pre, 0.0)
        return hid @ self.w2.T + self.b2, (x, pre, hid)

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, grad_out):
        x, pre, hid = cache
        g_hid = grad_out @ self.w2
        g_pre = g_hid * (pre > 0)
        return {
            "w1": g_pre.T @ x, "b1": g_pre.sum(axis=0),
            "w2": grad_out.T @ hid, "b2": grad_out.sum(axis=0),
        }


@dataclass
class TrainState:
    projector: Projector
    stack: hier.HierarchyStack
    adam: dict  # group name -> AdamState
    rng_seed: int
    step: int = 0
    probe: hier.ClusterHead = None  # stop-gradient evaluation head, see train()


def init_state(cfg, in_dim):
    rng = np.random.default_rng(cfg.seed)
    proj = Projector.init(in_dim, cfg.proj_hidden, cfg.proj_dim, rng)
    stack = hier.HierarchyStack.random(cfg.base_clusters, cfg.expansion, cfg.depth,
                                       cfg.proj_dim, rng, temperature=cfg.ot_temperature)
    groups = ["projector"] + [f"head{i}" for i in range(cfg.depth)]
    probe = None
    if cfg.probe:
        # own stream so the hierarchy initialisation does not depend on it
        probe = hier.random_head(0, cfg.base_clusters, cfg.proj_dim,
                                 np.random.default_rng([cfg.seed, 2]))
        groups.append("probe")
    adam = {g: AdamState(learning_rate=cfg.learning_rate) for g in groups}
    return TrainState(proj, stack, adam, cfg.seed, 0, probe)


def sinkhorn_settings(cfg):
    return SinkhornSettings(temperature=cfg.ot_temperature,
                            max_iterations=cfg.sinkhorn_max_iterations,
                            tolerance=cfg.sinkhorn_tolerance,
                            log_domain=cfg.log_domain)


def loss_columns(depth, probe=False):
    cols = ["step", "L_base"] + [f"L_cluster_{i}" for i in range(depth)]
    cols += [f"L_match_{i}_{i + 1}" for i in range(depth - 1)]
    return cols + ["total"] + (["L_probe"] if probe else [])


def matching_plan(plan, scale="column"):
    """Plan entries used as max-pool weights.

    ``"mass"`` uses the raw transport plan (entries sum to 1 overall).
    ``"column"`` rescales it so every finer cluster's weights over coarse
    clusters sum to 1; with uniform marginals that is ``plan * K_fine``.
    Raw mass caps every transported activation at ``1 / K_fine``, so the
    matching loss can only vanish once coarse activations are that small.
    """
    a = plan.plan
    if scale == "mass":
        return a
    if scale == "column":
        return a / a.sum(axis=0, keepdims=True)
    raise ValueError(f"unknown plan scale {scale!r}")


def compute_loss(state, cfg, enc_x, enc_y, stack=None):
    """Forward pass for one image pair.

    Returns ``(total LossValue, per-term values, caches)``; gradients in the
    total are keyed ``f_x``, ``f_y`` and ``m{i}`` (assignment of level ``i``).
    """
    stack = stack or state.stack
    f_x, cache_x = state.projector.forward(enc_x)
    f_y, cache_y = state.projector.forward(enc_y)
    w = LossWeights(cfg.sparsity_weight, cfg.structure_weight, cfg.distill_b)
    base = distill_loss(enc_x, enc_y, f_x, f_y, b=w.distill_b)
    assign = hier.baseline_assign if cfg.stop_gradient else hier.soft_assign
    ms = [assign(h, f_x) for h in stack.heads]
    clusters = [cluster_loss(m, key=f"m{i}") for i, m in enumerate(ms)]
    matches = [hierarchy_match_loss(matching_plan(stack.plans[i], cfg.plan_scale), ms[i], ms[i + 1],
                                    keys=(f"m{i}", f"m{i + 1}"))
               for i in range(stack.depth - 1)]
    terms = {"L_base": base.value}
    terms.update({f"L_cluster_{i}": c.value for i, c in enumerate(clusters)})
    terms.update({f"L_match_{i}_{i + 1}": m.value for i, m in enumerate(matches)})
    total = total_loss(base, clusters, matches, w)
    terms["total"] = total.value
    return total, terms, (f_x, f_y, cache_x, cache_y)


def backward(state, cfg, total, caches, stack=None):
    """Chain the loss gradients back to projector weights and head centers."""
    stack = stack or state.stack
    f_x, f_y, cache_x, cache_y = caches
    back = hier.baseline_assign_backward if cfg.stop_gradient else hier.soft_assign_backward
    g_fx = total.gradients.get("f_x", np.zeros_like(f_x)).copy()
    g_fy = total.gradients.get("f_y", np.zeros_like(f_y))
    head_grads = {}
    for i, h in enumerate(stack.heads):
        gm = total.gradients.get(f"m{i}")
        if gm is None:
            head_grads[i] = np.zeros_like(h.centers)
            continue
        gc, gf = back(h, f_x, gm)
        head_grads[i] = gc
        g_fx += gf
    gx = state.projector.backward(cache_x, g_fx)
    gy = state.projector.backward(cache_y, g_fy)
    proj_grads = {k: gx[k] + gy[k] for k in gx}
    return proj_grads, head_grads


def evaluate_levels(state, ds, step=None):
    """Accuracy/mIoU of hard head assignments against coarse and fine labels.

    One row per head and label set. Hierarchy heads are reported by level
    index; the stop-gradient probe, when present, as level ``"probe"``.
    """
    f = state.projector(ds.all_encoder())
    rows = []
    heads = list(enumerate(state.stack.heads))
    if state.probe is not None:
        heads.append(("probe", state.probe))
    for i, h in heads:
        pred = col_argmax(hier.baseline_assign(h, f))
        for name, labels, k_true in (("coarse", ds.all_coarse(), ds.params.n_coarse),
                                     ("fine", ds.all_fine(), ds.params.n_fine)):
            acc, mi = score(pred, labels, h.n_clusters, k_true)
            rows.append({"step": step if step is not None else state.step, "level": i,
                         "labels": name, "accuracy": acc, "miou": mi})
    return rows


def train(cfg, data=None, callback=None):
    """Run ``cfg.steps`` updates. Returns ``(state, loss_history, metrics_history)``.

    Each step: project a random image pair, rebuild the transport plans from
    the current heads, assemble the total loss, and apply one Adam update per
    parameter group. ``callback(step, terms)`` is called after every step.
    """
    ds = data if data is not None else generate(cfg.synth_params(), cfg.dataset_seed)
    state = init_state(cfg, ds.features[0].encoder.shape[1])
    rng = np.random.default_rng([cfg.seed, 1])
    settings = sinkhorn_settings(cfg)
    history, metrics = [], []
    n_img = len(ds.features)
    for step in range(1, cfg.steps + 1):
        ix, iy = rng.integers(n_img), rng.integers(n_img)
        stack = hier.build_plans(state.stack, settings)
        total, terms, caches = _checked_loss(state, cfg, ds.features[ix].encoder,
                                             ds.features[iy].encoder, stack, step)
        proj_grads, head_grads = backward(state, cfg, total, caches, stack)
        probe = state.probe
        if probe is not None:
            # the baseline's own cluster probe: trained on detached features
            m = hier.baseline_assign(probe, caches[0])
            lp = cluster_loss(m)
            g_probe, _ = hier.baseline_assign_backward(probe, caches[0], lp.gradients["m"])
            terms["L_probe"] = lp.value

        new_proj, adam_p = adam_step(state.adam["projector"], state.projector.params(), proj_grads)
        adam = {"projector": adam_p}
        heads = []
        for i, h in enumerate(stack.heads):
            upd, adam[f"head{i}"] = adam_step(state.adam[f"head{i}"], {"c": h.centers},
                                              {"c": head_grads[i]})
            heads.append(hier.ClusterHead(i, upd["c"]))
        if probe is not None:
            upd, adam["probe"] = adam_step(state.adam["probe"], {"c": probe.centers},
                                           {"c": g_probe})
            probe = hier.ClusterHead(0, upd["c"])
        state = TrainState(Projector(**new_proj), replace(stack, heads=heads), adam,
                           state.rng_seed, step, probe)
        history.append({"step": step, **terms})
        if callback is not None:
            callback(step, terms)
        if step % cfg.eval_interval == 0:
            metrics.extend(evaluate_levels(state, ds, step))
    if cfg.steps > 0:
        state = replace(state, stack=hier.build_plans(state.stack, settings))
    return state, history, metrics


def _checked_loss(state, cfg, enc_x, enc_y, stack, step):
    try:
        total, terms, caches = compute_loss(state, cfg, enc_x, enc_y, stack)
    except FloatingPointError as exc:
        raise NonFiniteLoss(step, "total", str(exc)) from exc
    for name, v in terms.items():
        if not math.isfinite(v):
            raise NonFiniteLoss(step, name, v)
    return total, terms, caches


# --------------------------------------------------------------------------
# Logs and checkpoints

def write_loss_log(path, history, depth):
    cols = loss_columns(depth, probe=bool(history) and "L_probe" in history[0])
    lines = [",".join(cols)]
    for row in history:
        lines.append(",".join(str(row["step"]) if c == "step" else format_real(row[c]) for c in cols))
    Path(path).write_text("\n".join(lines) + "\n")


def metric_columns(rows):
    """Wide layout: ``run_id, step`` then ``<level>_<labels>_{accuracy,miou}`` per head."""
    cols, seen = ["run_id", "step"], set()
    for r in rows:
        key = (r["level"], r["labels"])
        if key not in seen:
            seen.add(key)
            cols += [f"{r['level']}_{r['labels']}_accuracy", f"{r['level']}_{r['labels']}_miou"]
    return cols


def write_metrics(path, run_id, rows):
    """One line per evaluated step."""
    cols = metric_columns(rows)
    by_step = {}
    for r in rows:
        cell = by_step.setdefault(r["step"], {"run_id": run_id, "step": r["step"]})
        cell[f"{r['level']}_{r['labels']}_accuracy"] = format_real(r["accuracy"])
        cell[f"{r['level']}_{r['labels']}_miou"] = format_real(r["miou"])
    lines = [",".join(cols)]
    lines += [",".join(str(cell[c]) for c in cols) for cell in by_step.values()]
    Path(path).write_text("\n".join(lines) + "\n")


def save_checkpoint(state, cfg, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for k, v in state.projector.params().items():
        write_csv(out / f"projector_{k}.csv", np.atleast_2d(v))
    for i, h in enumerate(state.stack.heads):
        write_csv(out / f"head_{i}.csv", h.centers)
    if state.probe is not None:
        write_csv(out / "probe.csv", state.probe.centers)
    manifest = [f"step={state.step}", f"seed={state.rng_seed}", f"config_hash={cfg.hash()}"]
    manifest += [f"config.{line.replace(' = ', '=', 1)}"
                 for line in cfg.format().splitlines() if line]
    (out / "manifest.txt").write_text("\n".join(manifest) + "\n")


def read_manifest(path):
    kv = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            kv[k] = v
    return kv


def load_checkpoint(ckpt_dir):
    """Returns ``(TrainState, ExperimentConfig)`` from :func:`save_checkpoint` output."""
    from .config import parse

    src = Path(ckpt_dir)
    kv = read_manifest(src / "manifest.txt")
    cfg_text = "\n".join(f"{k[len('config.'):]} = {v}" for k, v in kv.items()
                         if k.startswith("config."))
    cfg = parse(cfg_text)
    p = {k: read_csv(src / f"projector_{k}.csv") for k in ("w1", "b1", "w2", "b2")}
    proj = Projector(p["w1"], p["b1"].ravel(), p["w2"], p["b2"].ravel())
    heads = [hier.ClusterHead(i, read_csv(src / f"head_{i}.csv")) for i in range(cfg.depth)]
    stack = hier.HierarchyStack(heads, [], cfg.base_clusters, cfg.expansion, cfg.ot_temperature)
    stack = hier.build_plans(stack, sinkhorn_settings(cfg)) if cfg.depth > 1 else stack
    probe = hier.ClusterHead(0, read_csv(src / "probe.csv")) if (src / "probe.csv").exists() else None
    state = TrainState(proj, stack, {}, int(kv.get("seed", cfg.seed)), int(kv.get("step", 0)), probe)
    return state, cfg
