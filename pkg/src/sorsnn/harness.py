"""Task-incremental training driver, evaluation and run metrics."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Value, no_grad
from .config import RunConfig
from .data import TaskSequence, load_image_dataset, make_synthetic_tasks, split_by_manifest
from .objective import (LossBreakdown, anchor_loss, classification_loss, memory_loss,
                        orthogonal_loss, total_loss)
from .optim import Adam
from .pathway import (SelectionBank, binary_masks, full_availability, injure, mask_overlap,
                      select_pathway)
from .regulator import Regulator, UnknownTaskError
from .snn import network_forward

log = logging.getLogger(__name__)


class NonFiniteLossError(FloatingPointError):
    pass


def _child_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([seed, *keys])


# ---------------------------------------------------------------- models

class SorSnnModel:
    """Regulator + per-task selection parameters + availability map."""

    method = "sorsnn"

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.layers = cfg.layers()
        self.lif = cfg.model.lif
        self.regulator = Regulator(self.layers, cfg.model.regulator, _child_rng(cfg.seed, 1))
        self.bank = SelectionBank(self.layers, cfg.model.selection_init_std)
        self.avail = full_availability(self.layers)
        self.snapshots: dict[int, list[np.ndarray]] = {}
        self.order: list[int] = []          # tasks in the order they finished
        self._current: Optional[int] = None

    # task lifecycle
    def start_task(self, task: int, relearn: bool = False) -> None:
        if task not in self.regulator.task_emb:
            self.regulator.add_task(task, _child_rng(self.cfg.seed, 2, task))
        self.bank.new(task, _child_rng(self.cfg.seed, 3, task, int(relearn)), relearn=relearn)

    def finish_task(self, task: int) -> None:
        self.regulator.freeze(task)
        self.bank.freeze(task)
        if task not in self.order:
            self.order.append(task)
        self.snapshots.update(self.regulator.snapshot(self.order))

    def trainable(self, task: int, repair: bool = False) -> tuple[list[Value], list[float], list[float]]:
        o = self.cfg.optim
        lr_sel = o.lr if o.lr_selection is None else o.lr_selection
        lr_emb = o.lr if o.lr_embedding is None else o.lr_embedding
        params, lrs = [], []
        shared = self.regulator.shared_parameters()
        params += shared
        lrs += [o.lr] * len(shared)
        params += self.regulator.layer_emb
        lrs += [lr_emb] * len(self.regulator.layer_emb)
        emb = self.regulator.embedding(task)
        if not emb.frozen:
            params.append(emb.x)
            lrs.append(o.lr_repair_embedding if repair else lr_emb)
        eps = [o.eps] * len(params)
        sel = self.bank[task]
        if not sel.frozen:
            params += sel.values()
            lrs += [lr_sel] * len(sel.values())
            eps += [o.eps_selection] * len(sel.values())
        return params, lrs, eps

    # forward pieces
    def weights(self, task: int) -> list[Value]:
        return self.regulator.generate(task)

    def pathway(self, task: int, weights=None):
        if task not in self.bank:
            raise UnknownTaskError(f"no selection parameters for task {task}")
        w = self.weights(task) if weights is None else weights
        return select_pathway(w, self.bank[task], self.avail, self.cfg.model.gate_temperature)

    def masks(self, task: int) -> list[np.ndarray]:
        if task not in self.bank:
            raise UnknownTaskError(f"no selection parameters for task {task}")
        return binary_masks(self.bank[task], self.avail)

    def logits(self, task: int, x: np.ndarray) -> Value:
        return network_forward(x, self.pathway(task).weights, self.layers, self.lif)

    def known_tasks(self) -> list[int]:
        return self.bank.tasks()


class NaiveModel:
    """Same spiking backbone with directly learned dense weights shared by every task."""

    method = "naive"

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.layers = cfg.layers()
        self.lif = cfg.model.lif
        rng = _child_rng(cfg.seed, 1)
        gain = cfg.model.regulator.init_gain
        self.params = [Value(rng.standard_normal(s.weight_shape) * gain / np.sqrt(s.fan_in),
                             name=f"w.{s.name}") for s in self.layers]
        self.order: list[int] = []
        self.snapshots: dict[int, list[np.ndarray]] = {}
        self._current: Optional[int] = None

    def start_task(self, task: int, relearn: bool = False) -> None:
        pass

    def finish_task(self, task: int) -> None:
        if task not in self.order:
            self.order.append(task)

    def trainable(self, task: int, repair: bool = False):
        n = len(self.params)
        return list(self.params), [self.cfg.optim.lr] * n, [self.cfg.optim.eps] * n

    def weights(self, task: int) -> list[Value]:
        return self.params

    def masks(self, task: int) -> list[np.ndarray]:
        return [np.ones(s.weight_shape, dtype=bool) for s in self.layers]

    def logits(self, task: int, x: np.ndarray) -> Value:
        if task not in self.order and task != self._current:
            raise UnknownTaskError(f"task {task} was never trained")
        return network_forward(x, self.params, self.layers, self.lif)

    def known_tasks(self) -> list[int]:
        return list(self.order)


def build_model(cfg: RunConfig):
    return SorSnnModel(cfg) if cfg.method == "sorsnn" else NaiveModel(cfg)


# ---------------------------------------------------------------- data

def build_tasks(cfg: RunConfig) -> TaskSequence:
    t = cfg.tasks
    if t.source == "synthetic":
        seed = cfg.seed if t.data_seed is None else t.data_seed
        return make_synthetic_tasks(t.n_tasks, t.classes_per_task, t.dim, t.separation, seed,
                                    noise=t.noise, n_train=t.n_train, n_test=t.n_test)
    train = load_image_dataset(t.train_path, t.format, t.train_labels)
    test = load_image_dataset(t.test_path, t.format, t.test_labels)
    return split_by_manifest(train, test, t.manifest)


# ---------------------------------------------------------------- training

@dataclass
class EpochLog:
    task: int
    epoch: int
    l_class: float
    l_mem: float
    l_orth: float
    l_anchor: float
    total: float
    train_acc: float
    test_acc: float


@dataclass
class TaskLog:
    task: int
    epochs: list[EpochLog] = field(default_factory=list)
    curves: list[tuple[int, int, int, float]] = field(default_factory=list)   # (task, epoch, eval_task, acc)
    mem_distance: Optional[float] = None


def _past_operands(model: SorSnnModel, task: int, on_masks: bool):
    past = [t for t in model.order if t != task]
    if on_masks:
        return [[m.astype(np.float64) for m in model.masks(t)] for t in past]
    with no_grad():
        return [[p.data.copy() for p in model.pathway(t).weights] for t in past]


def step_loss(model, task: int, x: np.ndarray, y_local: np.ndarray,
              mem_targets: list, past_masks: Optional[list]) -> tuple[LossBreakdown, Value]:
    """Builds the full objective for one minibatch. Returns (breakdown, logits)."""
    lc = model.cfg.loss
    if isinstance(model, NaiveModel):
        logits = network_forward(x, model.params, model.layers, model.lif)
        l_class = classification_loss(logits, y_local)
        zero = Value(0.0)
        return total_loss(l_class, zero, zero, zero, _ZeroCoeffs()), logits
    w = model.weights(task)
    path = model.pathway(task, weights=w)
    logits = network_forward(x, path.weights, model.layers, model.lif)
    l_class = classification_loss(logits, y_local)
    l_mem = Value(0.0)
    for src, target in mem_targets:
        l_mem = l_mem + memory_loss(w if src is None else model.weights(src), target)
    current = path.masks if lc.orth_on_masks else path.weights
    past = past_masks if past_masks is not None else _past_operands(model, task, False)
    l_orth = orthogonal_loss(current, past)
    if lc.orth_include_self:
        for cur in current:
            l_orth = l_orth + ad.sum_(cur * cur)
    l_anchor = anchor_loss(model.bank[task])
    return total_loss(l_class, l_mem, l_orth, l_anchor, lc), logits


class _ZeroCoeffs:
    alpha = beta = gamma = 0.0


def memory_targets(model, task: int, repair: bool = False) -> list[tuple]:
    """``(source, target)`` pairs for the memory term of ``task``.

    ``source`` None means the weights currently generated for ``task``; a task
    id means that task's weights regenerated through the current regulator.
    Targets are detached snapshots.
    """
    if isinstance(model, NaiveModel) or not model.order:
        return []
    others = [t for t in model.order if t != task]
    if not others:
        return []
    lc = model.cfg.loss
    if repair and lc.repair_memory == "protect":
        return [(t, model.snapshots[t]) for t in others]
    if repair or lc.mem_all_past:
        return [(None, model.snapshots[t]) for t in others]
    return [(None, model.snapshots[others[-1]])]


def accuracy(model, task, seq: TaskSequence, split: str = "test", batch: int = 256) -> float:
    t = seq.task(task)
    data = t.test if split == "test" else t.train
    x, y = data.read()
    y_local = t.local_labels(y)
    correct = 0
    with no_grad():
        for i in range(0, len(y_local), batch):
            logits = model.logits(task, x[i:i + batch]).data
            correct += int(np.sum(np.argmax(logits, axis=1) == y_local[i:i + batch]))
    return correct / max(len(y_local), 1)


def evaluate(model, task: int, seq: TaskSequence, split: str = "test") -> float:
    if task not in model.known_tasks() and task != model._current:
        raise UnknownTaskError(f"task {task} has not been trained")
    return accuracy(model, task, seq, split)


def train_task(model, task: int, seq: TaskSequence, epochs: Optional[int] = None,
               repair: bool = False, eval_tasks: Optional[list] = None) -> TaskLog:
    cfg = model.cfg
    o = cfg.optim
    epochs = o.epochs if epochs is None else epochs
    t = seq.task(task)
    if len(t.train) == 0:
        raise ValueError(f"task {task}: empty training set")
    model.start_task(task, relearn=repair)
    model._current = task
    params, lrs, eps = model.trainable(task, repair)
    opt = Adam(params, lrs=lrs, eps_list=eps)
    targets = memory_targets(model, task, repair)
    past = None
    if isinstance(model, SorSnnModel) and cfg.loss.orth_on_masks:
        past = _past_operands(model, task, True)
    rng = _child_rng(cfg.seed, 4, task, 1 if repair else 0)
    tlog = TaskLog(task)
    n = len(t.train)
    for epoch in range(epochs):
        order = rng.permutation(n)
        sums = np.zeros(5)
        correct = 0
        for i in range(0, n, o.batch_size):
            idx = order[i:i + o.batch_size]
            x, y = t.train.read(idx)
            y_local = t.local_labels(y)
            opt.zero_grad()
            parts, logits = step_loss(model, task, x, y_local, targets, past)
            if not np.isfinite(parts.total.data):
                raise NonFiniteLossError(f"task {task} epoch {epoch}: non-finite loss {parts.as_floats()}")
            ad.backward(parts.total)
            opt.step()
            f = parts.as_floats()
            sums += len(idx) * np.array([f["l_class"], f["l_mem"], f["l_orth"], f["l_anchor"], f["total"]])
            correct += int(np.sum(np.argmax(logits.data, axis=1) == y_local))
        test_acc = accuracy(model, task, seq)
        tlog.epochs.append(EpochLog(task, epoch, *(sums / n), correct / n, test_acc))
        if eval_tasks and o.eval_every > 0 and (epoch + 1) % o.eval_every == 0:
            for j in eval_tasks:
                acc = test_acc if j == task else accuracy(model, j, seq)
                tlog.curves.append((task, epoch, j, acc))
    if epochs == 0:
        with no_grad():
            parts, _ = step_loss(model, task, *_first_batch(t, o.batch_size), targets, past)
        f = parts.as_floats()
        tlog.epochs.append(EpochLog(task, -1, f["l_class"], f["l_mem"], f["l_orth"], f["l_anchor"],
                                    f["total"], float("nan"), accuracy(model, task, seq)))
    model._current = None
    model.finish_task(task)
    if targets:
        # memory term re-evaluated after the last update
        tlog.mem_distance = float(sum(
            np.sqrt(sum(float(np.sum((a - b) ** 2)) for a, b in
                        zip(model.snapshots[task if src is None else src], tgt)))
            for src, tgt in targets))
    log.info("task %d done: test acc %.3f", task, tlog.epochs[-1].test_acc if tlog.epochs else float("nan"))
    return tlog


def _first_batch(t, bs):
    x, y = t.train.read(np.arange(min(bs, len(t.train))))
    return x, t.local_labels(y)


# ---------------------------------------------------------------- metrics

@dataclass
class RunResult:
    matrix: np.ndarray                  # R[i, j], NaN above the diagonal
    metrics: dict
    logs: list[TaskLog]
    model: object
    seq: TaskSequence


def acc_bwt(R: np.ndarray) -> tuple[float, Optional[float]]:
    T = R.shape[0]
    acc = float(np.mean(R[T - 1, :T]))
    if T < 2:
        return acc, None
    bwt = float(np.mean([R[T - 1, j] - R[j, j] for j in range(T - 1)]))
    return acc, bwt


def _frozen_state(model) -> dict:
    if not isinstance(model, SorSnnModel):
        return {}
    out = {}
    for t in model.order:
        out[("x_T", t)] = model.regulator.embedding(t).x.data.copy()
        for k, v in enumerate(model.bank[t].values()):
            out[("sel", t, k)] = v.data.copy()
    return out


def compute_metrics(model, R: np.ndarray, tasks: list[int]) -> dict:
    acc, bwt = acc_bwt(R)
    masks = {t: model.masks(t) for t in tasks}
    counts = {t: int(sum(int(m.sum()) for m in masks[t])) for t in tasks}
    total = int(sum(s.n_weights for s in model.layers))
    n = len(tasks)
    jac = np.eye(n)
    dot = np.zeros((n, n), dtype=np.int64)
    for i, a in enumerate(tasks):
        for j, b in enumerate(tasks):
            st = mask_overlap(masks[a], masks[b])
            dot[i, j] = st.dot
            if i != j:
                jac[i, j] = st.jaccard
    off = [dot[i, j] for i in range(n) for j in range(n) if i < j]
    return {
        "method": model.method,
        "ACC": acc,
        "BWT": bwt,
        "tasks": tasks,
        "active_counts": {str(t): counts[t] for t in tasks},
        "active_fractions": {str(t): counts[t] / total for t in tasks},
        "active_fractions_per_layer": {str(t): [float(m.mean()) for m in masks[t]] for t in tasks},
        "total_synapses": total,
        "overlap_jaccard": jac.tolist(),
        "overlap_dot": dot.tolist(),
        "mean_overlap_dot": float(np.mean(off)) if off else 0.0,
    }


def weight_histograms(model, tasks: list[int], bins: int = 64) -> list[tuple]:
    """Rows (task, bin_lo, bin_hi, count) over every weight generated for each task."""
    rows = []
    with no_grad():
        for t in tasks:
            vals = np.concatenate([w.data.ravel() for w in model.weights(t)])
            lo, hi = float(vals.min()), float(vals.max())
            if hi == lo:
                hi = lo + 1e-12
            counts, edges = np.histogram(vals, bins=bins, range=(lo, hi))
            rows += [(t, float(edges[k]), float(edges[k + 1]), int(counts[k])) for k in range(bins)]
    return rows


def run_sequence(cfg: RunConfig, seq: Optional[TaskSequence] = None, model=None) -> RunResult:
    seq = seq if seq is not None else build_tasks(cfg)
    model = model if model is not None else build_model(cfg)
    ids = [t.task_id for t in seq]
    T = len(ids)
    R = np.full((T, T), np.nan)
    logs = []
    access_at_end: dict[int, int] = {}
    frozen_ref: dict = {}
    for i, task in enumerate(ids):
        tlog = train_task(model, task, seq, eval_tasks=ids[:i + 1])
        logs.append(tlog)
        for j in range(i + 1):
            R[i, j] = evaluate(model, ids[j], seq)
        access_at_end[task] = seq.task(task).train.access_count
        for k, v in _frozen_state(model).items():
            frozen_ref.setdefault(k, v)
    metrics = compute_metrics(model, R, ids)
    drift = 0.0
    now = _frozen_state(model)
    for k, v in frozen_ref.items():
        drift += float(np.abs(now[k] - v).sum())
    metrics["frozen_param_drift"] = drift
    metrics["past_train_access"] = int(sum(seq.task(t).train.access_count - access_at_end[t] for t in ids))
    metrics["mem_distance"] = {str(l.task): l.mem_distance for l in logs}
    return RunResult(R, metrics, logs, model, seq)


# ---------------------------------------------------------------- injury

@dataclass
class InjuryResult:
    pre: dict[int, float]
    post: dict[int, float]
    masks_before: dict[int, list[np.ndarray]]
    masks_after: dict[int, list[np.ndarray]]
    cleared: int
    log: Optional[TaskLog] = None


def injury_experiment(model: SorSnnModel, seq: TaskSequence, target: int = 1, fraction: float = 0.5,
                      repair_epochs: Optional[int] = None, seed: int = 0) -> InjuryResult:
    if not isinstance(model, SorSnnModel):
        raise TypeError("injury experiment needs a pathway model")
    if len(model.order) < 2:
        raise ValueError("injury experiment needs at least two trained tasks")
    tasks = list(model.order)
    pre = {t: evaluate(model, t, seq) for t in tasks}
    before = {t: model.masks(t) for t in tasks}
    if fraction == 0:
        return InjuryResult(pre, dict(pre), before, before, 0)
    avail_before = sum(int(a.sum()) for a in model.avail)
    model.avail = injure(before, target, fraction, model.avail, seed)
    cleared = avail_before - sum(int(a.sum()) for a in model.avail)
    # the target's own embedding may re-adapt during repair
    model.regulator.embedding(target).frozen = False
    tlog = train_task(model, target, seq, epochs=repair_epochs if repair_epochs is not None
                      else model.cfg.optim.repair_epochs, repair=True)
    post = {t: evaluate(model, t, seq) for t in tasks}
    after = {t: model.masks(t) for t in tasks}
    return InjuryResult(pre, post, before, after, cleared, tlog)


# ---------------------------------------------------------------- sweeps

def sweep_rows(param: str, values, seeds, base: RunConfig, runner=None) -> list[dict]:
    """One row per value: mean and std of ACC, BWT and mean mask overlap across seeds."""
    import copy
    if param not in ("alpha", "beta"):
        raise ValueError(f"sweep parameter must be alpha or beta, got {param!r}")
    if not seeds:
        raise ValueError("need at least one seed")
    runner = runner or (lambda c: run_sequence(c).metrics)
    rows = []
    for v in values:
        per = []
        for s in seeds:
            c = copy.deepcopy(base)
            setattr(c.loss, param, float(v))
            c.seed = int(s)
            per.append(runner(c))
        row = {param: float(v), "n_seeds": len(per)}
        for key in ("ACC", "BWT", "mean_overlap_dot"):
            vals = [m[key] for m in per if m.get(key) is not None]
            row[f"{key}_mean"] = float(np.mean(vals)) if vals else None
            row[f"{key}_std"] = float(np.std(vals)) if vals else None
        rows.append(row)
    return rows
