"""Run-report archives: CSV/JSON summaries, mask dumps and a binary checkpoint.

Archive layout (one directory per run)::

    matrix.csv            accuracy matrix R[i, j] (row = after training task i)
    metrics.json          ACC, BWT, active fractions, overlap matrices, audits
    loss_log.csv          per-epoch loss breakdown
    curves.csv            accuracy of every seen task at each evaluation point
    masks/task_<t>.json   one record per layer: name, shape, bitmap, active count
    weights_hist.csv      64-bin histograms of generated weights per task
    config.resolved.json  every effective hyperparameter
    seed.txt
    checkpoint.bin        final model state

Archives are written into a sibling temp directory and renamed into place.
"""

from __future__ import annotations

import csv
import io
import json
import os
import shutil
import struct
import tempfile
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .config import RunConfig, from_dict
from .harness import NaiveModel, RunResult, SorSnnModel, build_model, weight_histograms
from .snn import LayerSpec

MAGIC = b"SO"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and np.isnan(x)):
        return ""
    return repr(float(x))


# ---------------------------------------------------------------- masks

def mask_records(masks: Sequence[np.ndarray], layers: Sequence[LayerSpec]) -> list[dict]:
    """Row-major bitmap per layer, packed MSB-first and hex encoded."""
    out = []
    for spec, m in zip(layers, masks):
        bits = np.asarray(m, dtype=bool).ravel(order="C")
        out.append({
            "layer": spec.name,
            "shape": list(m.shape),
            "bitmap": np.packbits(bits).tobytes().hex(),
            "active": int(bits.sum()),
        })
    return out


def decode_mask(record: Mapping) -> np.ndarray:
    shape = tuple(record["shape"])
    n = int(np.prod(shape))
    bits = np.unpackbits(np.frombuffer(bytes.fromhex(record["bitmap"]), dtype=np.uint8))[:n]
    return bits.astype(bool).reshape(shape)


def read_masks(archive) -> dict[int, list[np.ndarray]]:
    out = {}
    for f in sorted(Path(archive, "masks").glob("task_*.json")):
        t = int(f.stem.split("_", 1)[1])
        out[t] = [decode_mask(r) for r in json.loads(f.read_text())["layers"]]
    return dict(sorted(out.items()))


# ---------------------------------------------------------------- checkpoint

def model_state(model) -> dict[str, np.ndarray]:
    """Flat name -> float64 array view of everything needed to resume a model."""
    st: dict[str, np.ndarray] = {"meta.order": np.array(model.order, dtype=np.float64)}
    if isinstance(model, NaiveModel):
        for p in model.params:
            st[f"param.{p.name}"] = p.data
        return st
    reg = model.regulator
    for p in reg.shared_parameters() + reg.layer_emb:
        st[f"param.{p.name}"] = p.data
    st["head_scale"] = np.array(reg.head_scale, dtype=np.float64)
    for t, emb in reg.task_emb.items():
        st[f"emb.{t}"] = emb.x.data
        st[f"frozen.emb.{t}"] = np.array([float(emb.frozen)])
    for t in model.bank.tasks():
        sel = model.bank[t]
        for i, spec in enumerate(model.layers):
            st[f"sel.{t}.{spec.name}.a"] = sel.a[i].data
            st[f"sel.{t}.{spec.name}.a_tilde"] = sel.a_tilde[i].data
        st[f"frozen.sel.{t}"] = np.array([float(sel.frozen)])
    for spec, a in zip(model.layers, model.avail):
        st[f"avail.{spec.name}"] = a.astype(np.float64)
    for t, snap in model.snapshots.items():
        for spec, w in zip(model.layers, snap):
            st[f"snap.{t}.{spec.name}"] = w
    return st


def encode_checkpoint(state: Mapping[str, np.ndarray]) -> bytes:
    """``SO`` + version byte, a section table, then little-endian float64 payloads."""
    names = list(state)
    table = io.BytesIO()
    payload = io.BytesIO()
    for name in names:
        arr = np.ascontiguousarray(state[name], dtype="<f8")
        key = name.encode("utf-8")
        table.write(struct.pack("<H", len(key)) + key)
        table.write(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        table.write(struct.pack("<QQ", payload.tell(), arr.size))
        payload.write(arr.tobytes())
    head = MAGIC + struct.pack("<BI", FORMAT_VERSION, len(names))
    return head + struct.pack("<Q", table.tell()) + table.getvalue() + payload.getvalue()


def decode_checkpoint(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:2] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    version, n = struct.unpack_from("<BI", blob, 2)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (table_len,) = struct.unpack_from("<Q", blob, 7)
    pos = 15
    base = pos + table_len
    out = {}
    try:
        for _ in range(n):
            (klen,) = struct.unpack_from("<H", blob, pos)
            name = blob[pos + 2:pos + 2 + klen].decode("utf-8")
            pos += 2 + klen
            (ndim,) = struct.unpack_from("<B", blob, pos)
            shape = struct.unpack_from(f"<{ndim}Q", blob, pos + 1)
            pos += 1 + 8 * ndim
            off, size = struct.unpack_from("<QQ", blob, pos)
            pos += 16
            start = base + off
            if start + 8 * size > len(blob):
                raise CheckpointError(f"section {name!r} runs past end of file")
            out[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=start).reshape(shape).copy()
    except struct.error as exc:
        raise CheckpointError(f"truncated section table: {exc}") from None
    return out


def restore_model(cfg: RunConfig, state: Mapping[str, np.ndarray]):
    model = build_model(cfg)
    order = [int(t) for t in state["meta.order"]]
    if isinstance(model, NaiveModel):
        for p in model.params:
            p.data[...] = state[f"param.{p.name}"]
        model.order = order
        return model
    reg = model.regulator
    tasks = sorted(int(k.split(".")[1]) for k in state if k.startswith("emb."))
    for t in tasks:
        model.start_task(t)
    for p in reg.shared_parameters() + reg.layer_emb:
        p.data[...] = state[f"param.{p.name}"]
    reg.head_scale = [float(v) for v in state["head_scale"]]
    for t in tasks:
        reg.task_emb[t].x.data[...] = state[f"emb.{t}"]
        reg.task_emb[t].frozen = bool(state[f"frozen.emb.{t}"][0])
        sel = model.bank[t]
        for i, spec in enumerate(model.layers):
            sel.a[i].data[...] = state[f"sel.{t}.{spec.name}.a"]
            sel.a_tilde[i].data[...] = state[f"sel.{t}.{spec.name}.a_tilde"]
        sel.frozen = bool(state[f"frozen.sel.{t}"][0])
    model.avail = [state[f"avail.{s.name}"] > 0.5 for s in model.layers]
    model.order = order
    model.snapshots = {t: [state[f"snap.{t}.{s.name}"].copy() for s in model.layers]
                       for t in order if f"snap.{t}.{model.layers[0].name}" in state}
    return model


def load_archive(archive):
    """(config, model) from a finished archive. Raises FileNotFoundError without a checkpoint."""
    archive = Path(archive)
    ck = archive / "checkpoint.bin"
    if not ck.is_file():
        raise FileNotFoundError(f"{ck}: no checkpoint in archive")
    cfg = from_dict(json.loads((archive / "config.resolved.json").read_text()))
    return cfg, restore_model(cfg, decode_checkpoint(ck.read_bytes()))


# ---------------------------------------------------------------- tables

def matrix_csv(R: np.ndarray, tasks: Sequence[int]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["after_task"] + [f"task_{t}" for t in tasks])
    for t, row in zip(tasks, R):
        w.writerow([t] + [_fmt(v) for v in row])
    return buf.getvalue()


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def loss_log_csv(result: RunResult) -> str:
    rows = [(e.task, e.epoch, _fmt(e.l_class), _fmt(e.l_mem), _fmt(e.l_orth), _fmt(e.l_anchor),
             _fmt(e.total), _fmt(e.train_acc), _fmt(e.test_acc))
            for lg in result.logs for e in lg.epochs]
    return _csv(["task", "epoch", "l_class", "l_mem", "l_orth", "l_anchor", "total",
                 "train_acc", "test_acc"], rows)


def curves_csv(result: RunResult) -> str:
    rows = [(t, e, j, _fmt(a)) for lg in result.logs for (t, e, j, a) in lg.curves]
    return _csv(["training_task", "epoch", "eval_task", "acc"], rows)


def hist_csv(rows) -> str:
    return _csv(["task", "bin_lo", "bin_hi", "count"],
                [(t, _fmt(lo), _fmt(hi), c) for t, lo, hi, c in rows])


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------- archive

def _atomic_dir(dest: Path, files: Mapping[str, bytes | str]) -> Path:
    dest = Path(dest)
    dest.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{dest.name}.", dir=dest.parent))
    try:
        for rel, content in files.items():
            p = tmp / rel
            p.parent.mkdir(parents=True, exist_ok=True)
            if isinstance(content, str):
                p.write_text(content)
            else:
                p.write_bytes(content)
        if dest.exists():
            old = dest.with_name(f".{dest.name}.old")
            if old.exists():
                shutil.rmtree(old)
            os.replace(dest, old)
            os.replace(tmp, dest)
            shutil.rmtree(old)
        else:
            os.replace(tmp, dest)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return dest


def write_archive(result: RunResult, cfg: RunConfig, out_dir=None) -> Path:
    model = result.model
    tasks = [t.task_id for t in result.seq]
    files: dict[str, bytes | str] = {
        "matrix.csv": matrix_csv(result.matrix, tasks),
        "metrics.json": _json(result.metrics),
        "loss_log.csv": loss_log_csv(result),
        "curves.csv": curves_csv(result),
        "weights_hist.csv": hist_csv(weight_histograms(model, tasks)),
        "config.resolved.json": cfg.to_json(),
        "seed.txt": f"{cfg.seed}\n",
        "checkpoint.bin": encode_checkpoint(model_state(model)),
    }
    for t in tasks:
        files[f"masks/task_{t}.json"] = _json({"task": t, "layers": mask_records(model.masks(t),
                                                                                  model.layers)})
    return _atomic_dir(Path(out_dir or cfg.output_dir), files)


def add_file(archive, name: str, content: str) -> Path:
    """Write one extra file into an existing archive (temp file + rename)."""
    dest = Path(archive) / name
    fd, tmp = tempfile.mkstemp(prefix=f".{dest.name}.", dir=dest.parent)
    with os.fdopen(fd, "w") as fh:
        fh.write(content)
    os.replace(tmp, dest)
    return dest


# ---------------------------------------------------------------- inspection

def participation_counts(masks: Mapping[int, Sequence[np.ndarray]]) -> list[np.ndarray]:
    """Per synapse, the number of tasks whose pathway uses it."""
    per = list(masks.values())
    return [np.sum([m[i] for m in per], axis=0).astype(np.int64) for i in range(len(per[0]))]


def is_sorsnn(model) -> bool:
    return isinstance(model, SorSnnModel)
