"""Staged training: classifier, then autoencoder, then latent diffusion.

Every checkpoint holds the full parameter set of ``SpecGeoModel`` so later
stages load it strictly. Each run writes ``<stage>.ckpt``, ``<stage>_log.csv``
and ``<stage>_manifest.json``; the manifest embeds the resolved config, seed and
input/output hashes, which is all ``replay`` needs to repeat the run.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import checkpoint
from . import config as config_mod
from .autoencoder import ae_loss
from .config import RunConfig
from .diffusion import ldm_loss
from .egnn import GraphBatch
from .encoder import Encoded, bce_loss, label_accuracy
from .model import Example, SpecGeoModel, stack_examples
from .nn import AdamW, lr_rate
from .store import DatasetStore, StoreRecord

log = logging.getLogger(__name__)

STAGES = ("classifier", "ae", "ldm")
PREREQUISITE = {"ae": "classifier", "ldm": "ae"}


class MissingCheckpointError(FileNotFoundError):
    pass


class ReplayMismatch(RuntimeError):
    pass


def to_example(rec: StoreRecord) -> Example:
    return Example(rec.id, rec.geometry.elements, rec.geometry.coords, rec.spectrum.intensities,
                   rec.formula, rec.labels.astype(np.float64))


def stage_lr(step: int, cfg: RunConfig) -> float:
    return min(lr_rate(step, cfg.warmup, cfg.lr_base, cfg.lr_model_dim), cfg.lr_max)


def build_model(cfg: RunConfig, n_groups: int) -> SpecGeoModel:
    return SpecGeoModel(cfg.model, n_groups, seed=cfg.seed)


def load_model(path: str | Path, expect_stage: str | Sequence[str] | None = None) -> tuple[SpecGeoModel, RunConfig, dict]:
    """Rebuild a model from a checkpoint written by ``train_stage``."""
    path = Path(path)
    if not path.exists():
        raise MissingCheckpointError(f"checkpoint {path} does not exist")
    tensors, meta = checkpoint.load(path)
    stage = meta.get("stage")
    if expect_stage is not None:
        allowed = (expect_stage,) if isinstance(expect_stage, str) else tuple(expect_stage)
        if stage not in allowed:
            raise MissingCheckpointError(f"{path} is a {stage!r} checkpoint; need one of {allowed}")
    cfg = config_mod.loads(meta["config"])
    model = build_model(cfg, int(meta["n_groups"]))
    model.load_state_dict(tensors)
    return model, cfg, meta


def _batches(n: int, size: int, rng: np.random.Generator):
    """Endless epoch-shuffled index batches."""
    while True:
        perm = rng.permutation(n)
        for start in range(0, n, size):
            yield perm[start:start + size]


@dataclass
class StageResult:
    stage: str
    checkpoint: Path
    log: Path
    manifest: Path
    checkpoint_hash: str
    metrics: dict = field(default_factory=dict)


def _classifier_step(model: SpecGeoModel, batch_ex: Sequence[Example]):
    logits, _ = model.encode_spectra(batch_ex)
    y = np.stack([e.labels for e in batch_ex])
    loss = bce_loss(logits, y)
    return loss, {"loss": loss.item(), "label_acc": label_accuracy(logits.data, y)}


def _ae_terms(model: SpecGeoModel, batch_ex: Sequence[Example], enc: Encoded, rng: np.random.Generator):
    batch, elements, coords = stack_examples(batch_ex)
    out = model.ae(coords, elements, enc, batch, rng=rng)
    loss, mse = ae_loss(out, batch, model.cfg.sigma0, model.cfg.lambda_kl)
    return loss, mse, out, batch


def _joint_step(model: SpecGeoModel, batch_ex, rng):
    logits, enc = model.encode_spectra(batch_ex)
    y = np.stack([e.labels for e in batch_ex])
    cls = bce_loss(logits, y)
    rec, mse, _, _ = _ae_terms(model, batch_ex, enc, rng)
    loss = rec + cls
    return loss, {"loss": loss.item(), "ae_loss": rec.item(), "recon_mse": mse, "cls_loss": cls.item(),
                  "label_acc": label_accuracy(logits.data, y)}


def _ldm_step(model: SpecGeoModel, batch_ex, rng, cache: dict[str, np.ndarray]):
    rows = [cache[e.id] for e in batch_ex]
    owner = np.concatenate([np.full(len(r), k) for k, r in enumerate(rows)]).astype(np.intp)
    enc = Encoded(ad.tensor(np.concatenate(rows)), owner, 3200 // model.cfg.patch_size)
    rec, mse, out, batch = _ae_terms(model, batch_ex, enc, rng)
    z0 = out.z_x.data
    z_h = out.z_h.detach()
    predict = lambda z, t: model.denoiser(z, t, z_h, enc, batch).eps
    diff, _, _ = ldm_loss(z0, batch, model.schedule(), predict, rng)
    loss = rec + diff
    return loss, {"loss": loss.item(), "ae_loss": rec.item(), "recon_mse": mse, "ldm_loss": diff.item()}


def spectral_cache(model: SpecGeoModel, examples: Sequence[Example], chunk: int = 16) -> dict[str, np.ndarray]:
    """Frozen-classifier spectral features per example id."""
    out = {}
    for start in range(0, len(examples), chunk):
        part = examples[start:start + chunk]
        _, enc = model.encode_spectra(part)
        for k, e in enumerate(part):
            out[e.id] = enc.rows(k).copy()
    return out


def stage_parameters(model: SpecGeoModel, stage: str):
    if stage == "classifier":
        return model.classifier.parameters()
    if stage == "ae":
        return model.classifier.parameters() + model.ae.parameters()
    if stage == "ldm":
        return model.ae.parameters() + model.denoiser.parameters()
    raise ValueError(f"unknown stage {stage!r}")


def train_stage(stage: str, store: DatasetStore, cfg: RunConfig, out_dir: str | Path,
                init: str | Path | None = None, steps: int | None = None,
                ids: Sequence[str] | None = None,
                progress: Callable[[int, dict], None] | None = None) -> StageResult:
    """Run one training stage and write checkpoint, CSV log and manifest into ``out_dir``."""
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}; expected one of {STAGES}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_groups = len(store.group_names)
    inputs: dict = {"store": {"path": str(store.path), "hash": store.hash}}
    if stage in PREREQUISITE:
        need = PREREQUISITE[stage]
        if init is None:
            raise MissingCheckpointError(f"stage {stage!r} needs a {need!r} checkpoint (--checkpoint)")
        model, _, meta = load_model(init, expect_stage=need)
        if meta.get("config") and config_mod.loads(meta["config"]).model != cfg.model:
            raise ValueError(f"model settings differ from those in {init}")
        inputs["checkpoint"] = {"path": str(init), "hash": checkpoint.file_hash(init)}
    else:
        model = build_model(cfg, n_groups)
    steps = steps if steps is not None else {"classifier": cfg.classifier_steps, "ae": cfg.ae_steps,
                                             "ldm": cfg.ldm_steps}[stage]
    records = store.select(ids)
    if not records:
        raise ValueError("no training records")
    examples = [to_example(r) for r in records]
    rng = np.random.default_rng([cfg.seed, STAGES.index(stage)])
    params = stage_parameters(model, stage)
    opt = AdamW(params)
    cache = spectral_cache(model, examples) if stage == "ldm" else None
    batches = _batches(len(examples), cfg.batch_size, rng)
    rows: list[dict] = []
    t0 = time.perf_counter()
    window: dict[str, list[float]] = {}
    for step in range(1, steps + 1):
        batch_ex = [examples[i] for i in next(batches)]
        if stage == "classifier":
            loss, stats = _classifier_step(model, batch_ex)
        elif stage == "ae":
            loss, stats = _joint_step(model, batch_ex, rng)
        else:
            loss, stats = _ldm_step(model, batch_ex, rng, cache)
        opt.zero_grad()
        ad.backward(loss)
        lr = stage_lr(step, cfg)
        opt.step(lr, cfg.clip)
        for key, value in stats.items():
            window.setdefault(key, []).append(value)
        if step % cfg.log_every == 0 or step == steps:
            # each row holds the mean over the steps since the previous row
            means = {key: math.fsum(v) / len(v) for key, v in window.items()}
            window = {}
            rows.append({"step": step, "lr": lr, **means})
            if progress:
                progress(step, means)
    elapsed = time.perf_counter() - t0
    metrics = evaluate_fit(model, stage, examples)
    ckpt = out_dir / f"{stage}.ckpt"
    meta = {"stage": stage, "config": config_mod.dumps(cfg), "n_groups": n_groups,
            "group_names": list(store.group_names), "steps": steps, "ids": [e.id for e in examples]}
    digest = checkpoint.save(ckpt, model.state_dict(), meta)
    log_path = out_dir / f"{stage}_log.csv"
    _write_log(log_path, rows)
    manifest = out_dir / f"{stage}_manifest.json"
    doc = {"kind": "train", "stage": stage, "seed": cfg.seed, "config": config_mod.dumps(cfg),
           "steps": steps, "ids": None if ids is None else list(ids), "inputs": inputs,
           "outputs": {"checkpoint": {"path": ckpt.name, "hash": digest},
                       "log": {"path": log_path.name, "hash": checkpoint.file_hash(log_path)}},
           "metrics": metrics, "seconds": round(elapsed, 3)}
    manifest.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    log.info("%s stage: %d steps in %.1fs, %s", stage, steps, elapsed, metrics)
    return StageResult(stage, ckpt, log_path, manifest, digest, metrics)


def _write_log(path: Path, rows: list[dict]) -> None:
    keys: list[str] = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def evaluate_fit(model: SpecGeoModel, stage: str, examples: Sequence[Example], chunk: int = 16) -> dict:
    """Training-set label accuracy (overall and worst group) and, for AE-bearing
    stages, mean-latent reconstruction MSE."""
    correct, total, sq, count = 0.0, 0, 0.0, 0
    per_group = 0
    for start in range(0, len(examples), chunk):
        part = examples[start:start + chunk]
        logits, enc = model.encode_spectra(part)
        y = np.stack([e.labels for e in part])
        correct += label_accuracy(logits.data, y) * y.size
        per_group = per_group + ((logits.data > 0) == (y > 0.5)).sum(axis=0)
        total += y.size
        if stage != "classifier":
            batch, elements, coords = stack_examples(part)
            out = model.ae(coords, elements, enc.detached(), batch)
            err = out.x.data - out.x_rec.data
            sq += float((err**2).sum())
            count += err.size
    metrics = {"label_acc": correct / total, "group_acc_min": float(np.min(per_group)) / len(examples)}
    if count:
        metrics["recon_mse"] = sq / count
    return metrics


def replay(manifest_path: str | Path, out_dir: str | Path, check: bool = True) -> StageResult:
    """Re-run a training stage from its manifest; optionally insist on identical outputs."""
    manifest_path = Path(manifest_path)
    doc = json.loads(manifest_path.read_text())
    if doc.get("kind") != "train":
        raise ValueError(f"{manifest_path} is not a training manifest")
    cfg = config_mod.loads(doc["config"])
    store = DatasetStore.open(doc["inputs"]["store"]["path"])
    if store.hash != doc["inputs"]["store"]["hash"]:
        raise ReplayMismatch("dataset store content changed since the recorded run")
    init = None
    if "checkpoint" in doc["inputs"]:
        init = doc["inputs"]["checkpoint"]["path"]
        if checkpoint.file_hash(init) != doc["inputs"]["checkpoint"]["hash"]:
            raise ReplayMismatch(f"input checkpoint {init} changed since the recorded run")
    result = train_stage(doc["stage"], store, cfg, out_dir, init=init, steps=doc["steps"], ids=doc["ids"])
    if check and result.checkpoint_hash != doc["outputs"]["checkpoint"]["hash"]:
        raise ReplayMismatch("replayed checkpoint differs from the recorded one")
    return result
