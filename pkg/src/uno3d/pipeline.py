"""Dataset generation, simulation, training, prediction and evaluation on disk.

Every command reads and writes dataset directories (see :mod:`uno3d.container`).
Parallel commands hand one sample per task to a process pool; each task only
depends on its own sample seed, so outputs do not depend on the worker count.
"""
from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .container import (ContainerError, Dataset, DatasetWriter, derive_seed, read_tensor,
                        write_tensor)
from .geology import GeologyConfig, GeologyField, generate_geology
from .metrics import (gof_report, mae_per_component, pgv, write_mae_csv,
                      write_spectra_csv)
from .operator import UnoModel, uno_forward
from .source import SourceSpec
from .training import TrainingConfig, TrainingData, TrainingDiverged, train
from .wavesim import (SimConfig, SimulationBlowUp, SurfaceRecord, interpolate_record,
                      run_simulation)

__all__ = [
    "CommandResult",
    "gen_geology",
    "simulate",
    "train_model",
    "predict",
    "evaluate",
    "grid_centers",
    "record_to_grid",
    "load_training_data",
]

log = logging.getLogger(__name__)


@dataclass
class CommandResult:
    out: Path
    n_ok: int
    failures: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def partial(self) -> bool:
        return bool(self.failures)


def _map(fn, tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def _fresh_dir(out) -> Path:
    out = Path(out)
    if out.exists() and any(out.iterdir()):
        raise ContainerError(f"{out}: output directory is not empty")
    return out


def _rel(target: Path, start: Path) -> str:
    return os.path.relpath(Path(target).resolve(), Path(start).resolve())


# ---------------------------------------------------------------------------
# geology
# ---------------------------------------------------------------------------


def _geology_task(args):
    cfg_dict, root_seed, index, out = args
    cfg = GeologyConfig(**cfg_dict)
    seed = derive_seed(root_seed, index)
    geo = generate_geology(cfg, seed)
    name = f"geology_{index:05d}.nopd"
    write_tensor(Path(out) / name, geo.vs, "f32")
    layers = [asdict(l) for l in geo.layers]
    return index, seed, {"vs": {"path": name, "dtype": "f32", "shape": list(geo.vs.shape)}}, layers


def gen_geology(cfg: PipelineConfig, out, count: int | None = None, seed: int | None = None,
                workers: int = 1) -> CommandResult:
    """Write ``count`` velocity volumes (f32, m/s) with per-sample derived seeds."""
    count = cfg.run.count if count is None else int(count)
    seed = cfg.run.seed if seed is None else int(seed)
    if count < 0:
        raise ValueError("count must be >= 0")
    out = _fresh_dir(out)
    w = DatasetWriter(out, kind="geology", root_seed=seed,
                      configs={"geology": cfg.geology.to_dict()}, units={"vs": "m/s"})
    tasks = [(cfg.geology.to_dict(), seed, i, str(out)) for i in range(count)]
    for index, s, files, layers in _map(_geology_task, tasks, workers):
        w.add_sample(index, files, seed=s, layers=layers)
    w.close()
    return CommandResult(out, count)


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------


def grid_centers(n: int, domain_size_m: float) -> np.ndarray:
    return (np.arange(n) + 0.5) * domain_size_m / n


def record_to_grid(record: SurfaceRecord, grid_xy, domain_size_m: float) -> np.ndarray:
    """Sensor records interpolated onto the voxel-center grid of the geology."""
    xs = grid_centers(grid_xy[0], domain_size_m)
    ys = grid_centers(grid_xy[1], domain_size_m)
    if len(record.x_m) == len(xs) and np.allclose(record.x_m, xs) and \
            len(record.y_m) == len(ys) and np.allclose(record.y_m, ys):
        return record.data
    return interpolate_record(record, xs, ys).data


def _simulate_task(args):
    geo_root, entry, sim_dict, src_dict, domain, out = args
    index = entry["index"]
    vs = read_tensor(Path(geo_root) / entry["files"]["vs"]["path"]).astype(np.float64)
    geo = GeologyField(vs=vs, layers=[], seed=entry.get("seed", 0))
    sim = SimConfig(**sim_dict)
    try:
        rec = run_simulation(geo, SourceSpec(**src_dict), sim, domain_size_m=domain)
    except SimulationBlowUp as exc:
        return index, None, f"blow-up at step {exc.step_index} (t = {exc.time_s:.3f} s)"
    target = record_to_grid(rec, vs.shape[:2], domain)
    files = {}
    for key, arr in (("record", rec.data), ("target", target)):
        name = f"{key}_{index:05d}.nopd"
        write_tensor(Path(out) / name, arr, "f32")
        files[key] = {"path": name, "dtype": "f32", "shape": list(arr.shape)}
    return index, files, {k: v for k, v in rec.meta.items()}


def simulate(cfg: PipelineConfig, geology_dir, out, workers: int = 1) -> CommandResult:
    """One surface record per geology; blow-ups are listed as failures."""
    geo = Dataset(geology_dir)
    if geo.kind != "geology":
        raise ContainerError(f"{geology_dir}: expected a geology dataset, found {geo.kind!r}")
    gcfg = GeologyConfig(**geo.configs["geology"])
    out = _fresh_dir(out)
    w = DatasetWriter(out, kind="records", root_seed=geo.manifest.get("root_seed"),
                      configs={"geology": gcfg.to_dict(), "simulation": cfg.simulation.to_dict(),
                               "source": cfg.source.to_dict()},
                      units={"record": "m/s", "target": "m/s", "time": "s"},
                      extra={"geology_dataset": _rel(geo.root, out),
                             "record_times_s": cfg.simulation.record_times.tolist(),
                             "record_rate_hz": cfg.simulation.record_rate_hz})
    tasks = [(str(geo.root), e, cfg.simulation.to_dict(), cfg.source.to_dict(), gcfg.domain_size_m, str(out))
             for e in geo.samples]
    failures = []
    for (index, files, info), entry in zip(_map(_simulate_task, tasks, workers), geo.samples):
        if files is None:
            w.add_failure(index, info)
            failures.append((index, info))
        else:
            w.add_sample(index, files, seed=entry.get("seed"), geology=entry["files"]["vs"]["path"], sim=info)
    w.close()
    return CommandResult(out, len(w.samples), failures)


# ---------------------------------------------------------------------------
# training and inference
# ---------------------------------------------------------------------------


def _geology_of(records: Dataset) -> Dataset:
    return Dataset(records.root / records.manifest["geology_dataset"])


def load_training_data(records_dir) -> tuple[TrainingData, Dataset]:
    recs = Dataset(records_dir)
    if recs.kind != "records":
        raise ContainerError(f"{records_dir}: expected a records dataset, found {recs.kind!r}")
    if len(recs) == 0:
        raise ContainerError(f"{records_dir}: no samples to train on")
    geo = _geology_of(recs)
    by_name = {s["files"]["vs"]["path"]: i for i, s in enumerate(geo.samples)}
    vs = np.stack([geo.load(by_name[s["geology"]], "vs") for s in recs.samples])
    targets = recs.stack("target")
    return TrainingData(vs ** 2, targets), recs


def train_model(cfg: PipelineConfig, records_dir, out, seed: int | None = None) -> CommandResult:
    """Fit the operator; writes the best checkpoint, the loss curve and the split."""
    data, recs = load_training_data(records_dir)
    tcfg = cfg.training if seed is None else TrainingConfig(**{**cfg.training.to_dict(), "seed": int(seed)})
    model_seed = cfg.model.seed if seed is None else int(seed)
    schedule = cfg.model.build(data.inputs.shape[1:])
    model = UnoModel.create(schedule, seed=model_seed)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)

    def on_epoch(epoch, hist, best):
        hist.to_csv(out / "loss_curve.csv")
        if hist.best_epoch == epoch:
            best.save(out / "checkpoint")

    status = "ok"
    try:
        best, hist = train(model, data, tcfg, on_epoch=on_epoch)
    except TrainingDiverged as exc:
        log.error("%s", exc)
        status = str(exc)
        best, hist = exc.model, None
    best.meta.update({"records_dataset": _rel(recs.root, out), "status": status})
    best.save(out / "model")
    sample_ids = [s["index"] for s in recs.samples]
    info = {"status": status, "n_parameters": best.n_parameters, "model_seed": model_seed,
            "training": tcfg.to_dict()}
    if hist is not None:
        hist.to_csv(out / "loss_curve.csv")
        info.update({
            "best_epoch": hist.best_epoch,
            "split": {"train": [sample_ids[i] for i in hist.train_indices],
                      "validation": [sample_ids[i] for i in hist.val_indices]},
            "final_train_mae": hist.train_mae[-1], "first_train_mae": hist.train_mae[0],
        })
    (out / "training.json").write_text(json.dumps(info, indent=1))
    failures = [] if status == "ok" else [(None, status)]
    return CommandResult(out, 1 if status == "ok" else 0, failures, info)


def predict(model_dir, records_dir, out, samples=None, batch: int = 8) -> CommandResult:
    """Operator predictions on the voxel grid, shaped like the gridded targets."""
    model = UnoModel.load(model_dir)
    recs = Dataset(records_dir)
    geo = _geology_of(recs)
    by_name = {s["files"]["vs"]["path"]: i for i, s in enumerate(geo.samples)}
    chosen = list(range(len(recs))) if samples is None else [int(i) for i in samples]
    index_of = {s["index"]: j for j, s in enumerate(recs.samples)}
    missing = [i for i in chosen if i not in index_of]
    if missing:
        raise ContainerError(f"samples {missing} are not in {records_dir}")
    out = _fresh_dir(out)
    w = DatasetWriter(out, kind="predictions", root_seed=model.seed,
                      configs={"model": {"schedule": model.schedule.to_dict()}},
                      units={"prediction": "m/s"},
                      extra={"records_dataset": _rel(recs.root, out), "model": _rel(Path(model_dir), out),
                             "record_rate_hz": recs.manifest.get("record_rate_hz")})
    for s in range(0, len(chosen), batch):
        ids = chosen[s:s + batch]
        vs = np.stack([geo.load(by_name[recs.samples[index_of[i]]["geology"]], "vs") for i in ids])
        pred = uno_forward(model, vs ** 2)
        for i, p in zip(ids, pred):
            files = {"prediction": w.write(f"prediction_{i:05d}.nopd", p, "f32")}
            w.add_sample(i, files)
    w.close()
    return CommandResult(out, len(chosen))


def _write_traces(path, pred, ref, times, sensors):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["sample", "ix", "iy", "time_s"] + [f"{k}_{c}" for k in ("pred", "ref") for c in "ENZ"])
        for sid, p, r in zip(*pred, ref):
            for fx, fy in sensors:
                ix = min(int(fx * p.shape[1]), p.shape[1] - 1)
                iy = min(int(fy * p.shape[2]), p.shape[2] - 1)
                for t, tv in enumerate(times):
                    wr.writerow([sid, ix, iy, repr(float(tv))]
                                + [repr(float(v)) for v in (*p[:, ix, iy, t], *r[:, ix, iy, t])])


def evaluate(cfg: PipelineConfig, predictions_dir, records_dir, out) -> CommandResult:
    """MAE distribution, traces, GOF report and spectra for predictions vs gridded targets."""
    preds = Dataset(predictions_dir)
    recs = Dataset(records_dir)
    if preds.kind != "predictions" or recs.kind != "records":
        raise ContainerError("evaluate needs a predictions dataset and a records dataset")
    index_of = {s["index"]: j for j, s in enumerate(recs.samples)}
    ids = [s["index"] for s in preds.samples]
    if not ids:
        raise ContainerError(f"{predictions_dir}: no predictions to evaluate")
    if any(i not in index_of for i in ids):
        raise ContainerError("predictions refer to samples missing from the records dataset")
    p = np.stack([preds.load(j, "prediction") for j in range(len(preds))])
    r = np.stack([recs.load(index_of[i], "target") for i in ids])
    if p.shape != r.shape:
        raise ContainerError(f"prediction shape {p.shape} differs from target shape {r.shape}")
    rate = float(recs.manifest["record_rate_hz"])
    times = np.asarray(recs.manifest["record_times_s"])
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)

    maes = np.stack([mae_per_component(pi, ri) for pi, ri in zip(p, r)])
    write_mae_csv(out / "mae.csv", maes, ids)
    _write_traces(out / "traces.csv", (ids, p), r, times, cfg.evaluation.trace_sensors)
    band = (cfg.evaluation.band_hz[0], min(cfg.evaluation.band_hz[1], 0.49 * rate))
    report = gof_report(p, r, rate, band, cfg.evaluation.n_freqs)
    report.meta = {"samples": ids}
    report.to_json(out / "gof.json")
    write_spectra_csv(out / "spectra.csv", p, r, rate)
    pgv_p, pgv_r = pgv(p), pgv(r)
    summary = {
        "n_samples": len(ids),
        "mae_mean": dict(zip("ENZ", maes.mean(axis=0).tolist())),
        "mae_median": dict(zip("ENZ", np.median(maes, axis=0).tolist())),
        "gof": report.summary(),
        "pgv_ratio_median": dict(zip("ENZ", np.nanmedian(
            pgv_p / np.where(pgv_r > 0, pgv_r, np.nan), axis=(0, 2, 3)).tolist())),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1))
    return CommandResult(out, len(ids), extra=summary)
