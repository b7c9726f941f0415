"""Training, evaluation, periodic smoothing, reports and sweeps."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import slr as slr_mod
from .adjoint import loss_and_grad, regularizer_grad
from .config import TrainConfig
from .dataio import LabeledImageSet, encode_input, load_checkpoint, load_idx, resize_bilinear, save_checkpoint
from .optics import DonnModel, data_loss, forward, predict
from .optim import AdamState, adam_step, minibatches
from .roughness import RoughnessReport, intra_block_variance, mask_roughness, overall_roughness
from .smoothing import apply_offsets, gs_optimize

log = logging.getLogger(__name__)

MONITOR_SAMPLES = 1000
EVAL_CHUNK = 500


class DivergenceError(RuntimeError):
    pass


@dataclass
class Dataset:
    X: np.ndarray  # (N, n, n) real amplitudes, already power-scaled
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.y)


@dataclass
class RunReport:
    accuracy: float
    roughness_before: RoughnessReport
    roughness_after: Optional[RoughnessReport] = None
    loss_curve: list = field(default_factory=list)
    slr_trace: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    calls: list = field(default_factory=list)  # stages executed, in order

    def to_dict(self) -> dict:
        def rep(r):
            return None if r is None else {"per_layer": r.per_layer, "overall": r.overall, "mode": r.mode}

        return {
            "accuracy": self.accuracy,
            "roughness_before": rep(self.roughness_before),
            "roughness_after": rep(self.roughness_after),
            "loss_curve": self.loss_curve,
            "slr_trace": self.slr_trace,
            "calls": self.calls,
            "config": self.config,
        }


def prepare(data: LabeledImageSet, config: TrainConfig, limit: Optional[int]) -> Dataset:
    if limit is not None:
        data = data.subset(0, limit)
    amp = encode_input(resize_bilinear(data.images, config.n)).real
    return Dataset(amp * math.sqrt(config.input_power), data.labels)


def load_data(config: TrainConfig) -> tuple[Dataset, Dataset]:
    train = load_idx(config.train_images, config.train_labels)
    test = load_idx(config.test_images, config.test_labels)
    return prepare(train, config, config.train_limit), prepare(test, config, config.test_limit)


def evaluate(model: DonnModel, data: Dataset) -> float:
    """Fraction of samples whose argmax detector region matches the label."""
    if len(data) == 0:
        return math.nan
    return float(np.mean(predictions(model, data.X) == data.y))


def predictions(model: DonnModel, X: np.ndarray) -> np.ndarray:
    out = [predict(forward(model, X[i:i + EVAL_CHUNK])[1]) for i in range(0, len(X), EVAL_CHUNK)]
    return np.concatenate(out)


def mean_data_loss(model: DonnModel, data: Dataset) -> float:
    losses = [data_loss(forward(model, data.X[i:i + EVAL_CHUNK])[1], data.y[i:i + EVAL_CHUNK])
              for i in range(0, len(data), EVAL_CHUNK)]
    return float(np.mean(np.concatenate(losses)))


def objective_terms(model: DonnModel, data: Dataset, p: float, q: float, k: int, block: int) -> dict:
    d = mean_data_loss(model, data)
    rough = sum(mask_roughness(m, k) for m in model.masks)
    intra = sum(intra_block_variance(m, block) for m in model.masks)
    return {"data": d, "roughness": rough, "intra": intra, "total": d + p * rough + q * intra}


def fit(
    model: DonnModel,
    train: Dataset,
    epochs: int,
    lr: float,
    batch_size: int,
    rng: np.random.Generator,
    p: float = 0.0,
    q: float = 0.0,
    k: int = 8,
    block: int = 1,
    monitor: Optional[Dataset] = None,
    frozen: Optional[list] = None,
    wrap: bool = False,
) -> list:
    """Mini-batch Adam on data loss + p * sum R + q * sum R_intra; returns the loss curve."""
    adam = AdamState()
    curve = []
    for epoch in range(epochs):
        for idx in minibatches(len(train), batch_size, rng):
            loss, grads = loss_and_grad(model, train.X[idx], train.y[idx])
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite loss in epoch {epoch}")
            if p or q:
                grads = [g + r for g, r in zip(grads, regularizer_grad(model, p, q, k, block))]
            adam_step(model.phases(), grads, adam, lr, frozen, wrap)
        if monitor is not None:
            terms = objective_terms(model, monitor, p, q, k, block)
            if not math.isfinite(terms["total"]):
                raise DivergenceError(f"non-finite objective after epoch {epoch}")
            curve.append({"epoch": epoch, **terms})
            log.info("epoch %d loss %.6g (data %.6g)", epoch, terms["total"], terms["data"])
    return curve


def train(config: TrainConfig, out: Optional[Path] = None, data=None) -> tuple[DonnModel, RunReport]:
    """Run the configured ablation mode end to end.

    Modes B-D start from ``init_checkpoint`` when given, otherwise from a dense
    model trained in this run; SLR then sparsifies it.
    """
    train_set, test_set = data if data is not None else load_data(config)
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    k, b = config.neighbors, config.slr.block_size
    p, q = config.p_eff, config.q_eff
    monitor = Dataset(train_set.X[:MONITOR_SAMPLES], train_set.y[:MONITOR_SAMPLES])
    calls = []

    if config.uses_slr and config.init_checkpoint:
        model = load_checkpoint(config.init_checkpoint)
        if model.geometry != config.geometry():
            raise ValueError("init checkpoint geometry differs from the configuration")
        curve = []
        calls.append("load")
    else:
        model = DonnModel.init(config.geometry(), config.depth, np.random.default_rng(seeds[0]),
                               how=config.init, pad=config.pad)
        curve = fit(model, train_set, config.epochs, config.learning_rate, config.batch_size,
                    np.random.default_rng(seeds[1]), p, q, k, b, monitor, wrap=config.wrap_phase)
        calls.append("dense")

    trace = []
    if config.uses_slr:
        ft = config.slr.finetune_epochs
        if ft is None:
            ft = max(1, round(0.1 * config.epochs))
        model, state = slr_mod.slr_sparsify(
            model, train_set.X, train_set.y, config.slr, p, q, k, config.batch_size,
            np.random.default_rng(seeds[2]), finetune_epochs=ft, wrap=config.wrap_phase,
        )
        trace = state.history
        calls.append("slr")
        terms = objective_terms(model, monitor, p, q, k, b)
        curve.append({"epoch": len(curve), **terms})

    report = RunReport(
        accuracy=evaluate(model, test_set),
        roughness_before=overall_roughness(model, k),
        loss_curve=curve,
        slr_trace=trace,
        config=config.to_dict(),
        calls=calls,
    )
    if out is not None:
        write_run(model, report, config, Path(out))
    return model, report


def write_run(model: DonnModel, report: RunReport, config: TrainConfig, out: Path, name: str = "model") -> None:
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out / f"{name}.ckpt", config.digest(), {"mode": config.mode, "seed": config.seed})
    (out / f"{name}.report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    (out / f"{name}.roughness.csv").write_text(roughness_csv(model))
    if report.loss_curve:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(report.loss_curve[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(report.loss_curve)
        (out / f"{name}.loss.csv").write_text(buf.getvalue())
    if report.slr_trace:
        (out / f"{name}.slr_trace.csv").write_text(slr_mod.trace_csv(report.slr_trace))


def sparsify(model: DonnModel, train_set: Dataset, config: TrainConfig) -> tuple[DonnModel, list]:
    ft = config.slr.finetune_epochs
    if ft is None:
        ft = max(1, round(0.1 * config.epochs))
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(3)[2])
    sparse, state = slr_mod.slr_sparsify(
        model, train_set.X, train_set.y, config.slr, config.p_eff, config.q_eff, config.neighbors,
        config.batch_size, rng, finetune_epochs=ft, wrap=config.wrap_phase,
    )
    return sparse, state.history


@dataclass
class SmoothingResult:
    model: DonnModel
    before: RoughnessReport
    after: RoughnessReport
    bits: list

    @property
    def reduction(self) -> float:
        return 1.0 - self.after.overall / self.before.overall if self.before.overall else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "r_before", "r_after", "reduction_pct"])
        for i, (rb, ra) in enumerate(zip(self.before.per_layer, self.after.per_layer)):
            w.writerow([i, repr(rb), repr(ra), repr(100 * (1 - ra / rb) if rb else 0.0)])
        w.writerow(["overall", repr(self.before.overall), repr(self.after.overall), repr(100 * self.reduction)])
        return buf.getvalue()


def smooth_model(model: DonnModel, config: TrainConfig, check: Optional[np.ndarray] = None) -> SmoothingResult:
    """Optimise {0, 2pi} offsets layer by layer; predictions on ``check`` must not change."""
    k = config.neighbors
    streams = np.random.SeedSequence(config.seed).spawn(model.depth)
    smoothed = model.copy()
    bits = []
    for i, mask in enumerate(model.masks):
        b, _, _ = gs_optimize(mask, k, config.gs, np.random.default_rng(streams[i]))
        smoothed.masks[i] = apply_offsets(mask, b)
        bits.append(b)
    if check is not None and len(check):
        same = np.array_equal(predictions(model, check), predictions(smoothed, check))
        if not same:
            raise AssertionError("2pi smoothing changed a prediction")
    return SmoothingResult(smoothed, overall_roughness(model, k), overall_roughness(smoothed, k), bits)


def smooth2pi(ckpt_in, ckpt_out, config: TrainConfig, check: Optional[np.ndarray] = None) -> SmoothingResult:
    model = load_checkpoint(ckpt_in)
    result = smooth_model(model, config, check)
    save_checkpoint(result.model, ckpt_out, config.digest(), {"smoothed": True, "seed": config.seed})
    return result


def roughness_csv(model: DonnModel) -> str:
    return "".join(overall_roughness(model, k).to_csv() for k in (4, 8))


def roughness_report(ckpt) -> str:
    return roughness_csv(load_checkpoint(ckpt))


SWEEP_AXES = {"sparsity_ratio": "slr.sparsity_ratio", "p": "p", "q": "q"}


def sweep(config: TrainConfig, axis: str, values, out: Optional[Path] = None, data=None) -> str:
    """One full run per value with a shared seed; rows suit a Pareto plot."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"sweep axis must be one of {sorted(SWEEP_AXES)}")
    data = data if data is not None else load_data(config)
    rows = []
    for value in values:
        row = {"value": value, "accuracy": "", "r_before": "", "r_after": "", "error": ""}
        try:
            cfg = config.replace(**{SWEEP_AXES[axis]: value})
            model, report = train(cfg, None, data)
            smoothed = smooth_model(model, cfg, data[1].X[:200])
            row.update(accuracy=report.accuracy, r_before=report.roughness_before.overall,
                       r_after=smoothed.after.overall)
            if out is not None:
                write_run(model, report, cfg, Path(out), name=f"{axis}_{value}")
        except Exception as e:  # noqa: BLE001 - recorded per row, sweep continues
            row["error"] = f"{type(e).__name__}: {e}"
            log.warning("sweep %s=%s failed: %s", axis, value, e)
        rows.append(row)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["value", "accuracy", "r_before", "r_after", "error"], lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    text = buf.getvalue()
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / f"sweep_{axis}.csv").write_text(text)
    return text


ABLATION_PARENT = {"B": "baseline", "C": "A", "D": "A"}


def ablation(config: TrainConfig, out: Path, modes=("baseline", "A", "B", "C", "D"), p: float = 1e-6,
             q: float = 1e-5, data=None, check_samples: int = 500) -> list:
    """Run the ablation ladder with a shared seed; every model also gets 2pi smoothing.

    Mode B starts from the baseline checkpoint, C and D from the mode A
    checkpoint, whenever those were produced earlier in ``out``.
    """
    out = Path(out)
    data = data if data is not None else load_data(config)
    rows = []
    for mode in modes:
        cfg = config.replace(mode=mode, p=p if mode in "ACD" else 0.0, q=q if mode == "D" else 0.0)
        parent = out / f"{ABLATION_PARENT.get(mode)}.ckpt"
        if mode in ABLATION_PARENT and parent.exists():
            cfg = cfg.replace(init_checkpoint=str(parent))
        model, report = train(cfg, None, data)
        sm = smooth_model(model, cfg, data[1].X[:check_samples])
        report.roughness_after = sm.after
        write_run(model, report, cfg, out, name=mode)
        save_checkpoint(sm.model, out / f"{mode}_2pi.ckpt", cfg.digest(), {"mode": mode, "smoothed": True})
        rows.append({"mode": mode, "accuracy": report.accuracy, "r_before": sm.before.overall,
                     "r_after": sm.after.overall})
        log.info("%s acc=%.4f R_before=%.2f R_after=%.2f", mode, report.accuracy, sm.before.overall,
                 sm.after.overall)
    (out / "ablation.json").write_text(json.dumps(rows, indent=2))
    return rows

