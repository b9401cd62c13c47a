"""Target-domain evaluation metrics, report files and the ablation harness.

Evaluation runs the model in deterministic mode (posterior-mean latents, no
dropout) and scores argmax predictions against the hidden target labels. The
classifier head spans every source class, so a prediction landing in an
outlier class counts as an error. Reports are pure functions of
(checkpoint, dataset) and serialize to a self-describing text format that
parses back exactly.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

import numpy as np

from .data import ScenarioDataset, as_train_view
from .engine import (
    VARIANT_NAMES,
    TrainConfig,
    TrainState,
    fit,
    variant_config,
)
from .networks import classify, latent_mean

REPORT_FORMAT_VERSION = 1


def config_hash(config: TrainConfig) -> str:
    return hashlib.sha256(config.to_json().encode()).hexdigest()[:16]


@dataclass(frozen=True)
class EvalReport:
    """Target-domain metrics for one trained model."""

    accuracy: float
    per_class_accuracy: np.ndarray  # over target classes
    confusion: np.ndarray  # (n_source_classes, n_target_classes), predicted x true
    class_weights: np.ndarray  # W snapshot at evaluation time
    n_targets: int
    seed: int
    config_hash: str


def compute_report(
    predictions,
    true_labels,
    n_source_classes: int,
    n_target_classes: int,
    class_weights,
    seed: int,
    cfg_hash: str,
) -> EvalReport:
    """Score predictions (over source classes) against target ground truth."""
    predictions = np.asarray(predictions, dtype=np.int64)
    true_labels = np.asarray(true_labels, dtype=np.int64)
    if predictions.shape != true_labels.shape:
        raise ValueError("predictions and labels differ in length")
    n = len(true_labels)
    confusion = np.zeros((n_source_classes, n_target_classes), dtype=np.int64)
    for pred, true in zip(predictions, true_labels):
        confusion[pred, true] += 1
    correct = np.trace(confusion[:n_target_classes, :n_target_classes])
    counts = confusion.sum(axis=0)
    per_class = np.array(
        [
            confusion[c, c] / counts[c] if counts[c] > 0 else 0.0
            for c in range(n_target_classes)
        ]
    )
    return EvalReport(
        accuracy=float(correct / n),
        per_class_accuracy=per_class,
        confusion=confusion,
        class_weights=np.asarray(class_weights, dtype=np.float64),
        n_targets=n,
        seed=seed,
        config_hash=cfg_hash,
    )


def evaluate(state: TrainState, ds: ScenarioDataset) -> EvalReport:
    """Evaluate a trained state on a dataset that carries hidden labels."""
    if not ds.has_eval_labels:
        raise ValueError("dataset has no hidden target labels; cannot evaluate")
    latents = latent_mean(state.params, state.net_config, ds.target_x)
    probs = classify(state.params, state.net_config, latents)
    predictions = np.argmax(probs, axis=1)
    return compute_report(
        predictions,
        ds.hidden_target_labels,
        ds.n_source_classes,
        ds.n_target_classes,
        state.labeling.class_weights,
        state.config.seed,
        config_hash(state.config),
    )


# ---------------------------------------------------------------------------
# report files: key-value header plus matrix blocks
# ---------------------------------------------------------------------------


def report_to_text(report: EvalReport) -> str:
    lines = [
        f"vipda-eval-report v{REPORT_FORMAT_VERSION}",
        f"config_hash: {report.config_hash}",
        f"seed: {report.seed}",
        f"n_targets: {report.n_targets}",
        f"accuracy: {report.accuracy!r}",
        "per_class_accuracy: "
        + ",".join(repr(float(v)) for v in report.per_class_accuracy),
        "class_weights: " + ",".join(repr(float(v)) for v in report.class_weights),
        f"confusion_shape: {report.confusion.shape[0]},{report.confusion.shape[1]}",
    ]
    for row in report.confusion:
        lines.append(" ".join(str(int(v)) for v in row))
    return "\n".join(lines) + "\n"


def report_from_text(text: str) -> EvalReport:
    lines = text.splitlines()
    if not lines or lines[0] != f"vipda-eval-report v{REPORT_FORMAT_VERSION}":
        raise ValueError("not a vipda evaluation report")
    fields = {}
    for line in lines[1:8]:
        key, _, value = line.partition(": ")
        fields[key] = value
    rows, cols = (int(v) for v in fields["confusion_shape"].split(","))
    confusion = np.array(
        [[int(v) for v in line.split()] for line in lines[8 : 8 + rows]],
        dtype=np.int64,
    )
    if confusion.shape != (rows, cols):
        raise ValueError("confusion matrix block does not match declared shape")
    return EvalReport(
        accuracy=float(fields["accuracy"]),
        per_class_accuracy=np.array(
            [float(v) for v in fields["per_class_accuracy"].split(",")]
        ),
        confusion=confusion,
        class_weights=np.array([float(v) for v in fields["class_weights"].split(",")]),
        n_targets=int(fields["n_targets"]),
        seed=int(fields["seed"]),
        config_hash=fields["config_hash"],
    )


# ---------------------------------------------------------------------------
# ablation harness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AblationResult:
    """Per-seed accuracies and medians for the four model variants."""

    seeds: tuple
    accuracies: dict  # variant name -> list of accuracies, one per seed
    medians: dict  # variant name -> median accuracy
    reports: dict  # (variant, seed) -> EvalReport

    def as_text(self) -> str:
        header = "variant," + ",".join(f"seed{s}" for s in self.seeds) + ",median"
        lines = [header]
        for name in VARIANT_NAMES:
            accs = ",".join(repr(float(a)) for a in self.accuracies[name])
            lines.append(f"{name},{accs},{self.medians[name]!r}")
        return "\n".join(lines) + "\n"


def run_ablation(
    base_config: TrainConfig,
    ds: ScenarioDataset,
    seeds,
    cdl_mode: str = "cda-only",
) -> AblationResult:
    """Train and evaluate {full, no_ast, no_adv, no_cdl} over a seed list."""
    if not ds.has_eval_labels:
        raise ValueError("ablation needs a dataset with hidden labels")
    seeds = tuple(int(s) for s in seeds)
    view = as_train_view(ds)
    accuracies = {name: [] for name in VARIANT_NAMES}
    reports = {}
    for name in VARIANT_NAMES:
        for seed in seeds:
            config = replace(variant_config(base_config, name, cdl_mode), seed=seed)
            state = fit(config, view)
            report = evaluate(state, ds)
            accuracies[name].append(report.accuracy)
            reports[(name, seed)] = report
    medians = {
        name: float(np.median(accuracies[name])) for name in VARIANT_NAMES
    }
    return AblationResult(
        seeds=seeds, accuracies=accuracies, medians=medians, reports=reports
    )
