"""Evaluation harness: test-split inference, the front-task agreement
rule, the ablation grid, the point-count sweep, and report emission
(JSON, flat CSV, and simple SVG plots)."""

import json
from pathlib import Path

import numpy as np

from .datasets import TaskDataset, stable_hash
from .errors import ConfigError, DataError
from .metrics import EvalReport, agreement_predict, build_report
from .network import (OMISSIONS, Model, NetworkSpec, apply_omission,
                      build_network, default_spec, forward)
from .rng import derive_rng, make_rng
from .training import TrainParams, train


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def predict(model: Model, dataset: TaskDataset, indices, seed: int = 0):
    """Eval-mode inference; each instance gets its own derived shuffle
    stream so results do not depend on evaluation order."""
    records = []
    for i in indices:
        inst = dataset.instances[int(i)]
        cloud = dataset.load(int(i))
        rng = derive_rng(seed, 101, stable_hash(inst.uid))
        logits = forward(model, cloud, mode="eval", rng=rng).data.ravel()
        probs = softmax(logits)
        records.append({
            "uid": inst.uid,
            "tablet_id": inst.tablet_id,
            "truth": int(inst.label),
            "pred": int(np.argmax(logits)),
            "scores": [float(p) for p in probs],
        })
    return records


def evaluate(model: Model, dataset: TaskDataset, seed: int = 0,
             indices=None) -> EvalReport:
    """Standard evaluation over the test split (or explicit indices)."""
    if indices is None:
        indices = dataset.test_indices
    if len(indices) == 0:
        raise DataError("nothing to evaluate")
    records = predict(model, dataset, indices, seed)
    preds = [r["pred"] for r in records]
    truth = [r["truth"] for r in records]
    scores = [r["scores"][1] for r in records] if dataset.num_classes == 2 else None
    report = build_report(dataset.task, preds, truth, dataset.num_classes,
                          scores=scores, records=records)
    if dataset.task.endswith("front"):
        _attach_agreement(report, records)
    return report


def _attach_agreement(report: EvalReport, records):
    """Pair each tablet's two views and apply the agreement rule."""
    by_tablet = {}
    for r in records:
        side = "back" if r["uid"].endswith(":back") else "front"
        by_tablet.setdefault(r["tablet_id"], {})[side] = r
    emitted = 0
    correct = 0
    total = 0
    decisions = []
    for tablet_id, views in sorted(by_tablet.items()):
        if "front" not in views or "back" not in views:
            continue
        total += 1
        a = np.array(views["front"]["scores"])
        b = np.array(views["back"]["scores"])
        decision = agreement_predict(a, b)
        decisions.append({"tablet_id": tablet_id,
                          "decision": decision,
                          "front_scores": views["front"]["scores"],
                          "back_scores": views["back"]["scores"]})
        if decision is not None:
            emitted += 1
            if decision == views["front"]["truth"]:
                correct += 1
    if total:
        report.coverage = emitted / total
        report.agreement_precision = (correct / emitted) if emitted else 0.0
        report.extra["agreement_decisions"] = decisions


def train_and_evaluate(spec: NetworkSpec, params: TrainParams, dataset: TaskDataset,
                       seed: int) -> tuple[Model, EvalReport]:
    model = build_network(spec, make_rng(seed))
    model, _ = train(model, dataset, params)
    return model, evaluate(model, dataset, seed=seed)


def ablation_run(spec: NetworkSpec, params: TrainParams, dataset: TaskDataset,
                 omit: str, seed: int = 0) -> EvalReport:
    """Train and evaluate one ablation variant. The same seed and training
    parameters as the base run isolate the omitted component."""
    variant_spec = apply_omission(spec, omit)
    _, report = train_and_evaluate(variant_spec, params, dataset, seed)
    report.extra["omit"] = omit
    report.extra["spec"] = variant_spec.to_dict()
    return report


def ablation_grid(spec: NetworkSpec, params: TrainParams, dataset: TaskDataset,
                  seed: int = 0, omissions=OMISSIONS):
    return {omit: ablation_run(spec, params, dataset, omit, seed) for omit in omissions}


def point_sweep(sizes, dataset_factory, params: TrainParams, num_classes: int,
                seed: int = 0):
    """Train and evaluate the standard pyramid at several input sizes.

    Each size must be divisible by 2^depth so the halving chain stays
    integral; neighbor counts are held fixed across sizes.
    """
    reports = {}
    for size in sizes:
        try:
            spec = default_spec(num_classes, input_points=int(size))
        except ConfigError as exc:
            raise ConfigError(f"sweep size {size} is incompatible: {exc}")
        dataset = dataset_factory(int(size))
        _, report = train_and_evaluate(spec, params, dataset, seed)
        report.extra["input_points"] = int(size)
        report.extra["spec"] = spec.to_dict()
        reports[int(size)] = report
    return reports


# ---------------------------------------------------------------- reports

CSV_FIELDS = ("task", "variant", "seed", "macro_f1", "ap", "accuracy", "coverage", "precision")


def report_row(report: EvalReport, variant: str, seed: int) -> dict:
    return {
        "task": report.task,
        "variant": variant,
        "seed": seed,
        "macro_f1": report.macro_f1,
        "ap": report.average_precision,
        "accuracy": report.accuracy,
        "coverage": report.coverage,
        "precision": report.agreement_precision,
    }


def rows_to_csv(rows) -> str:
    lines = [",".join(CSV_FIELDS)]
    for row in rows:
        lines.append(",".join("" if row.get(k) is None else str(row.get(k))
                              for k in CSV_FIELDS))
    return "\n".join(lines) + "\n"


def write_report(report: EvalReport, out_dir, name: str, variant: str = "base",
                 seed: int = 0):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{name}.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    (out / f"{name}.csv").write_text(rows_to_csv([report_row(report, variant, seed)]))


# ------------------------------------------------------------------ plots

def _svg_document(width, height, body) -> str:
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}">\n'
            f'<rect width="{width}" height="{height}" fill="white"/>\n'
            + body + "</svg>\n")


def render_pr_curve(scores, truth, path, width=480, height=360):
    """Precision-recall curve over descending-score thresholds."""
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth)
    order = np.argsort(-scores, kind="stable")
    t = truth[order]
    tp = np.cumsum(t == 1)
    fp = np.cumsum(t != 1)
    n_pos = max(int((truth == 1).sum()), 1)
    recall = tp / n_pos
    precision = tp / np.maximum(tp + fp, 1)
    pad = 40
    pts = []
    for r, p in zip(recall, precision):
        x = pad + r * (width - 2 * pad)
        y = height - pad - p * (height - 2 * pad)
        pts.append(f"{x:.1f},{y:.1f}")
    body = (
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>\n'
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>\n'
        f'<polyline points="{" ".join(pts)}" fill="none" stroke="steelblue" stroke-width="2"/>\n'
        f'<text x="{width / 2}" y="{height - 8}" text-anchor="middle" font-size="12">recall</text>\n'
        f'<text x="12" y="{height / 2}" font-size="12" transform="rotate(-90 12 {height / 2})" '
        f'text-anchor="middle">precision</text>\n'
    )
    Path(path).write_text(_svg_document(width, height, body))


def render_bars(labels, values, path, width=480, height=360, title=""):
    """Bar chart (ablation rows, sweep scores)."""
    pad = 48
    n = max(len(labels), 1)
    span = (width - 2 * pad) / n
    vmax = max(max(values, default=1.0), 1e-9)
    body = ""
    if title:
        body += f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="13">{title}</text>\n'
    for i, (label, value) in enumerate(zip(labels, values)):
        h = (value / vmax) * (height - 2 * pad)
        x = pad + i * span + span * 0.15
        y = height - pad - h
        body += f'<rect x="{x:.1f}" y="{y:.1f}" width="{span * 0.7:.1f}" height="{h:.1f}" fill="steelblue"/>\n'
        body += (f'<text x="{x + span * 0.35:.1f}" y="{height - pad + 14}" text-anchor="middle" '
                 f'font-size="10">{label}</text>\n')
        body += (f'<text x="{x + span * 0.35:.1f}" y="{y - 4:.1f}" text-anchor="middle" '
                 f'font-size="10">{value:.3f}</text>\n')
    body += f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>\n'
    Path(path).write_text(_svg_document(width, height, body))
