"""Cross-product benchmark runner: methods x gamma sweep x metrics, P/L modes.

P mode seeds attributions from the classes the model predicts (top-1 for
single-label samples, softmax >= 0.5 for multi-label ones); L mode seeds
from every ground-truth label. Mask metrics (pointing game, outside-inside)
are recorded only for targets that carry an annotation, so unannotated
P-mode predictions contribute positive-ratio records but no mask records.
Per-sample work is independent and collected in submission order, which
keeps results byte-identical for any worker count.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from hedgegrad.attribution import BASELINE_METHODS, HedgeConfig, attribute, attribute_baseline
from hedgegrad.data import load_dataset
from hedgegrad.errors import ManifestError, StorageError, ValidationError
from hedgegrad.metrics import (
    morf_insertion_curve,
    outside_inside_ratio,
    pointing_game,
    positive_ratio,
)
from hedgegrad.model import forward_model, load_model, normalize_input

METHODS = ("hedge", "random") + BASELINE_METHODS
METRICS = ("pointing_game", "positive_ratio", "outside_inside", "morf")
MODES = ("P", "L")

# Component combinations of the hedging rule exercised by the ablation sweep,
# gamma pinned to 2 so the relevance total stays balanced without the shift.
ABLATION_ROWS = (
    ("C", {"C": True, "A": False, "U": False, "Psi": False}),
    ("C+Psi", {"C": True, "A": False, "U": False, "Psi": True}),
    ("A+U", {"C": False, "A": True, "U": True, "Psi": False}),
    ("C+A+U", {"C": True, "A": True, "U": True, "Psi": False}),
    ("C+A+U+Psi", {"C": True, "A": True, "U": True, "Psi": True}),
)


@dataclass(frozen=True)
class EvalRecord:
    """One metric aggregated over a method variant's per-target values."""

    method: str
    metric: str
    mode: str
    values: tuple
    gamma: float | None = None
    toggles: dict | None = None

    def __post_init__(self):
        if not self.values:
            raise ValidationError("a record needs at least one value")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    @property
    def aggregate(self) -> float:
        return float(np.mean(self.values))

    @property
    def count(self) -> int:
        return len(self.values)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "metric": self.metric,
            "mode": self.mode,
            "gamma": self.gamma,
            "toggles": self.toggles,
            "aggregate": self.aggregate,
            "count": self.count,
            "values": list(self.values),
        }


@dataclass(frozen=True)
class BenchmarkConfig:
    """Everything a benchmark run needs; JSON-loadable for the CLI."""

    model_path: str
    dataset_path: str
    methods: tuple = ("hedge",)
    metrics: tuple = ("pointing_game", "positive_ratio")
    gammas: tuple = (1.0,)
    toggles: dict | None = None
    mode: str = "L"
    alpha: float = 2.0
    beta: float = 1.0
    epsilon: float = 1e-9
    tolerance_radius: int = 0
    morf_steps: int = 20
    blur_sigma: float = 10.0
    jobs: int = 1
    seed: int = 0
    limit: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "metrics", tuple(self.metrics))
        object.__setattr__(self, "gammas", tuple(float(g) for g in self.gammas))
        for m in self.methods:
            if m not in METHODS:
                raise ValidationError(f"config.methods: unknown method '{m}'")
        for m in self.metrics:
            if m not in METRICS:
                raise ValidationError(f"config.metrics: unknown metric '{m}'")
        if self.mode not in MODES:
            raise ValidationError(f"config.mode: must be one of {MODES}, got '{self.mode}'")
        for g in self.gammas:
            if not 1.0 <= g <= 2.0:
                raise ValidationError(f"config.gammas: {g} outside [1, 2]")
        if self.jobs < 1:
            raise ValidationError("config.jobs: must be at least 1")
        if self.limit is not None and self.limit < 1:
            raise ValidationError("config.limit: must be at least 1")
        if self.toggles is not None:
            extra = set(self.toggles) - {"C", "A", "U", "Psi"}
            if extra:
                raise ValidationError(f"config.toggles: unknown keys {sorted(extra)}")

    @classmethod
    def from_json(cls, path) -> "BenchmarkConfig":
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise StorageError(f"cannot read benchmark config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ManifestError(f"benchmark config is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ValidationError("config: top level must be a JSON object")
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"config: unknown fields {sorted(unknown)}")
        for required in ("model_path", "dataset_path"):
            if required not in doc:
                raise ValidationError(f"config.{required}: required field missing")
        for key in ("methods", "metrics", "gammas"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return cls(**doc)

    def hedge_config(self, gamma: float) -> HedgeConfig:
        toggles = self.toggles or {}
        return HedgeConfig(
            gamma=gamma,
            epsilon=self.epsilon,
            enable_C=toggles.get("C", True),
            enable_A=toggles.get("A", True),
            enable_U=toggles.get("U", True),
            enable_Psi=toggles.get("Psi", True),
        )


def _softmax(logits):
    z = logits.astype(np.float64) - logits.max()
    e = np.exp(z)
    return e / e.sum()


def predict_targets(model, sample) -> tuple:
    """Classes the model asserts for the sample: top-1 for single-label
    samples, softmax >= 0.5 (falling back to top-1) for multi-label ones."""
    logits = forward_model(model, normalize_input(model, sample.image))[0]
    if len(sample.labels) <= 1:
        return (int(np.argmax(logits)),)
    probs = _softmax(logits)
    picked = tuple(int(c) for c in np.nonzero(probs >= 0.5)[0])
    return picked or (int(np.argmax(logits)),)


def _variants(config: BenchmarkConfig):
    for method in config.methods:
        if method == "hedge":
            for gamma in config.gammas:
                yield (method, gamma)
        else:
            yield (method, None)


def _map_for_target(model, x, target, method, gamma, config, sample_index):
    if method == "hedge":
        return attribute(model, x, target, config=config.hedge_config(gamma)).map2d
    if method == "random":
        rng = np.random.default_rng([config.seed, sample_index, target])
        return rng.standard_normal(x.shape[2:])
    return attribute_baseline(
        model, x, target, method,
        alpha=config.alpha, beta=config.beta, epsilon=config.epsilon,
    ).map2d


def _sample_maps(model, sample, sample_index, method, gamma, config):
    """Maps for every mode-selected target of one sample."""
    if config.mode == "L":
        targets = tuple(sample.labels)
    else:
        targets = predict_targets(model, sample)
    x = normalize_input(model, sample.image)[None]
    out = []
    for target in targets:
        map2d = _map_for_target(model, x, target, method, gamma, config, sample_index)
        out.append((target, map2d))
    return out


def run_benchmark(config: BenchmarkConfig) -> list:
    """Run the configured cross product; returns EvalRecords in a stable
    order (method variants outermost, metrics innermost)."""
    model = load_model(config.model_path)
    samples, _ = load_dataset(config.dataset_path)
    if config.limit is not None:
        samples = samples[: config.limit]
    if not samples:
        raise ValidationError("benchmark dataset is empty")

    records = []
    for method, gamma in _variants(config):
        def work(item):
            index, sample = item
            return _sample_maps(model, sample, index, method, gamma, config)

        if config.jobs > 1:
            with ThreadPoolExecutor(max_workers=config.jobs) as pool:
                per_sample = list(pool.map(work, enumerate(samples)))
        else:
            per_sample = [work(item) for item in enumerate(samples)]

        echo = {
            "gamma": gamma,
            "toggles": None if method != "hedge" else (config.toggles or None),
        }
        for metric in config.metrics:
            values = []
            if metric == "morf":
                first_maps = [maps[0][1] for maps in per_sample]
                curve = morf_insertion_curve(
                    model, samples, first_maps,
                    steps=config.morf_steps, blur_sigma=config.blur_sigma,
                )
                values = list(curve)
            else:
                for sample, maps in zip(samples, per_sample):
                    for target, map2d in maps:
                        if metric == "positive_ratio":
                            values.append(positive_ratio(map2d))
                            continue
                        if target not in sample.labels:
                            continue
                        mask = sample.masks[sample.labels.index(target)]
                        if metric == "pointing_game":
                            values.append(
                                float(pointing_game(map2d, mask, config.tolerance_radius))
                            )
                        else:
                            values.append(outside_inside_ratio(map2d, mask))
            if values:
                records.append(
                    EvalRecord(
                        method=method,
                        metric=metric,
                        mode=config.mode,
                        values=tuple(values),
                        gamma=echo["gamma"],
                        toggles=echo["toggles"],
                    )
                )
    return records


def ablation_maps(model, samples, gamma=2.0):
    """Attribution maps for each component row of the ablation sweep, seeded
    from every sample's first label. Yields (row name, toggles, maps)."""
    for name, toggles in ABLATION_ROWS:
        cfg = HedgeConfig(
            gamma=gamma,
            enable_C=toggles["C"],
            enable_A=toggles["A"],
            enable_U=toggles["U"],
            enable_Psi=toggles["Psi"],
        )
        maps = []
        for sample in samples:
            x = normalize_input(model, sample.image)[None]
            maps.append(attribute(model, x, sample.labels[0], config=cfg).map2d)
        yield name, toggles, maps


def write_results(records, out_dir, config: BenchmarkConfig | None = None):
    """Emit results.json (full records) and results.csv (one row per value).

    For the morf metric the CSV's sample column holds the insertion step
    and the target column is -1; other metrics index samples' targets in
    evaluation order.
    """
    os.makedirs(out_dir, exist_ok=True)
    json_path = os.path.join(out_dir, "results.json")
    csv_path = os.path.join(out_dir, "results.csv")
    doc = {"records": [r.to_dict() for r in records]}
    if config is not None:
        doc["config"] = {
            "model_path": config.model_path,
            "dataset_path": config.dataset_path,
            "methods": list(config.methods),
            "metrics": list(config.metrics),
            "gammas": list(config.gammas),
            "toggles": config.toggles,
            "mode": config.mode,
            "morf_steps": config.morf_steps,
            "blur_sigma": config.blur_sigma,
            "tolerance_radius": config.tolerance_radius,
            "seed": config.seed,
            "limit": config.limit,
        }
    with open(json_path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "gamma", "mode", "metric", "row", "value"])
        for record in records:
            gamma = "" if record.gamma is None else repr(record.gamma)
            for row_index, value in enumerate(record.values):
                writer.writerow(
                    [record.method, gamma, record.mode, record.metric, row_index, repr(value)]
                )
    return json_path, csv_path


def format_table(records) -> str:
    """Aggregate table for stdout: one line per record."""
    lines = [f"{'method':<16} {'gamma':>5} {'mode':>4} {'metric':<16} {'n':>5} {'mean':>10}"]
    for r in records:
        gamma = "-" if r.gamma is None else f"{r.gamma:.2f}"
        lines.append(
            f"{r.method:<16} {gamma:>5} {r.mode:>4} {r.metric:<16} {r.count:>5} {r.aggregate:>10.4f}"
        )
    return "\n".join(lines)
