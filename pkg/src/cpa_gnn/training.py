"""Cross-validated training and the paired comparison of aggregation variants."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from . import VARIANTS
from .aggregators import Neighborhoods
from .autodiff import Adam, Tape, Tensor, backward, ops
from .graphs import Dataset, disjoint_union, one_hot_ids
from .models import GatGcModel, GatNodeModel, GraphBatch

TASK_DEFAULTS = {
    "node": {"epochs": 1000, "lr_drop_every": 400, "layers": 2},
    "graph": {"epochs": 300, "lr_drop_every": 50, "layers": 4},
}


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` lists every offending key."""

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class StratificationError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    task: str = "graph"
    variant: str = "original"
    folds: int = 10
    repeats: int = 10
    epochs: int | None = None
    lr: float = 0.01
    lr_drop_every: int | None = None
    lr_drop_factor: float = 0.5
    batch_size: int = 32
    dropout: float = 0.0
    weight_decay: float = 0.0
    hidden: int = 32
    layers: int | None = None
    heads: int = 1
    readout: str = "sum"
    batch_norm: bool = True
    activation: str = "relu"
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        problems = []
        if self.task not in TASK_DEFAULTS:
            problems.append(f"task: expected 'node' or 'graph', got {self.task!r}")
        else:
            for key, value in TASK_DEFAULTS[self.task].items():
                if getattr(self, key) is None:
                    object.__setattr__(self, key, value)
        if self.variant not in VARIANTS:
            problems.append(f"variant: expected one of {list(VARIANTS)}, got {self.variant!r}")
        if not isinstance(self.folds, int) or self.folds < 2:
            problems.append(f"folds: must be an integer >= 2, got {self.folds!r}")
        for key in ("repeats", "epochs", "lr_drop_every", "batch_size", "hidden", "layers",
                    "heads", "jobs"):
            value = getattr(self, key)
            if value is not None and (not isinstance(value, int) or isinstance(value, bool) or value < 1):
                problems.append(f"{key}: must be a positive integer, got {value!r}")
        for key in ("lr", "lr_drop_factor", "weight_decay", "dropout"):
            value = getattr(self, key)
            if not isinstance(value, (int, float)) or isinstance(value, bool) or value < 0:
                problems.append(f"{key}: must be a non-negative number, got {value!r}")
        if isinstance(self.dropout, (int, float)) and self.dropout >= 1:
            problems.append(f"dropout: must be < 1, got {self.dropout!r}")
        if self.readout not in ("sum", "mean"):
            problems.append(f"readout: expected 'sum' or 'mean', got {self.readout!r}")
        if self.activation not in ("relu", "identity"):
            problems.append(f"activation: expected 'relu' or 'identity', got {self.activation!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            problems.append(f"seed: must be a non-negative integer, got {self.seed!r}")
        if problems:
            raise ConfigError(problems)

    @classmethod
    def from_dict(cls, data: Mapping) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        problems = [f"{key}: unknown key" for key in sorted(set(data) - known)]
        try:
            config = cls(**{k: v for k, v in data.items() if k in known})
        except ConfigError as exc:
            problems.extend(exc.problems)
        if problems:
            raise ConfigError(problems)
        return config

    def to_dict(self) -> dict:
        return asdict(self)


def lr_schedule(epoch: int, config: TrainConfig) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return config.lr * config.lr_drop_factor ** (epoch // config.lr_drop_every)


# -- folds ---------------------------------------------------------------------

def stratified_folds(labels: np.ndarray, folds: int, rng: np.random.Generator) -> np.ndarray:
    """Fold id per instance; each class is dealt round-robin after shuffling.

    Every fold receives ``floor`` or ``ceil`` of ``count / folds`` instances of
    each class.  The dealing offset carries over between classes so fold sizes
    also differ by at most one.
    """
    labels = np.asarray(labels)
    assignment = np.empty(labels.shape[0], dtype=np.int64)
    offset = 0
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if idx.size < folds:
            raise StratificationError(
                f"class {int(cls)} has {idx.size} instances, fewer than {folds} folds"
            )
        idx = rng.permutation(idx)
        assignment[idx] = (np.arange(idx.size) + offset) % folds
        offset = (offset + idx.size) % folds
    return assignment


# -- results -------------------------------------------------------------------

@dataclass
class RunResult:
    config: dict
    train_curves: np.ndarray        # (repeats, folds, epochs)
    val_curves: np.ndarray          # (repeats, folds, epochs)
    selected_epochs: list[int]      # one per repeat
    fold_accuracies: np.ndarray     # (repeats, folds), at the selected epoch
    split_digest: str
    dataset: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return float(self.fold_accuracies.mean())

    @property
    def std(self) -> float:
        return float(self.fold_accuracies.std())

    @property
    def variant(self) -> str:
        return self.config["variant"]

    def train_plateau(self, last: int = 20) -> float:
        """Mean training accuracy over the final ``last`` epochs, all folds."""
        return float(self.train_curves[:, :, -last:].mean())

    def to_dict(self) -> dict:
        per_fold = [
            {"repeat": r, "fold": f, "accuracy": float(self.fold_accuracies[r, f]),
             "selected_epoch": int(self.selected_epochs[r])}
            for r in range(self.fold_accuracies.shape[0])
            for f in range(self.fold_accuracies.shape[1])
        ]
        return {
            "config": self.config,
            "dataset": self.dataset,
            "split_digest": self.split_digest,
            "selected_epochs": [int(e) for e in self.selected_epochs],
            "per_fold": per_fold,
            "mean": self.mean,
            "std": self.std,
            "train_plateau": self.train_plateau(min(20, self.train_curves.shape[2])),
            **self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write_curves_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["repeat", "fold", "epoch", "train_accuracy", "val_accuracy"])
            R, F, E = self.train_curves.shape
            for r in range(R):
                for f in range(F):
                    for e in range(E):
                        writer.writerow([r, f, e, repr(float(self.train_curves[r, f, e])),
                                         repr(float(self.val_curves[r, f, e]))])


# -- per-fold training -----------------------------------------------------------

def _accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(logits.argmax(axis=1) == labels))


def _train_node_fold(dataset: Dataset, config: TrainConfig, train_idx, val_idx,
                     model_seed: int) -> tuple[np.ndarray, np.ndarray]:
    graph = dataset.graphs[0] if len(dataset.graphs) == 1 else disjoint_union(dataset.graphs)
    labels = np.asarray(graph.node_labels)
    nb = Neighborhoods.from_graph(graph)
    x = Tensor(one_hot_ids(graph.node_feature_ids, dataset.num_feature_categories))
    model = GatNodeModel(dataset.num_feature_categories, dataset.num_classes, config.variant,
                         hidden=config.hidden, layers=config.layers, heads=config.heads,
                         seed=model_seed, activation=config.activation)
    opt = Adam(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    train_acc = np.empty(config.epochs)
    val_acc = np.empty(config.epochs)
    y_train = labels[train_idx]
    for epoch in range(config.epochs):
        # One forward serves the update and the bookkeeping: the accuracies
        # describe the parameters at the start of the epoch.
        with Tape():
            logits = model(x, nb)
            loss = ops.cross_entropy(ops.gather_rows(logits, train_idx), y_train)
            backward(loss)
        train_acc[epoch] = _accuracy(logits.data[train_idx], y_train)
        val_acc[epoch] = _accuracy(logits.data[val_idx], labels[val_idx])
        opt.step(lr_schedule(epoch, config))
    return train_acc, val_acc


def _train_graph_fold(dataset: Dataset, config: TrainConfig, train_idx, val_idx,
                      model_seed: int, shuffle_seed: int) -> tuple[np.ndarray, np.ndarray]:
    graphs = dataset.graphs
    labels = dataset.graph_labels
    C = dataset.num_feature_categories
    model = GatGcModel(C, dataset.num_classes, config.variant, hidden=config.hidden,
                       layers=config.layers, readout=config.readout, dropout=config.dropout,
                       heads=config.heads, seed=model_seed, batch_norm=config.batch_norm,
                       activation=config.activation)
    opt = Adam(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    rng = np.random.default_rng(shuffle_seed)
    train_batch = GraphBatch.from_graphs([graphs[i] for i in train_idx], C)
    val_batch = GraphBatch.from_graphs([graphs[i] for i in val_idx], C)
    train_acc = np.empty(config.epochs)
    val_acc = np.empty(config.epochs)
    for epoch in range(config.epochs):
        lr = lr_schedule(epoch, config)
        order = rng.permutation(train_idx)
        for start in range(0, order.size, config.batch_size):
            chunk = order[start:start + config.batch_size]
            if chunk.size < 2 and model.norms:
                continue  # batch statistics of a single graph are degenerate
            batch = GraphBatch.from_graphs([graphs[i] for i in chunk], C)
            with Tape():
                loss = ops.cross_entropy(model(batch, training=True, rng=rng), labels[chunk])
                backward(loss)
            opt.step(lr)
        train_acc[epoch] = _accuracy(model(train_batch).data, labels[train_idx])
        val_acc[epoch] = _accuracy(model(val_batch).data, labels[val_idx])
    return train_acc, val_acc


def _run_fold(args) -> tuple[np.ndarray, np.ndarray]:
    dataset, config, train_idx, val_idx, model_seed, shuffle_seed = args
    if config.task == "node":
        return _train_node_fold(dataset, config, train_idx, val_idx, model_seed)
    return _train_graph_fold(dataset, config, train_idx, val_idx, model_seed, shuffle_seed)


def _instance_labels(dataset: Dataset) -> np.ndarray:
    if dataset.task == "graph":
        return dataset.graph_labels
    return np.concatenate([np.asarray(g.node_labels) for g in dataset.graphs])


def make_splits(dataset: Dataset, config: TrainConfig) -> list[np.ndarray]:
    """Fold assignment per repeat.  Depends only on the data, seed and fold count."""
    labels = _instance_labels(dataset)
    seqs = np.random.SeedSequence(config.seed).spawn(config.repeats)
    return [stratified_folds(labels, config.folds, np.random.default_rng(s.spawn(1)[0]))
            for s in seqs]


def _split_digest(splits: Sequence[np.ndarray]) -> str:
    h = hashlib.sha256()
    for s in splits:
        h.update(np.ascontiguousarray(s, dtype=np.int64).tobytes())
    return h.hexdigest()[:16]


def run_cv(dataset: Dataset, config: TrainConfig) -> RunResult:
    """Repeated stratified k-fold cross-validation.

    The held-out fold doubles as validation and test set.  Per repeat, the
    reported epoch maximises the validation accuracy averaged over folds,
    and every fold is scored at that epoch.  Splits and initial weights
    depend on ``(seed, repeat, fold)`` only, so runs of different variants
    with one seed are paired fold by fold.
    """
    if dataset.task != config.task:
        raise ValueError(f"dataset task {dataset.task!r} does not match config task {config.task!r}")
    splits = make_splits(dataset, config)
    jobs = []
    for r, seq in enumerate(np.random.SeedSequence(config.seed).spawn(config.repeats)):
        fold_seqs = seq.spawn(1 + config.folds)[1:]
        for f in range(config.folds):
            model_seed, shuffle_seed = (int(v) for v in fold_seqs[f].generate_state(2))
            train_idx = np.flatnonzero(splits[r] != f)
            val_idx = np.flatnonzero(splits[r] == f)
            jobs.append((dataset, config, train_idx, val_idx, model_seed, shuffle_seed))

    if config.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            outputs = list(pool.map(_run_fold, jobs))
    else:
        outputs = [_run_fold(job) for job in jobs]

    R, F, E = config.repeats, config.folds, config.epochs
    train = np.array([o[0] for o in outputs]).reshape(R, F, E)
    val = np.array([o[1] for o in outputs]).reshape(R, F, E)
    selected = [int(np.argmax(val[r].mean(axis=0))) for r in range(R)]
    acc = np.array([[val[r, f, selected[r]] for f in range(F)] for r in range(R)])
    # Worker count does not affect results, so it stays out of the record.
    recorded = {k: v for k, v in config.to_dict().items() if k != "jobs"}
    return RunResult(recorded, train, val, selected, acc, _split_digest(splits), dataset.name)


# -- comparison ----------------------------------------------------------------

def paired_ttest(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Two-sided paired t-test of ``b`` against ``a``; returns (t, p).

    Zero-variance differences are resolved directly: no difference gives
    ``(0, 1)``, a constant non-zero shift ``(+-inf, 0)``.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"paired samples differ in size: {a.size} vs {b.size}")
    d = b - a
    if d.size < 2:
        raise ValueError("paired t-test needs at least two pairs")
    if np.allclose(d, d[0], rtol=0.0, atol=1e-12):
        if abs(d[0]) <= 1e-12:
            return 0.0, 1.0
        return math.copysign(math.inf, d[0]), 0.0
    res = stats.ttest_rel(b, a)
    return float(res.statistic), float(res.pvalue)


@dataclass
class Summary:
    rows: list[dict]
    alpha: float = 0.05

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "rows": self.rows}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        header = ["variant", "accuracy", "diff", "p-value", "significant"]
        lines = []
        for row in self.rows:
            diff = "" if row["diff"] is None else f"{100 * row['diff']:+.2f}"
            p = "" if row["p_value"] is None else f"{row['p_value']:.4f}"
            lines.append([row["variant"], f"{100 * row['mean']:.2f} ± {100 * row['std']:.2f}",
                          diff, p, "*" if row["bold"] else ""])
        widths = [max(len(header[i]), *(len(line[i]) for line in lines)) for i in range(len(header))]
        fmt = lambda cells: "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
        return "\n".join([fmt(header), fmt(["-" * w for w in widths])] + [fmt(line) for line in lines])


def summarize(results: Mapping[str, RunResult] | Sequence[RunResult], alpha: float = 0.05,
              baseline: str = "original") -> Summary:
    """Per-variant mean and std plus a paired t-test of each variant against the baseline.

    A variant is flagged (``bold``) when its accuracy is higher than the
    baseline's and the difference is significant at ``alpha``.
    """
    if not isinstance(results, Mapping):
        results = {r.variant: r for r in results}
    if baseline not in results:
        raise ValueError(f"summary needs a {baseline!r} result to compare against")
    base = results[baseline]
    rows = []
    for name in sorted(results, key=lambda v: (VARIANTS.index(v) if v in VARIANTS else len(VARIANTS), v)):
        res = results[name]
        if res.fold_accuracies.shape != base.fold_accuracies.shape:
            raise ValueError(
                f"{name}: fold structure {res.fold_accuracies.shape} differs from "
                f"{baseline}'s {base.fold_accuracies.shape}"
            )
        if res.split_digest != base.split_digest:
            raise ValueError(f"{name}: folds are not paired with {baseline} (different splits)")
        row = {"variant": name, "mean": res.mean, "std": res.std,
               "diff": None, "t": None, "p_value": None, "bold": False}
        if name != baseline:
            t, p = paired_ttest(base.fold_accuracies, res.fold_accuracies)
            diff = res.mean - base.mean
            row.update(diff=diff, t=t if math.isfinite(t) else (None if t != t else str(t)),
                       p_value=p, bold=bool(diff > 0 and p < alpha))
        rows.append(row)
    return Summary(rows, alpha)


def write_results(out_dir: str | Path, results: Mapping[str, RunResult]) -> list[Path]:
    """Write one JSON and one curve CSV per variant plus the comparison."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, res in results.items():
        p = out / f"{name}.json"
        p.write_text(res.to_json() + "\n")
        c = out / f"{name}_curves.csv"
        res.write_curves_csv(c)
        written += [p, c]
    if "original" in results and len(results) > 1:
        summary = summarize(results)
        p = out / "summary.json"
        p.write_text(summary.to_json() + "\n")
        t = out / "summary.txt"
        t.write_text(summary.to_text() + "\n")
        written += [p, t]
    return written
