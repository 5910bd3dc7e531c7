"""Linear probing of frozen representations: per-category multinomial
logistic regression with early stopping, reported as macro-F1.

Macro here means unweighted: F1 is averaged over the classes present in the
reference labels, and the suite mean is the unweighted mean over categories.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import EpisodeDataset, make_splits
from .tensor import Adam, Tensor, softmax_cross_entropy


class ProbeError(ValueError):
    pass


class DegenerateLabelsError(ProbeError):
    pass


@dataclass(frozen=True)
class ProbeHyper:
    lr: float = 3e-4
    batch_size: int = 256
    patience: int = 5
    max_epochs: int = 200


@dataclass
class ProbeModel:
    weights: np.ndarray  # (width, classes)
    bias: np.ndarray  # (classes,)
    category: str
    classes: int
    best_epoch: int
    epochs_run: int
    best_val_loss: float
    val_losses: list[float] = field(default_factory=list, repr=False)


def _logits(weights, bias, x) -> np.ndarray:
    return x @ weights + bias


def _mean_xent(weights, bias, x, y) -> float:
    z = _logits(weights, bias, x)
    z = z - z.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-log_probs[np.arange(len(y)), y].mean())


def train_probe(
    representations: np.ndarray,
    labels: np.ndarray,
    train_idx,
    val_idx,
    classes: int,
    hyper: ProbeHyper = ProbeHyper(),
    seed: int = 0,
    category: str = "",
) -> ProbeModel:
    """Adam on softmax cross-entropy; stops after ``patience`` epochs without
    validation improvement and returns the best-epoch parameters."""
    x = np.asarray(representations, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    train_idx = np.asarray(train_idx)
    val_idx = np.asarray(val_idx)
    x_tr, y_tr = x[train_idx], y[train_idx]
    x_va, y_va = x[val_idx], y[val_idx]
    if len(np.unique(y_tr)) < 2:
        raise DegenerateLabelsError(
            f"category {category or '?'}: training labels contain a single class"
        )

    rng = np.random.default_rng(seed)
    w = Tensor(np.zeros((x.shape[1], classes)), requires_grad=True)
    b = Tensor(np.zeros(classes), requires_grad=True)
    opt = Adam([w, b], lr=hyper.lr)

    best = (np.inf, w.data.copy(), b.data.copy(), 0)
    val_losses = []
    bad = 0
    epoch = 0
    for epoch in range(1, hyper.max_epochs + 1):
        order = rng.permutation(len(y_tr))
        for start in range(0, len(order), hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            logits = Tensor(x_tr[idx]) @ w + b
            loss = softmax_cross_entropy(logits, y_tr[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
        val_loss = _mean_xent(w.data, b.data, x_va, y_va)
        val_losses.append(val_loss)
        if val_loss < best[0]:
            best = (val_loss, w.data.copy(), b.data.copy(), epoch)
            bad = 0
        else:
            bad += 1
            if bad >= hyper.patience:
                break
    return ProbeModel(
        weights=best[1],
        bias=best[2],
        category=category,
        classes=classes,
        best_epoch=best[3],
        epochs_run=epoch,
        best_val_loss=best[0],
        val_losses=val_losses,
    )


def predict(model: ProbeModel, representations: np.ndarray) -> np.ndarray:
    x = np.asarray(representations, dtype=np.float64)
    if x.shape[1] != model.weights.shape[0]:
        raise ProbeError(
            f"representation width {x.shape[1]} does not match probe width {model.weights.shape[0]}"
        )
    return _logits(model.weights, model.bias, x).argmax(axis=1)


@dataclass
class EvalMetrics:
    precision: dict[int, float]
    recall: dict[int, float]
    f1: dict[int, float]
    macro_f1: float


def f1_scores(y_true: np.ndarray, y_pred: np.ndarray) -> EvalMetrics:
    """Per-class precision/recall/F1 (0 when undefined) and macro-F1 over the
    classes present in the reference labels."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    present = np.unique(y_true)
    precision, recall, f1 = {}, {}, {}
    for c in present:
        tp = int(np.sum((y_pred == c) & (y_true == c)))
        fp = int(np.sum((y_pred == c) & (y_true != c)))
        fn = int(np.sum((y_pred != c) & (y_true == c)))
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        precision[int(c)] = p
        recall[int(c)] = r
        f1[int(c)] = 2 * p * r / (p + r) if p + r else 0.0
    macro = float(np.mean([f1[int(c)] for c in present])) if len(present) else 0.0
    return EvalMetrics(precision=precision, recall=recall, f1=f1, macro_f1=macro)


def evaluate_probe(model: ProbeModel, representations: np.ndarray, labels: np.ndarray) -> EvalMetrics:
    return f1_scores(labels, predict(model, representations))


@dataclass
class CategoryResult:
    f1: float
    best_epoch: int
    epochs_run: int
    error: str | None = None


@dataclass
class ProbeReport:
    categories: dict[str, CategoryResult]
    mean_f1: float

    def f1_by_category(self) -> dict[str, float]:
        return {c: r.f1 for c, r in self.categories.items() if r.error is None}


def probe_suite(
    dataset: EpisodeDataset,
    representations: np.ndarray,
    hyper: ProbeHyper = ProbeHyper(),
    seed: int = 0,
    ratios=(0.7, 0.1, 0.2),
) -> ProbeReport:
    """One independent probe per schema category on identical splits.

    Category seeds are base seed + category index so results do not depend on
    scheduling. Failed categories are recorded instead of aborting the suite.
    """
    x = np.asarray(representations, dtype=np.float64)
    if x.shape[0] != dataset.n_frames:
        raise ProbeError(f"{x.shape[0]} representation rows for {dataset.n_frames} frames")
    split = make_splits(dataset, ratios=ratios, seed=seed)
    results: dict[str, CategoryResult] = {}
    for ci, category in enumerate(sorted(dataset.schema)):
        y = dataset.label_vector(category)
        try:
            model = train_probe(
                x,
                y,
                split.train_idx,
                split.validation_idx,
                classes=dataset.schema[category],
                hyper=hyper,
                seed=seed + ci,
                category=category,
            )
            metrics = evaluate_probe(model, x[split.test_idx], y[split.test_idx])
            results[category] = CategoryResult(
                f1=metrics.macro_f1, best_epoch=model.best_epoch, epochs_run=model.epochs_run
            )
        except ProbeError as exc:
            results[category] = CategoryResult(f1=0.0, best_epoch=0, epochs_run=0, error=str(exc))
    scored = [r.f1 for r in results.values() if r.error is None]
    mean = float(np.mean(scored)) if scored else 0.0
    return ProbeReport(categories=results, mean_f1=mean)
