"""Federated averaging on flat parameter vectors.

Two built-in learning tasks: linear regression under mean squared loss and
two-class logistic regression under mean negative log-likelihood. Devices
run plain gradient descent locally (full batch or minibatch); the server
aggregates local models weighted by dataset size. Also provides the
cross-validation procedure that picks the communication-round budget, and
synthetic data generators with a planted weight vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TASK_LINEAR = "linear"
TASK_LOGISTIC = "logistic"
_TASKS = (TASK_LINEAR, TASK_LOGISTIC)


class DivergenceError(ArithmeticError):
    """Local training produced a non-finite gradient or parameter vector."""


@dataclass(frozen=True)
class ModelVector:
    """Flat real parameter vector; all model exchange happens in this form."""

    params: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "params", np.asarray(self.params, dtype=float))
        if self.params.ndim != 1 or self.params.size == 0:
            raise ValueError("params must be a nonempty 1-D vector")
        if not np.all(np.isfinite(self.params)):
            raise ValueError("params must be finite")

    @property
    def dim(self) -> int:
        return self.params.size


@dataclass(frozen=True)
class LocalDataset:
    """One device's samples: feature rows ``q`` and scalar targets ``v``."""

    features: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "features", np.asarray(self.features, dtype=float))
        object.__setattr__(self, "targets", np.asarray(self.targets, dtype=float))
        if self.features.ndim != 2 or self.targets.ndim != 1:
            raise ValueError("features must be (n, d), targets (n,)")
        if len(self.features) != len(self.targets) or len(self.targets) == 0:
            raise ValueError("need at least one sample and matching lengths")
        if not (np.all(np.isfinite(self.features)) and np.all(np.isfinite(self.targets))):
            raise ValueError("features and targets must be finite")

    @property
    def count(self) -> int:
        return len(self.targets)

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class TrainerConfig:
    """Local training hyperparameters, identical on every device.

    ``batch_size`` of None means full batch; the local iteration count must
    match the energy model's per-round iteration count (checked at scenario
    assembly, not here).
    """

    learning_rate: float
    local_iters: int
    task: str = TASK_LINEAR
    batch_size: int | None = None

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.local_iters < 1:
            raise ValueError("local_iters must be >= 1")
        if self.task not in _TASKS:
            raise ValueError(f"task must be one of {_TASKS}, got {self.task!r}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1 when set")


def _check_dims(w: ModelVector, data: LocalDataset) -> None:
    if w.dim != data.dim:
        raise ValueError(f"model dim {w.dim} != feature dim {data.dim}")


def _sample_losses(w: np.ndarray, x: np.ndarray, y: np.ndarray, task: str) -> np.ndarray:
    z = x @ w
    if task == TASK_LINEAR:
        r = z - y
        return 0.5 * r * r
    # logistic NLL in the overflow-safe form log(1 + e^z) - v*z
    return np.logaddexp(0.0, z) - y * z


def local_loss(w: ModelVector, data: LocalDataset, task: str) -> float:
    """Mean per-sample loss of ``w`` on one device's data."""
    if task not in _TASKS:
        raise ValueError(f"unknown task {task!r}")
    _check_dims(w, data)
    return float(np.mean(_sample_losses(w.params, data.features, data.targets, task)))


def global_loss(w: ModelVector, datasets: list[LocalDataset], task: str) -> float:
    """Pooled mean loss across all devices' samples.

    Accumulates per-sample losses over the pooled data and divides once by
    the total count, so it equals the dataset-size-weighted average of the
    local losses up to floating-point reordering.
    """
    if not datasets:
        raise ValueError("datasets must be nonempty")
    total = 0.0
    count = 0
    for data in datasets:
        _check_dims(w, data)
        total += float(np.sum(_sample_losses(w.params, data.features, data.targets, task)))
        count += data.count
    return total / count


def loss_gradient(w: ModelVector, data: LocalDataset, task: str) -> np.ndarray:
    """Analytic gradient of the mean loss with respect to the parameters."""
    if task not in _TASKS:
        raise ValueError(f"unknown task {task!r}")
    _check_dims(w, data)
    x, y = data.features, data.targets
    z = x @ w.params
    if task == TASK_LINEAR:
        err = z - y
    else:
        err = 1.0 / (1.0 + np.exp(-z)) - y
    return x.T @ err / data.count


def _train_loop(
    w0: np.ndarray,
    data: LocalDataset,
    task: str,
    learning_rate: float,
    local_iters: int,
    batch_size: int | None,
    rng: np.random.Generator | None,
) -> np.ndarray:
    """Gradient-descent inner loop; the zero-learning-rate boundary is allowed
    here so tests can pin the no-op step."""
    w = w0.copy()
    n = data.count
    for it in range(local_iters):
        if batch_size is None or batch_size >= n:
            batch = data
        else:
            if rng is None:
                raise ValueError("minibatch training needs an rng")
            idx = rng.choice(n, size=batch_size, replace=False)
            batch = LocalDataset(data.features[idx], data.targets[idx])
        g = loss_gradient(ModelVector(w), batch, task)
        if not np.all(np.isfinite(g)):
            raise DivergenceError(
                f"non-finite gradient at local iteration {it} "
                f"(|w|={float(np.max(np.abs(w))):.3e})"
            )
        with np.errstate(over="ignore"):
            w = w - learning_rate * g
        if not np.all(np.isfinite(w)):
            raise DivergenceError(f"parameters overflowed at local iteration {it}")
    return w


def local_train(
    w0: ModelVector,
    data: LocalDataset,
    cfg: TrainerConfig,
    rng: np.random.Generator | None = None,
) -> ModelVector:
    """Run the configured number of gradient steps on one device's data.

    Full-batch training is rng-independent; minibatch draws its batch
    indices from ``rng`` and is deterministic given the generator state.
    """
    _check_dims(w0, data)
    w = _train_loop(
        w0.params, data, cfg.task, cfg.learning_rate, cfg.local_iters, cfg.batch_size, rng
    )
    return ModelVector(w)


def aggregate(local_models: list[tuple[ModelVector, float]]) -> ModelVector:
    """Dataset-size-weighted average of local models.

    Devices are summed in the order given (callers keep ascending device
    index) with Kahan compensation so results are reproducible bit-for-bit
    across platforms and never depend on incidental reordering.
    """
    if not local_models:
        raise ValueError("nothing to aggregate")
    dim = local_models[0][0].dim
    acc = np.zeros(dim)
    comp = np.zeros(dim)
    for w, weight in local_models:
        if w.dim != dim:
            raise ValueError("all local models must share one dimension")
        if not weight > 0:
            raise ValueError("weights must be > 0")
        term = weight * w.params
        y = term - comp
        t = acc + y
        comp = (t - acc) - y
        acc = t
    total = math.fsum(weight for _, weight in local_models)
    return ModelVector(acc / total)


def run_round(
    global_model: ModelVector,
    datasets: list[LocalDataset],
    cfg: TrainerConfig,
    rng: np.random.Generator | None = None,
    *,
    device_rngs: list[np.random.Generator] | None = None,
    participate: np.ndarray | None = None,
) -> tuple[ModelVector, list[ModelVector]]:
    """One communication round: broadcast, train locally, aggregate.

    Per-device generators are either supplied explicitly (``device_rngs``,
    one per device) or spawned deterministically from ``rng``, so running
    devices concurrently can never change the result. ``participate`` masks
    devices out of training and aggregation (battery-depleted devices skip
    a round); if nobody participates the global model is returned unchanged.
    """
    if not datasets:
        raise ValueError("datasets must be nonempty")
    if device_rngs is None:
        device_rngs = rng.spawn(len(datasets)) if rng is not None else [None] * len(datasets)
    if len(device_rngs) != len(datasets):
        raise ValueError("need one rng per device")
    if participate is None:
        participate = np.ones(len(datasets), dtype=bool)

    locals_out: list[ModelVector] = []
    weighted: list[tuple[ModelVector, float]] = []
    for data, dev_rng, active in zip(datasets, device_rngs, participate):
        w_i = local_train(global_model, data, cfg, dev_rng) if active else global_model
        locals_out.append(w_i)
        if active:
            weighted.append((w_i, float(data.count)))
    new_global = aggregate(weighted) if weighted else global_model
    return new_global, locals_out


def evaluate_metric(w: ModelVector, data: LocalDataset, task: str) -> float:
    """Validation/test metric: mean loss for regression, accuracy for logistic."""
    if task == TASK_LOGISTIC:
        z = data.features @ w.params
        predicted = (z >= 0).astype(float)
        return float(np.mean(predicted == data.targets))
    return local_loss(w, data, task)


def _better(candidate: float, incumbent: float, task: str) -> bool:
    # Metrics are compared after rounding to 12 decimals so float dust can
    # never steal a tie from the cheaper (smaller) round budget.
    a, b = round(candidate, 12), round(incumbent, 12)
    return a > b if task == TASK_LOGISTIC else a < b


@dataclass(frozen=True)
class RoundSelection:
    """Outcome of the round-budget cross-validation."""

    best_rounds: int
    test_metric: float
    table: list[dict]


def select_rounds(
    candidates: list[int],
    train_sets: list[LocalDataset],
    val_set: LocalDataset,
    test_set: LocalDataset,
    cfg: TrainerConfig,
    rng: np.random.Generator,
    w0: ModelVector,
) -> RoundSelection:
    """Pick the communication-round budget by validation performance.

    Trains once up to the largest candidate and snapshots the global model
    at every candidate checkpoint (training to R and continuing is
    identical to training straight to R' > R under the same generator).
    Returns the candidate with the best validation metric; exact ties go to
    the smaller budget, which costs less to communicate. The test metric is
    reported only for the chosen budget.
    """
    if not candidates:
        raise ValueError("candidates must be nonempty")
    if sorted(candidates) != list(candidates) or len(set(candidates)) != len(candidates):
        raise ValueError("candidates must be strictly ascending")
    if candidates[0] < 1:
        raise ValueError("candidates must be >= 1")

    checkpoints = {}
    w = w0
    for r in range(1, candidates[-1] + 1):
        w, _ = run_round(w, train_sets, cfg, rng.spawn(1)[0])
        if r in set(candidates):
            checkpoints[r] = w

    table = []
    best_r = None
    best_metric = None
    for r in candidates:
        metric = evaluate_metric(checkpoints[r], val_set, cfg.task)
        table.append({"rounds": r, "val_metric": metric})
        if best_r is None or _better(metric, best_metric, cfg.task):
            best_r, best_metric = r, metric

    test_metric = evaluate_metric(checkpoints[best_r], test_set, cfg.task)
    return RoundSelection(best_rounds=best_r, test_metric=test_metric, table=table)


def make_linear_data(
    rng: np.random.Generator, n: int, w_true: np.ndarray, noise_std: float
) -> LocalDataset:
    """Gaussian features with targets from a planted weight vector plus noise."""
    x = rng.standard_normal((n, len(w_true)))
    y = x @ w_true + noise_std * rng.standard_normal(n)
    return LocalDataset(x, y)


def make_logistic_data(
    rng: np.random.Generator, n: int, w_true: np.ndarray, flip_prob: float
) -> LocalDataset:
    """Gaussian features with linearly separable labels, each flipped with
    probability ``flip_prob``."""
    x = rng.standard_normal((n, len(w_true)))
    y = (x @ w_true > 0).astype(float)
    flips = rng.random(n) < flip_prob
    y[flips] = 1.0 - y[flips]
    return LocalDataset(x, y)


def make_federated_problem(
    rng: np.random.Generator,
    task: str,
    n_devices: int,
    samples_per_device: int,
    dim: int,
    noise: float,
    val_samples: int,
    test_samples: int,
    weight_scale: float = 1.0,
) -> tuple[list[LocalDataset], LocalDataset, LocalDataset, np.ndarray]:
    """Draw a full synthetic federated problem sharing one planted weight.

    ``noise`` is the target noise std for the linear task and the label
    flip probability for the logistic task. Returns per-device training
    sets plus pooled validation and test sets.
    """
    if task not in _TASKS:
        raise ValueError(f"unknown task {task!r}")
    w_true = weight_scale * rng.standard_normal(dim)
    maker = make_linear_data if task == TASK_LINEAR else make_logistic_data
    train_sets = [maker(rng, samples_per_device, w_true, noise) for _ in range(n_devices)]
    val_set = maker(rng, val_samples, w_true, noise)
    test_set = maker(rng, test_samples, w_true, noise)
    return train_sets, val_set, test_set, w_true
