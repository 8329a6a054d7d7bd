"""Entropy-gated early exit over a synthetic 2-D classification task.

The ground-truth boundary is the cubic y = x^3 - x on x in [-1.5, 1.5]: easy
points sit far enough from the curve that a straight line separates them,
hard points hug it inside a narrow band and need the curved boundary. Stage 0
is a plain logistic regression (cost 1), the final stage a cubic-feature
logistic regression (cost 4), and a per-input entropy gate decides whether
stage 0's answer is confident enough to stop there.
"""

from dataclasses import dataclass, replace

import numpy as np

from .core import Rng, entropy
from .errors import DegenerateData

BOUNDARY_X_RANGE = (-1.5, 1.5)
HARD_BAND = (0.02, 0.30)
EASY_BAND = (0.90, 1.90)
STAGE0_COST = 1.0
STAGE1_COST = 4.0
TRAIN_ITERATIONS = 500
TRAIN_STEP = 0.1


def boundary(x):
    return x**3 - x


@dataclass(frozen=True)
class Point2:
    x: float
    y: float
    label: int


@dataclass(frozen=True)
class ExitStage:
    """One classifier stage: logistic weights over a named feature map."""

    weights: np.ndarray  # last entry is the intercept
    feature_kind: str    # "linear" or "cubic"
    cost_units: float

    def dist(self, point: Point2) -> np.ndarray:
        feats = featurize(self.feature_kind, np.array([point.x]), np.array([point.y]))
        p1 = _sigmoid(feats @ self.weights[:-1] + self.weights[-1])[0]
        return np.array([1.0 - p1, p1])

    def dists(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        p1 = _sigmoid(featurize(self.feature_kind, xs, ys) @ self.weights[:-1] + self.weights[-1])
        return np.stack([1.0 - p1, p1], axis=1)


@dataclass(frozen=True)
class MultiExitNet:
    """Ordered stages plus the entropy gate threshold tau (nats).

    The final stage has no gate and always answers; tau applies to every
    earlier stage. tau in nats means ln(2) is the two-class uniform bound.
    """

    stages: tuple[ExitStage, ...]
    tau: float = 0.0

    def __post_init__(self):
        if len(self.stages) < 2:
            raise ValueError("need at least two stages")

    def with_tau(self, tau: float) -> "MultiExitNet":
        return replace(self, tau=tau)

    @property
    def full_cost(self) -> float:
        return sum(s.cost_units for s in self.stages)


@dataclass(frozen=True)
class SweepRow:
    tau: float
    accuracy: float
    mean_cost: float
    early_exit_fraction: float
    speedup: float


def featurize(kind: str, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    if kind == "linear":
        return np.stack([xs, ys], axis=1)
    if kind == "cubic":
        return np.stack([xs, ys, xs * xs, xs * ys, ys * ys,
                         xs**3, xs * xs * ys, xs * ys * ys, ys**3], axis=1)
    raise ValueError(f"unknown feature kind {kind!r}")


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def gen_dataset(count: int, hard_fraction: float, seed: int) -> list[Point2]:
    """Labeled points around the cubic boundary, balanced classes by alternation.

    A hard_fraction coin places each point inside the narrow band around the
    curve; everyone else lands in the easy band, far enough out that the easy
    subset is linearly separable.
    """
    if count < 10:
        raise ValueError("count must be >= 10")
    if not 0.0 <= hard_fraction <= 1.0:
        raise ValueError("hard_fraction must lie in [0, 1]")
    rng = Rng(seed)
    lo_x, hi_x = BOUNDARY_X_RANGE
    points = []
    for i in range(count):
        label = i % 2
        x = lo_x + (hi_x - lo_x) * rng.uniform()
        band = HARD_BAND if rng.uniform() < hard_fraction else EASY_BAND
        offset = band[0] + (band[1] - band[0]) * rng.uniform()
        y = boundary(x) + (offset if label == 1 else -offset)
        points.append(Point2(x, y, label))
    return points


def _fit_logistic(feats: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Full-batch gradient descent on the mean logistic loss: fixed 500 iterations, step 0.1."""
    X = np.hstack([feats, np.ones((len(feats), 1))])
    w = np.zeros(X.shape[1])
    n = len(labels)
    for _ in range(TRAIN_ITERATIONS):
        p = _sigmoid(X @ w)
        w = w - TRAIN_STEP * (X.T @ (p - labels)) / n
    return w


def train_stages(data) -> MultiExitNet:
    """Train the linear stage and the cubic stage on the same data."""
    if len(data) < 100:
        raise ValueError("need at least 100 training points")
    xs = np.array([p.x for p in data])
    ys = np.array([p.y for p in data])
    labels = np.array([p.label for p in data], dtype=np.float64)
    if len(np.unique(labels)) < 2:
        raise DegenerateData("training data contains a single class")
    stage0 = ExitStage(_fit_logistic(featurize("linear", xs, ys), labels), "linear", STAGE0_COST)
    stage1 = ExitStage(_fit_logistic(featurize("cubic", xs, ys), labels), "cubic", STAGE1_COST)
    return MultiExitNet((stage0, stage1))


def infer_with_exit(net: MultiExitNet, point: Point2):
    """Classify one point, exiting at the first stage whose entropy is strictly
    below tau; the final stage always answers.

    Returns (label, exit_index, cost_spent). The strict inequality makes tau=0
    a clean never-exit endpoint (entropy >= 0 always).
    """
    cost = 0.0
    for idx, stage in enumerate(net.stages):
        dist = stage.dist(point)
        cost += stage.cost_units
        final = idx == len(net.stages) - 1
        if final or entropy(dist) < net.tau:
            return int(np.argmax(dist)), idx, cost
    raise AssertionError("unreachable: final stage always answers")


def sweep(net: MultiExitNet, data, taus) -> list[SweepRow]:
    """Evaluate the gate across an ascending threshold grid.

    Stage outputs are computed once per point and reused for every tau, which
    keeps each row exactly consistent with infer_with_exit.
    """
    taus = list(taus)
    if not taus:
        raise ValueError("tau grid must be non-empty")
    if any(b < a for a, b in zip(taus, taus[1:])):
        raise ValueError("tau grid must be sorted ascending")
    xs = np.array([p.x for p in data])
    ys = np.array([p.y for p in data])
    labels = np.array([p.label for p in data])
    stage_dists = [stage.dists(xs, ys) for stage in net.stages]
    stage_preds = [np.argmax(d, axis=1) for d in stage_dists]
    stage_ents = [np.array([entropy(row) for row in d]) for d in stage_dists]
    full_cost = net.full_cost
    rows = []
    for tau in taus:
        preds = stage_preds[-1].copy()
        cost = np.full(len(data), full_cost)
        decided = np.zeros(len(data), dtype=bool)
        cum_cost = 0.0
        for idx in range(len(net.stages) - 1):
            cum_cost += net.stages[idx].cost_units
            exits = ~decided & (stage_ents[idx] < tau)
            preds[exits] = stage_preds[idx][exits]
            cost[exits] = cum_cost
            decided |= exits
        early_fraction = float(np.mean(cost < full_cost))
        mean_cost = float(np.mean(cost))
        rows.append(SweepRow(
            tau=float(tau),
            accuracy=float(np.mean(preds == labels)),
            mean_cost=mean_cost,
            early_exit_fraction=early_fraction,
            speedup=full_cost / mean_cost,
        ))
    return rows


def stage_accuracy(stage: ExitStage, data) -> float:
    xs = np.array([p.x for p in data])
    ys = np.array([p.y for p in data])
    labels = np.array([p.label for p in data])
    preds = np.argmax(stage.dists(xs, ys), axis=1)
    return float(np.mean(preds == labels))
