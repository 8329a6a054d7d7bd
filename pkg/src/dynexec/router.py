"""Difficulty-threshold routing between a cheap and an expensive model.

The cheap model doubles as the probe: prompt difficulty is its mean next-token
entropy over prompt prefixes (the continuation is never consulted, so routing
cannot peek at the answer). Items whose difficulty exceeds the threshold go to
the large model. Reports carry the cost/quality frontier; picking a "best"
threshold is left to the reader.
"""

import math
from dataclasses import dataclass

import numpy as np

from .core import SequenceModel, check_context, entropy
from .errors import EmptyPrompt

LOGPROB_FLOOR = 1e-12


@dataclass(frozen=True)
class RoutePolicy:
    threshold: float
    probe: SequenceModel


@dataclass(frozen=True)
class WorkloadItem:
    prompt: tuple[int, ...]
    reference_continuation: tuple[int, ...]

    def __post_init__(self):
        if not self.reference_continuation:
            raise ValueError("reference continuation must be non-empty")


@dataclass(frozen=True)
class RouteReport:
    total_cost: float
    mean_quality: float
    fraction_large: float


def difficulty(prompt, probe: SequenceModel) -> float:
    """Mean entropy of the probe's next-token distribution after each prompt
    prefix (lengths 1..len(prompt)); ranges over [0, ln V]."""
    prompt = check_context(prompt, probe.vocab_size)
    if not prompt:
        raise EmptyPrompt("difficulty needs a non-empty prompt")
    total = 0.0
    for i in range(1, len(prompt) + 1):
        total += entropy(probe.next_dist(prompt[:i]))
    return total / len(prompt)


def route(policy: RoutePolicy, item: WorkloadItem) -> str:
    """Returns "large" iff the item's difficulty strictly exceeds the threshold."""
    return "large" if difficulty(item.prompt, policy.probe) > policy.threshold else "small"


def _mean_log_likelihood(model: SequenceModel, item: WorkloadItem) -> float:
    # floor keeps zero-probability table rows from yielding -inf
    ctx = item.prompt
    total = 0.0
    for token in item.reference_continuation:
        total += math.log(max(float(model.next_dist(ctx)[token]), LOGPROB_FLOOR))
        ctx = ctx + (token,)
    return total / len(item.reference_continuation)


def evaluate(policy: RoutePolicy, workload, small: SequenceModel, large: SequenceModel) -> RouteReport:
    """Route every item, score the reference continuation under the chosen
    model, and account costs: one probe call per prompt token plus one chosen-
    model call per continuation token."""
    workload = list(workload)
    if not workload:
        raise ValueError("workload must be non-empty")
    total_cost = 0.0
    n_large = 0
    qualities = []
    for item in workload:
        total_cost += len(item.prompt) * policy.probe.cost_units
        if difficulty(item.prompt, policy.probe) > policy.threshold:
            chosen = large
            n_large += 1
        else:
            chosen = small
        qualities.append(_mean_log_likelihood(chosen, item))
        total_cost += len(item.reference_continuation) * chosen.cost_units
    return RouteReport(
        total_cost=total_cost,
        mean_quality=float(np.mean(qualities)),
        fraction_large=n_large / len(workload),
    )
