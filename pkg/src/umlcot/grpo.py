"""Group-relative advantages, the selected-candidate policy loss, and a toy
softmax policy that runs reward -> advantage -> loss -> update end to end.

Advantages are computed with exact rational arithmetic for the mean and
variance.  That makes shifting every reward by a constant (or, with
``epsilon=0``, scaling by a positive constant) leave the advantages
bit-for-bit unchanged whenever the shifted/scaled inputs are themselves
exactly representable.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .exceptions import GroupTooSmall, InputError

DEFAULT_EPSILON = 1e-4
DEFAULT_GROUP_SIZE = 8

CURVE_COLUMNS = (
    "iteration",
    "mean_reward",
    "max_reward",
    "p_best_template",
    "loss",
    "policy_mean_reward",
)


def normalize_advantages(
    rewards: Sequence[float], epsilon: float = DEFAULT_EPSILON, *, ddof: int = 0
) -> list[float]:
    """(r_i - mean) / (std + epsilon) for a group of rewards.

    ``ddof=0`` uses the population standard deviation; ``ddof=1`` the
    sample one.  ``epsilon=0`` is accepted for testing; a zero-variance
    group then maps to all zeros.
    """
    values = [float(r) for r in rewards]
    if len(values) < 2:
        raise GroupTooSmall(f"a group needs at least 2 rewards, got {len(values)}")
    if not all(math.isfinite(v) for v in values):
        raise InputError("rewards must be finite")
    if not (epsilon >= 0 and math.isfinite(epsilon)):
        raise InputError(f"epsilon must be a finite non-negative number, got {epsilon}")
    if ddof not in (0, 1):
        raise InputError("ddof must be 0 or 1")

    exact = [Fraction(v) for v in values]
    mean = sum(exact, Fraction(0)) / len(exact)
    dev = [x - mean for x in exact]
    var = sum((d * d for d in dev), Fraction(0)) / (len(exact) - ddof)
    if var == 0:
        return [0.0] * len(values)
    if epsilon == 0:
        # ratio formed exactly, so any exact positive rescaling cancels
        return [math.copysign(math.sqrt(d * d / var), d) for d in dev]
    denom = math.sqrt(var) + epsilon
    return [float(d) / denom for d in dev]


def select_candidate(advantages: Sequence[float]) -> int:
    """Index of the largest advantage; the lowest index wins ties."""
    if not len(advantages):
        raise InputError("cannot select from an empty group")
    best = 0
    for i in range(1, len(advantages)):
        if advantages[i] > advantages[best]:
            best = i
    return best


def policy_loss(logprob_selected: float, advantage_selected: float) -> float:
    if logprob_selected > 0:
        raise InputError(f"log-probability must be <= 0, got {logprob_selected}")
    return -logprob_selected * advantage_selected


@dataclass(frozen=True)
class CandidateGroup:
    candidates: tuple[str, ...]
    rewards: tuple[float, ...]
    advantages: tuple[float, ...]
    selected: int
    epsilon: float = DEFAULT_EPSILON
    selected_logprob: float | None = None

    @classmethod
    def from_rewards(
        cls,
        candidates: Sequence[str],
        rewards: Sequence[float],
        epsilon: float = DEFAULT_EPSILON,
        selected_logprob: float | None = None,
    ) -> "CandidateGroup":
        if len(candidates) != len(rewards):
            raise InputError(f"{len(candidates)} candidates but {len(rewards)} rewards")
        adv = normalize_advantages(rewards, epsilon)
        return cls(
            candidates=tuple(candidates),
            rewards=tuple(float(r) for r in rewards),
            advantages=tuple(adv),
            selected=select_candidate(adv),
            epsilon=epsilon,
            selected_logprob=selected_logprob,
        )

    @property
    def loss(self) -> float | None:
        if self.selected_logprob is None:
            return None
        return policy_loss(self.selected_logprob, self.advantages[self.selected])


# --------------------------------------------------------------------------
# Toy policy


def softmax(theta) -> np.ndarray:
    z = np.asarray(theta, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def log_softmax(theta) -> np.ndarray:
    z = np.asarray(theta, dtype=np.float64)
    shifted = z - z.max()
    return shifted - math.log(float(np.exp(shifted).sum()))


def selected_loss(theta, k: int, advantage: float) -> float:
    """Loss of picking template ``k`` under logits ``theta``."""
    return policy_loss(min(0.0, float(log_softmax(theta)[k])), advantage)


def loss_gradient(theta, k: int, advantage: float) -> np.ndarray:
    """d loss / d theta = -advantage * (onehot(k) - softmax(theta))."""
    grad = -softmax(theta)
    grad[k] += 1.0
    return -advantage * grad


@dataclass(frozen=True)
class ToyPolicy:
    """Softmax over a fixed set of candidate outputs (templates)."""

    theta: tuple[float, ...]
    templates: tuple[str, ...]
    learning_rate: float = 0.1
    rng_seed: int = 0

    def __post_init__(self):
        if len(self.theta) != len(self.templates):
            raise InputError("theta and templates must have the same length")
        if len(self.templates) < 1:
            raise InputError("a policy needs at least one template")
        if self.learning_rate < 0:
            raise InputError("learning rate must be non-negative")

    @classmethod
    def uniform(cls, templates: Sequence[str], learning_rate: float = 0.1, rng_seed: int = 0):
        return cls((0.0,) * len(templates), tuple(templates), learning_rate, rng_seed)

    @property
    def probabilities(self) -> np.ndarray:
        return softmax(self.theta)

    def log_prob(self, k: int) -> float:
        return min(0.0, float(log_softmax(self.theta)[k]))


@dataclass(frozen=True)
class StepRecord:
    samples: tuple[int, ...]
    rewards: tuple[float, ...]
    advantages: tuple[float, ...]
    selected: int
    selected_template: int
    loss: float
    mean_reward: float
    max_reward: float
    p_best_template: float
    policy_mean_reward: float
    iteration: int = 0

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "samples": list(self.samples),
            "rewards": list(self.rewards),
            "advantages": list(self.advantages),
            "selected": self.selected,
            "selected_template": self.selected_template,
            "loss": self.loss,
            "mean_reward": self.mean_reward,
            "max_reward": self.max_reward,
            "p_best_template": self.p_best_template,
            "policy_mean_reward": self.policy_mean_reward,
        }


RewardFn = Callable[[str], float]


def sim_step(
    policy: ToyPolicy,
    group_size: int,
    reward_fn: RewardFn,
    rng: np.random.Generator | None = None,
    *,
    epsilon: float = DEFAULT_EPSILON,
    samples: Sequence[int] | None = None,
    template_rewards: Sequence[float] | None = None,
    iteration: int = 0,
) -> tuple[ToyPolicy, StepRecord]:
    """One GRPO update of the toy policy.

    ``samples`` forces the sampled template indices (for testing);
    otherwise ``group_size`` indices are drawn i.i.d. from the policy.
    ``template_rewards`` (reward of every template) is only used for the
    record and is computed with ``reward_fn`` when omitted.

    ``mean_reward`` in the record is the sampled group's mean;
    ``policy_mean_reward`` is the expected reward under the updated policy.
    """
    if group_size < 2:
        raise GroupTooSmall(f"group size must be at least 2, got {group_size}")
    probs = policy.probabilities
    if samples is None:
        if rng is None:
            rng = np.random.default_rng(policy.rng_seed)
        samples = rng.choice(len(probs), size=group_size, p=probs)
    samples = tuple(int(s) for s in samples)
    if len(samples) != group_size:
        raise InputError(f"expected {group_size} forced samples, got {len(samples)}")

    rewards = [float(reward_fn(policy.templates[s])) for s in samples]
    advantages = normalize_advantages(rewards, epsilon)
    sel = select_candidate(advantages)
    k = samples[sel]
    adv = advantages[sel]

    loss = selected_loss(policy.theta, k, adv)
    theta = np.asarray(policy.theta) - policy.learning_rate * loss_gradient(policy.theta, k, adv)
    new_policy = replace(policy, theta=tuple(float(t) for t in theta))

    if template_rewards is None:
        template_rewards = [float(reward_fn(t)) for t in policy.templates]
    best_template = select_candidate(template_rewards)
    new_probs = new_policy.probabilities
    record = StepRecord(
        samples=samples,
        rewards=tuple(rewards),
        advantages=tuple(advantages),
        selected=sel,
        selected_template=k,
        loss=loss,
        mean_reward=math.fsum(rewards) / len(rewards),
        max_reward=max(rewards),
        p_best_template=float(new_probs[best_template]),
        policy_mean_reward=math.fsum(float(p) * r for p, r in zip(new_probs, template_rewards)),
        iteration=iteration,
    )
    return new_policy, record


@dataclass
class SimulationResult:
    policy: ToyPolicy
    steps: list[StepRecord] = field(default_factory=list)

    @property
    def p_best(self) -> float:
        return self.steps[-1].p_best_template

    def curve_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CURVE_COLUMNS)
        for s in self.steps:
            writer.writerow(
                [
                    s.iteration,
                    repr(s.mean_reward),
                    repr(s.max_reward),
                    repr(s.p_best_template),
                    repr(s.loss),
                    repr(s.policy_mean_reward),
                ]
            )
        return buf.getvalue()

    def steps_jsonl(self) -> str:
        return "".join(json.dumps(s.to_dict(), sort_keys=True) + "\n" for s in self.steps)


def run_simulation(
    policy: ToyPolicy,
    iterations: int,
    group_size: int = DEFAULT_GROUP_SIZE,
    reward_fn: RewardFn | None = None,
    *,
    epsilon: float = DEFAULT_EPSILON,
) -> SimulationResult:
    """Repeated :func:`sim_step` from one generator seeded by the policy.

    Rewards are evaluated once per distinct template text, which assumes
    ``reward_fn`` is deterministic.
    """
    if iterations < 1:
        raise InputError("iterations must be >= 1")
    if reward_fn is None:
        raise InputError("a reward function is required")
    cache: dict[str, float] = {}

    def cached(text: str) -> float:
        if text not in cache:
            cache[text] = float(reward_fn(text))
        return cache[text]

    template_rewards = [cached(t) for t in policy.templates]
    rng = np.random.default_rng(policy.rng_seed)
    result = SimulationResult(policy)
    for it in range(1, iterations + 1):
        policy, record = sim_step(
            policy, group_size, cached, rng, epsilon=epsilon,
            template_rewards=template_rewards, iteration=it,
        )
        result.steps.append(record)
    result.policy = policy
    return result
