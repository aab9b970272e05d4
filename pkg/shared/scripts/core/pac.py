"""
Monte Carlo check of the physics-restricted sample-complexity bound.

A finite problem is planted on a grid of ``n_cells`` inputs: a true labeling
``theta*`` drawn from the hypothesis family, a distribution over cells, and a
subset of "physics" cells on which the correct label is known a priori.
Losses are 0/1 indicators:

- data loss: the hypothesis disagrees with the observed label;
- physics loss: the input is a physics cell and the hypothesis disagrees
  with the physics rule there.

The restricted class keeps every hypothesis whose expected physics loss is at
most ``eps0``. With ``m`` samples from the bound, any hypothesis consistent
with the sample (zero data and physics loss) should have true error at most
``eps1`` in at least a ``1 - delta`` fraction of trials.
"""

import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from .errors import ConfigurationError, DomainError, UsageError
from .settings import derive_seed
from utils import get_logger

logger = get_logger("pac")

FAMILIES = ("lookup", "threshold")
SELECTIONS = ("first", "worst")


@dataclass(frozen=True)
class FiniteClassSpec:
    n_cells: int = 12
    family: str = "lookup"
    eps0: float = 0.2
    eps1: float = 0.1
    delta: float = 0.05
    trials: int = 200
    seed: int = 0
    # empty selects the first half of the cells
    physics_cells: Tuple[int, ...] = ()
    max_class_size: int = 1_000_000
    # planted labeling; drawn from the family when empty
    truth: Tuple[int, ...] = ()
    # cell probabilities; Dirichlet(1) when empty
    distribution: Tuple[float, ...] = ()
    progress: bool = True

    def validate(self) -> List[str]:
        errors = []
        if self.n_cells < 1:
            errors.append("n_cells must be at least 1")
        if self.family not in FAMILIES:
            errors.append(f"family must be one of {FAMILIES}")
        if not 0.0 <= self.eps0 <= 1.0:
            errors.append("eps0 must lie in [0, 1]")
        if not 0.0 < self.eps1 < 1.0:
            errors.append("eps1 must lie in (0, 1)")
        if not 0.0 < self.delta < 1.0:
            errors.append("delta must lie in (0, 1)")
        if self.trials < 1:
            errors.append("trials must be at least 1")
        if any(not 0 <= c < self.n_cells for c in self.physics_cells):
            errors.append("physics_cells must index grid cells")
        if self.truth and (len(self.truth) != self.n_cells or any(v not in (0, 1) for v in self.truth)):
            errors.append("truth must be a 0/1 labeling of every cell")
        if self.distribution:
            p = np.asarray(self.distribution, dtype=float)
            if p.shape != (self.n_cells,) or np.any(p < 0) or not math.isclose(p.sum(), 1.0, abs_tol=1e-9):
                errors.append("distribution must be a probability vector over the cells")
        if self.max_class_size < 1:
            errors.append("max_class_size must be at least 1")
        return errors

    @property
    def class_size(self) -> int:
        if self.family == "lookup":
            return 2 ** self.n_cells
        return 2 * (self.n_cells + 1)

    @classmethod
    def random(cls, seed: int, **overrides) -> "FiniteClassSpec":
        """A planted configuration with random truth, distribution and physics cells."""
        base = cls(**overrides)
        rng = np.random.default_rng(derive_seed(seed, 7))
        n = base.n_cells
        n_physics = int(rng.integers(1, n))
        physics = tuple(sorted(int(c) for c in rng.choice(n, size=n_physics, replace=False)))
        fields = dict(overrides, seed=seed, physics_cells=physics)
        fields.setdefault("distribution", tuple(float(v) for v in rng.dirichlet(np.ones(n))))
        return cls(**fields)


@dataclass(frozen=True)
class PlantedProblem:
    hypotheses: np.ndarray  # (|Theta|, n_cells) of 0/1
    truth: np.ndarray
    distribution: np.ndarray
    physics_mask: np.ndarray
    true_error: np.ndarray
    physics_risk: np.ndarray


def enumerate_hypotheses(family: str, n_cells: int) -> np.ndarray:
    """Every hypothesis of the family as rows of 0/1 labels, in lexicographic order."""
    cells = np.arange(n_cells)
    if family == "lookup":
        codes = np.arange(2 ** n_cells)[:, None]
        return ((codes >> (n_cells - 1 - cells)) & 1).astype(np.int8)
    rows = []
    for polarity in (0, 1):
        for t in range(n_cells + 1):
            rows.append(np.where(cells >= t, polarity, 1 - polarity))
    return np.array(rows, dtype=np.int8)


def plant(spec: FiniteClassSpec) -> PlantedProblem:
    """
    Resolve a spec into an enumerated class, a planted truth and its risks.

    Raises:
        ConfigurationError: If the spec is invalid or the class exceeds
            ``max_class_size``
    """
    errors = spec.validate()
    if errors:
        raise ConfigurationError("Invalid 'pac' config: " + "; ".join(errors))
    if spec.class_size > spec.max_class_size:
        raise ConfigurationError(
            f"Hypothesis class of size {spec.class_size} exceeds max_class_size {spec.max_class_size}")

    hypotheses = enumerate_hypotheses(spec.family, spec.n_cells)
    rng = np.random.default_rng(derive_seed(spec.seed, 0))
    if spec.truth:
        truth = np.asarray(spec.truth, dtype=np.int8)
    else:
        truth = hypotheses[int(rng.integers(len(hypotheses)))].copy()
    if spec.distribution:
        distribution = np.asarray(spec.distribution, dtype=float)
    else:
        distribution = rng.dirichlet(np.ones(spec.n_cells))

    physics_mask = np.zeros(spec.n_cells, dtype=bool)
    physics_mask[list(spec.physics_cells) or list(range(spec.n_cells // 2))] = True

    wrong = hypotheses != truth
    return PlantedProblem(
        hypotheses=hypotheses,
        truth=truth,
        distribution=distribution,
        physics_mask=physics_mask,
        true_error=wrong @ distribution,
        physics_risk=(wrong & physics_mask) @ distribution,
    )


def enumerate_restricted_class(spec: FiniteClassSpec,
                               problem: Optional[PlantedProblem] = None) -> Tuple[int, int]:
    """
    Exact sizes of the physics-restricted class and of the full class.

    Returns:
        (|Theta(eps0)|, |Theta|)
    """
    problem = problem or plant(spec)
    restricted = int(np.count_nonzero(problem.physics_risk <= spec.eps0))
    return restricted, len(problem.hypotheses)


def required_samples(class_size: int, eps1: float, delta: float) -> int:
    """
    Samples sufficient for error ``eps1`` with confidence ``1 - delta``.

    Raises:
        DomainError: If eps1 <= 0, delta is outside (0, 1] or the class is empty
    """
    if eps1 <= 0:
        raise DomainError(f"eps1 must be strictly positive, got {eps1}")
    if not 0.0 < delta <= 1.0:
        raise DomainError(f"delta must lie in (0, 1], got {delta}")
    if class_size < 1:
        raise DomainError(f"class_size must be at least 1, got {class_size}")
    bound = (math.log(class_size) + math.log(1.0 / delta)) / eps1
    return max(0, math.ceil(bound))


def _select(candidates: np.ndarray, true_error: np.ndarray, mode: str) -> Optional[int]:
    indices = np.flatnonzero(candidates)
    if indices.size == 0:
        return None
    if mode == "first":
        return int(indices[0])
    return int(indices[np.argmax(true_error[indices])])


@dataclass(frozen=True)
class VerificationReport:
    spec: FiniteClassSpec
    class_size: int
    restricted_size: int
    m: int
    m_unrestricted: int
    success: Dict[str, float]
    unrestricted_success: Dict[str, float]
    no_consistent: int

    @property
    def target(self) -> float:
        return 1.0 - self.spec.delta

    @property
    def binomial_sigma(self) -> float:
        return math.sqrt(self.spec.delta * (1.0 - self.spec.delta) / self.spec.trials)

    @property
    def passed(self) -> bool:
        return self.success["worst"] >= self.target - 2.0 * self.binomial_sigma

    def to_dict(self) -> Dict[str, Any]:
        spec = self.spec
        return {
            "family": spec.family,
            "n_cells": spec.n_cells,
            "eps0": spec.eps0,
            "eps1": spec.eps1,
            "delta": spec.delta,
            "trials": spec.trials,
            "seed": spec.seed,
            "class_size": self.class_size,
            "restricted_size": self.restricted_size,
            "m": self.m,
            "m_unrestricted": self.m_unrestricted,
            "success_first": self.success["first"],
            "success_worst": self.success["worst"],
            "unrestricted_success_first": self.unrestricted_success["first"],
            "unrestricted_success_worst": self.unrestricted_success["worst"],
            "no_consistent": self.no_consistent,
            "target": self.target,
            "binomial_sigma": self.binomial_sigma,
            "passed": self.passed,
        }


def monte_carlo_verify(spec: FiniteClassSpec, m: Optional[int] = None) -> VerificationReport:
    """
    Empirical success rate of consistent hypotheses at the bound's sample size.

    Each trial draws ``m`` cells, keeps the restricted hypotheses with zero
    empirical data and physics loss and scores the selected one on the true
    distribution. The same samples are also scored against the unrestricted
    class for comparison.

    Args:
        spec: Planted problem
        m: Sample count (defaults to the bound for the restricted class)

    Returns:
        VerificationReport with success rates for both selection modes
    """
    problem = plant(spec)
    restricted_size, class_size = enumerate_restricted_class(spec, problem)
    if m is None:
        m = required_samples(restricted_size, spec.eps1, spec.delta)
    if m < 0:
        raise UsageError(f"m must be non-negative, got {m}")
    m_unrestricted = required_samples(class_size, spec.eps1, spec.delta)

    in_class = problem.physics_risk <= spec.eps0
    hyps, truth = problem.hypotheses, problem.truth
    wins = {(scope, mode): 0 for scope in ("restricted", "unrestricted") for mode in SELECTIONS}
    no_consistent = 0

    trials = tqdm(range(spec.trials), desc="pac trials", leave=False, disable=not spec.progress)
    for trial in trials:
        rng = np.random.default_rng(derive_seed(spec.seed, 1, trial))
        cells = np.unique(rng.choice(spec.n_cells, size=m, p=problem.distribution)) if m else \
            np.zeros(0, dtype=int)
        data_ok = np.all(hyps[:, cells] == truth[cells], axis=1)
        phys_cells = cells[problem.physics_mask[cells]]
        phys_ok = np.all(hyps[:, phys_cells] == truth[phys_cells], axis=1)
        consistent = data_ok & phys_ok

        for scope, candidates in (("restricted", consistent & in_class),
                                  ("unrestricted", consistent)):
            for mode in SELECTIONS:
                chosen = _select(candidates, problem.true_error, mode)
                if chosen is None:
                    if scope == "restricted" and mode == "first":
                        no_consistent += 1
                    continue
                if problem.true_error[chosen] <= spec.eps1:
                    wins[(scope, mode)] += 1

    success = {mode: wins[("restricted", mode)] / spec.trials for mode in SELECTIONS}
    unrestricted = {mode: wins[("unrestricted", mode)] / spec.trials for mode in SELECTIONS}
    report = VerificationReport(spec=spec, class_size=class_size, restricted_size=restricted_size,
                                m=m, m_unrestricted=m_unrestricted, success=success,
                                unrestricted_success=unrestricted, no_consistent=no_consistent)
    logger.info(f"|Theta(eps0)|={restricted_size}/{class_size}, m={m}: success "
                f"first={success['first']:.3f} worst={success['worst']:.3f} "
                f"(unrestricted worst={unrestricted['worst']:.3f})")
    return report
