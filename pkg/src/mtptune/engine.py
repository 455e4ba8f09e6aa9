"""Budget-aware hyperparameter tuning engine.

The engine speaks an ask/tell protocol. ``ask`` hands out the next evaluation
(a configuration, a fidelity budget in epochs, and optionally a checkpoint
key to resume from), ``Wait`` while a rung barrier awaits stragglers, or
``Done`` once the epoch budget is consumed and nothing is outstanding.
``tell`` feeds a result back. The bundled :func:`run` drives an objective
serially or with a thread pool, but any harness honoring the protocol works.

Methods: plain random search at full fidelity (optionally with a doubled
budget), successive-halving brackets in the standard descending sweep, the
same bracket structure with density-ratio proposals, and a random-forest /
expected-improvement loop at full fidelity.

Budgets are accounted in epoch-equivalents. A resumed evaluation is charged
only the delta between its budget and its parent's.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait as futures_wait
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .space import ConfigSpace, Configuration
from .surrogates import (InsufficientData, Observation, ei_propose, kde_fit_pair,
                         kde_propose, rf_fit)

METHODS = ("random", "random_2x", "hyperband", "bohb", "smac")

STATUS_PENDING = "pending"
STATUS_RUNNING = "running"
STATUS_COMPLETED = "completed"
STATUS_FAILED = "failed"

LEDGER_VERSION = 1


# ----------------------------------------------------------------------
# schedule arithmetic
# ----------------------------------------------------------------------


def sh_schedule(n: int, r0: int, eta: int, R: int) -> list[tuple[int, int]]:
    """Successive-halving rungs [(n_k, r_k)].

    Rung k keeps max(n // eta^k, 1) configurations at budget
    min(r0 * eta^k, R); the schedule stops at the first rung that is either
    down to one configuration or at full budget, so no two rungs repeat a
    budget.
    """
    if n < 1 or r0 < 1 or eta < 2 or R < r0:
        raise ValueError("need n >= 1, 1 <= r0 <= R, eta >= 2")
    rungs: list[tuple[int, int]] = []
    k = 0
    while True:
        n_k = max(n // eta ** k, 1)
        r_k = min(r0 * eta ** k, R)
        rungs.append((n_k, r_k))
        if n_k == 1 or r_k == R:
            return rungs
        k += 1


def hyperband_brackets(R: int, eta: int) -> list[tuple[int, int, int]]:
    """Brackets (s, n_s, r_s) for s = s_max down to 0.

    s_max = floor(log_eta R); n_s = ceil((s_max + 1) / (s + 1) * eta^s)
    computed in exact integer arithmetic; r_s = R / eta^s rounded to an
    integer epoch count (exact whenever R is a power of eta).
    """
    if R < 1 or eta < 2:
        raise ValueError("need R >= 1 and eta >= 2")
    s_max = 0
    while eta ** (s_max + 1) <= R:
        s_max += 1
    brackets = []
    for s in range(s_max, -1, -1):
        n_s = -(-(s_max + 1) * eta ** s // (s + 1))
        power = eta ** s
        r_s = R // power if R % power == 0 else max(1, round(R / power))
        brackets.append((s, n_s, r_s))
    return brackets


def hyperband_cycle_cost(R: int, eta: int) -> int:
    """Epoch-equivalents one full bracket sweep consumes, with rung-to-rung
    resumes paying only their budget delta."""
    cost = 0
    for _, n, r in hyperband_brackets(R, eta):
        prev = 0
        for n_k, r_k in sh_schedule(n, r, eta, R):
            cost += n_k * (r_k - prev)
            prev = r_k
    return cost


def promote(rung_results: Sequence[tuple[int, float | None]], eta: int) -> list[int]:
    """Ids of the max(floor(n / eta), 1) best trials of a completed rung.

    Entries are (trial_id, val_loss); a missing loss (failed trial) ranks as
    infinity. Ties break toward the lower trial id.
    """
    if not rung_results:
        raise ValueError("empty rung")
    if eta < 2:
        raise ValueError("eta must be at least 2")
    keep = max(len(rung_results) // eta, 1)

    def key(entry: tuple[int, float | None]) -> tuple[float, int]:
        tid, loss = entry
        if loss is None or not math.isfinite(loss):
            return (math.inf, tid)
        return (loss, tid)

    return [tid for tid, _ in sorted(rung_results, key=key)[:keep]]


def pick_model_budget(counts: Mapping[int, int], min_points: int) -> int | None:
    """Largest budget level holding at least ``min_points`` observations."""
    eligible = [b for b, c in counts.items() if c >= min_points]
    return max(eligible) if eligible else None


# ----------------------------------------------------------------------
# trials and ledger
# ----------------------------------------------------------------------


@dataclass
class Trial:
    id: int
    config: Configuration
    budget: int
    status: str = STATUS_PENDING
    val_loss: float | None = None
    test_metrics: dict[str, float] = field(default_factory=dict)
    wall_clock: float | None = None
    parent_id: int | None = None
    committed_epochs: int = 0

    def to_record(self, record_timing: bool) -> dict[str, Any]:
        return {
            "id": self.id,
            "config": self.config,
            "budget": self.budget,
            "status": self.status,
            "val_loss": self.val_loss,
            "test_metrics": self.test_metrics,
            "wall_clock_s": self.wall_clock if record_timing else None,
            "parent_checkpoint": self.parent_id,
        }


@dataclass
class TrialLedger:
    """Append-only trial log plus run metadata."""

    metadata: dict[str, Any]
    trials: list[Trial] = field(default_factory=list)

    def append(self, trial: Trial) -> None:
        self.trials.append(trial)

    def completed(self) -> list[Trial]:
        return [t for t in self.trials if t.status == STATUS_COMPLETED]

    def to_jsonl(self, path: str, record_timing: bool = False) -> None:
        """One metadata record, then one record per trial in issue order.

        Wall-clock timings are volatile, so by default the field is written
        as null and identically seeded runs serialize byte-identically.
        """
        with open(path, "w") as fh:
            fh.write(json.dumps(self.metadata, sort_keys=True) + "\n")
            for t in self.trials:
                fh.write(json.dumps(t.to_record(record_timing), sort_keys=True) + "\n")

    @classmethod
    def from_jsonl(cls, path: str) -> "TrialLedger":
        with open(path) as fh:
            lines = [json.loads(line) for line in fh if line.strip()]
        if not lines:
            raise ValueError(f"{path}: empty ledger")
        ledger = cls(metadata=lines[0])
        for rec in lines[1:]:
            ledger.append(Trial(
                id=rec["id"], config=rec["config"], budget=rec["budget"],
                status=rec["status"], val_loss=rec["val_loss"],
                test_metrics=rec["test_metrics"], wall_clock=rec["wall_clock_s"],
                parent_id=rec["parent_checkpoint"]))
        return ledger


@dataclass(frozen=True)
class TrajectoryPoint:
    time: float  # cumulative epoch-equivalents consumed
    val_loss: float
    test_metrics: dict[str, float]


@dataclass(frozen=True)
class Bracket:
    s: int
    rungs: tuple[tuple[int, int], ...]
    survivors: tuple[tuple[int, ...], ...]  # promoted trial ids after each rung


# ----------------------------------------------------------------------
# tuner specification
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class TunerSpec:
    """What to run: method, fidelity ceiling R, epoch budget, seed.

    ``total_budget`` defaults to the cost of one full bracket sweep at
    (max_budget, eta), which keeps the methods comparable on one time axis.
    The random_2x method doubles it.
    """

    method: str
    max_budget: int = 27
    eta: int = 3
    total_budget: int | None = None
    seed: int = 0
    parallelism: int = 1
    # density-ratio knobs
    gamma: float = 0.15
    random_fraction: float = 1.0 / 3.0
    kde_min_points: int | None = None
    kde_candidates: int = 64
    # forest/improvement knobs
    n_init: int = 5
    n_trees: int = 10
    min_leaf_size: int = 1

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.max_budget < 1:
            raise ValueError("max_budget must be at least 1")
        if self.eta < 2:
            raise ValueError("eta must be at least 2")
        if self.total_budget is not None and self.total_budget < 1:
            raise ValueError("total_budget must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.parallelism < 1:
            raise ValueError("parallelism must be at least 1")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0 <= self.random_fraction <= 1:
            raise ValueError("random_fraction must lie in [0, 1]")
        if self.n_init < 1:
            raise ValueError("n_init must be at least 1")

    def effective_total_budget(self) -> int:
        base = self.total_budget
        if base is None:
            base = hyperband_cycle_cost(self.max_budget, self.eta)
        return 2 * base if self.method == "random_2x" else base


# ----------------------------------------------------------------------
# ask/tell protocol
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class Evaluate:
    trial_id: int
    config: Configuration
    budget: int
    resume_from: int | None  # checkpoint key: the parent trial id


class Wait:
    def __repr__(self) -> str:  # pragma: no cover
        return "Wait()"


class Done:
    def __repr__(self) -> str:  # pragma: no cover
        return "Done()"


@dataclass(frozen=True)
class TrialResult:
    val_loss: float
    test_metrics: dict[str, float]
    checkpoint: Any = None


@dataclass(frozen=True)
class TrialFailure:
    message: str


_EVAL = "eval"
_WAIT = "wait"
_DONE = "done"


class _RandomPlanner:
    """Fresh configurations at full fidelity until the budget runs out."""

    def __init__(self, state: "TuningRun"):
        self.state = state

    def next(self):
        st = self.state
        if st.committed >= st.total_budget:
            return _DONE
        return _EVAL, st.sample_config(), st.spec.max_budget, None

    def on_result(self, trial: Trial) -> None:
        pass


class _SmacPlanner:
    """Random warmup, then argmax expected improvement under a forest
    surrogate fitted to the completed full-fidelity trials."""

    def __init__(self, state: "TuningRun"):
        self.state = state
        self.issued = 0

    def next(self):
        st = self.state
        if st.committed >= st.total_budget:
            return _DONE
        self.issued += 1
        if self.issued <= st.spec.n_init:
            return _EVAL, st.sample_config(), st.spec.max_budget, None
        completed = st.ledger.completed()
        if len(completed) < 2:
            return _EVAL, st.sample_config(), st.spec.max_budget, None
        obs = [Observation(st.space.encode(t.config), t.budget, t.val_loss)
               for t in completed]
        surrogate = rf_fit(obs, n_trees=st.spec.n_trees,
                           min_leaf_size=st.spec.min_leaf_size, rng=st.model_rng)
        x = ei_propose(surrogate, obs, st.model_rng,
                       sample_encoded=lambda: st.space.encode(st.sample_config()))
        return _EVAL, st.space.decode(x), st.spec.max_budget, None

    def on_result(self, trial: Trial) -> None:
        pass


class _BracketPlanner:
    """Bracket sweep from s_max down to 0, cycling, with rung barriers.

    Configurations for a bracket are fixed when it starts. With proposals
    enabled, each slot flips a coin: with probability ``random_fraction`` it
    samples fresh, otherwise it draws from the good/bad density pair fitted
    at the largest budget level holding enough completed observations.
    """

    def __init__(self, state: "TuningRun", model_based: bool):
        self.state = state
        self.model_based = model_based
        self.brackets = hyperband_brackets(state.spec.max_budget, state.spec.eta)
        self.cycle_pos = 0
        self.bracket_log: list[Bracket] = []
        self._start_bracket()

    def _propose_configs(self, n: int) -> list[Configuration]:
        st = self.state
        if not self.model_based:
            return [st.sample_config() for _ in range(n)]
        pair = self._fit_pair()
        configs = []
        for _ in range(n):
            coin = st.coin_rng.random()
            if pair is None or coin < st.spec.random_fraction:
                configs.append(st.sample_config())
            else:
                x = kde_propose(pair, st.kde_rng, st.spec.kde_candidates)
                configs.append(st.space.decode(x))
        return configs

    def _fit_pair(self):
        st = self.state
        completed = st.ledger.completed()
        min_points = st.spec.kde_min_points
        if min_points is None:
            min_points = st.space.encoded_dim + 2
        counts: dict[int, int] = {}
        for t in completed:
            counts[t.budget] = counts.get(t.budget, 0) + 1
        level = pick_model_budget(counts, min_points)
        if level is None:
            return None
        obs = [Observation(st.space.encode(t.config), t.budget, t.val_loss)
               for t in completed if t.budget == level]
        try:
            return kde_fit_pair(obs, gamma=st.spec.gamma, min_points=min_points,
                                categorical_mask=st.space.categorical_mask)
        except InsufficientData:
            return None

    def _start_bracket(self) -> None:
        st = self.state
        s, n, r = self.brackets[self.cycle_pos % len(self.brackets)]
        self.rungs = sh_schedule(n, r, st.spec.eta, st.spec.max_budget)
        self.rung_k = 0
        configs = self._propose_configs(n)
        self.slots: list[tuple[Configuration, int | None]] = [(c, None) for c in configs]
        self.issued_ids: list[int] = []
        self.survivor_log: list[tuple[int, ...]] = []
        self.bracket_s = s

    def next(self):
        st = self.state
        while True:
            if st.committed >= st.total_budget:
                return _DONE
            n_k, r_k = self.rungs[self.rung_k]
            if len(self.issued_ids) < n_k:
                config, parent = self.slots[len(self.issued_ids)]
                return _EVAL, config, r_k, parent
            results = [st.trials[tid] for tid in self.issued_ids]
            if any(t.status in (STATUS_PENDING, STATUS_RUNNING) for t in results):
                return _WAIT
            if self.rung_k + 1 < len(self.rungs):
                survivors = promote([(t.id, t.val_loss) for t in results],
                                    st.spec.eta)
                self.survivor_log.append(tuple(survivors))
                # failed survivors have no checkpoint and restart from scratch
                self.slots = [
                    (st.trials[tid].config,
                     tid if st.trials[tid].status == STATUS_COMPLETED else None)
                    for tid in survivors
                ]
                self.issued_ids = []
                self.rung_k += 1
            else:
                self.bracket_log.append(Bracket(
                    s=self.bracket_s, rungs=tuple(self.rungs),
                    survivors=tuple(self.survivor_log)))
                self.cycle_pos += 1
                self._start_bracket()

    def on_issued(self, trial: Trial) -> None:
        self.issued_ids.append(trial.id)

    def on_result(self, trial: Trial) -> None:
        pass


class TuningRun:
    """Scheduler state machine behind the ask/tell protocol."""

    def __init__(self, spec: TunerSpec, space: ConfigSpace):
        self.spec = spec
        self.space = space
        self.total_budget = spec.effective_total_budget()
        self.sample_rng = np.random.default_rng((spec.seed, 1))
        self.coin_rng = np.random.default_rng((spec.seed, 2))
        self.kde_rng = np.random.default_rng((spec.seed, 3))
        self.model_rng = np.random.default_rng((spec.seed, 4))
        self.trials: dict[int, Trial] = {}
        self.outstanding: set[int] = set()
        self.committed = 0  # epochs charged at issue time
        self.consumed = 0   # epochs of finished trials
        self.incumbent: Trial | None = None
        self.trajectory: list[TrajectoryPoint] = []
        self._next_id = 0
        self._finalized = False
        self.ledger = TrialLedger(metadata={
            "ledger_version": LEDGER_VERSION,
            "method": spec.method,
            "seed": spec.seed,
            "max_budget": spec.max_budget,
            "eta": spec.eta,
            "total_budget": self.total_budget,
            "parallelism": spec.parallelism,
        })
        if spec.method in ("random", "random_2x"):
            self.planner: Any = _RandomPlanner(self)
        elif spec.method == "smac":
            self.planner = _SmacPlanner(self)
        else:
            self.planner = _BracketPlanner(self, model_based=spec.method == "bohb")

    def sample_config(self) -> Configuration:
        return self.space.sample(self.sample_rng)

    def ask(self) -> Evaluate | Wait | Done:
        if len(self.outstanding) >= self.spec.parallelism:
            return Wait()
        step = self.planner.next()
        if step == _DONE:
            return Done() if not self.outstanding else Wait()
        if step == _WAIT:
            return Wait()
        _, config, budget, parent_id = step
        delta = budget
        if parent_id is not None:
            delta = budget - self.trials[parent_id].budget
        trial = Trial(id=self._next_id, config=config, budget=budget,
                      status=STATUS_RUNNING, parent_id=parent_id,
                      committed_epochs=delta)
        self._next_id += 1
        self.trials[trial.id] = trial
        self.ledger.append(trial)
        self.outstanding.add(trial.id)
        self.committed += delta
        if hasattr(self.planner, "on_issued"):
            self.planner.on_issued(trial)
        return Evaluate(trial_id=trial.id, config=config, budget=budget,
                        resume_from=parent_id)

    def tell(self, trial_id: int, outcome: TrialResult | TrialFailure,
             wall_clock: float | None = None) -> None:
        if trial_id not in self.outstanding:
            raise KeyError(f"trial {trial_id} is not outstanding")
        trial = self.trials[trial_id]
        self.outstanding.discard(trial_id)
        self.consumed += trial.committed_epochs
        trial.wall_clock = wall_clock
        if isinstance(outcome, TrialFailure):
            trial.status = STATUS_FAILED
        else:
            if not math.isfinite(outcome.val_loss):
                trial.status = STATUS_FAILED
            else:
                trial.status = STATUS_COMPLETED
                trial.val_loss = float(outcome.val_loss)
                trial.test_metrics = dict(outcome.test_metrics)
                self._update_incumbent(trial)
        self.planner.on_result(trial)

    def _update_incumbent(self, trial: Trial) -> None:
        if self.incumbent is None or trial.val_loss < self.incumbent.val_loss:
            self.incumbent = trial
            point = TrajectoryPoint(time=float(self.consumed),
                                    val_loss=trial.val_loss,
                                    test_metrics=dict(trial.test_metrics))
            if self.trajectory and self.trajectory[-1].time == point.time:
                self.trajectory[-1] = point
            else:
                self.trajectory.append(point)

    def finalize(self) -> None:
        """Append the closing trajectory point at the final consumed time."""
        if self._finalized:
            return
        self._finalized = True
        if self.incumbent is not None and self.trajectory:
            last = self.trajectory[-1]
            if last.time < self.consumed:
                self.trajectory.append(TrajectoryPoint(
                    time=float(self.consumed), val_loss=last.val_loss,
                    test_metrics=dict(last.test_metrics)))

    def brackets(self) -> list[Bracket]:
        if isinstance(self.planner, _BracketPlanner):
            return list(self.planner.bracket_log)
        return []


# ----------------------------------------------------------------------
# harness
# ----------------------------------------------------------------------


@dataclass
class RunResult:
    ledger: TrialLedger
    trajectory: list[TrajectoryPoint]
    incumbent: Trial | None
    checkpoints: dict[int, Any]
    brackets: list[Bracket]

    def trajectory_points(self, metric_label: str) -> list[tuple[float, float, float]]:
        """(time, val_loss, metric) rows for CSV export."""
        return [(p.time, p.val_loss, p.test_metrics.get(metric_label, math.nan))
                for p in self.trajectory]


def _normalize(outcome: Any) -> TrialResult:
    if isinstance(outcome, TrialResult):
        return outcome
    val_loss, metrics, ckpt = outcome
    return TrialResult(val_loss=float(val_loss), test_metrics=dict(metrics),
                       checkpoint=ckpt)


def _safe_evaluate(objective, ev: Evaluate, parent_ckpt) -> tuple[Any, float]:
    t0 = time.perf_counter()
    try:
        outcome = _normalize(objective.evaluate(ev.config, ev.budget,
                                                resume_from=parent_ckpt))
    except Exception as exc:  # failed trials do not abort the run
        outcome = TrialFailure(message=f"{type(exc).__name__}: {exc}")
    return outcome, time.perf_counter() - t0


def run(spec: TunerSpec, space: ConfigSpace, objective) -> RunResult:
    """Drive an objective to budget exhaustion and collect the ledger.

    ``objective.evaluate(config, budget, resume_from)`` must return
    (val_loss, test_metrics, checkpoint) or a :class:`TrialResult`. A raised
    exception marks that trial failed and the run continues. Checkpoints are
    held keyed by trial id and passed back on resume.
    """
    state = TuningRun(spec, space)
    checkpoints: dict[int, Any] = {}

    def record(ev: Evaluate, outcome: Any, wall: float) -> None:
        if isinstance(outcome, TrialResult) and outcome.checkpoint is not None:
            checkpoints[ev.trial_id] = outcome.checkpoint
        state.tell(ev.trial_id, outcome, wall_clock=wall)

    if spec.parallelism == 1:
        while True:
            step = state.ask()
            if isinstance(step, Done):
                break
            if isinstance(step, Wait):
                raise RuntimeError("serial run must never be asked to wait")
            outcome, wall = _safe_evaluate(
                objective, step,
                checkpoints.get(step.resume_from) if step.resume_from is not None
                else None)
            record(step, outcome, wall)
    else:
        with ThreadPoolExecutor(max_workers=spec.parallelism) as pool:
            futures: dict[Any, Evaluate] = {}
            while True:
                step = state.ask()
                if isinstance(step, Done) and not futures:
                    break
                if isinstance(step, Evaluate):
                    parent = (checkpoints.get(step.resume_from)
                              if step.resume_from is not None else None)
                    fut = pool.submit(_safe_evaluate, objective, step, parent)
                    futures[fut] = step
                    continue
                done, _ = futures_wait(futures, return_when=FIRST_COMPLETED)
                for fut in done:
                    ev = futures.pop(fut)
                    outcome, wall = fut.result()
                    record(ev, outcome, wall)
    state.finalize()
    return RunResult(ledger=state.ledger, trajectory=state.trajectory,
                     incumbent=state.incumbent, checkpoints=checkpoints,
                     brackets=state.brackets())
