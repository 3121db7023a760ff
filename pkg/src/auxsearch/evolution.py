"""Evolutionary outer loop over auxiliary-loss genomes.

Each stage trains every candidate, scores it by the mean of its evaluation
checkpoints, keeps the top fraction and mutates them into the next
population. There is no elitism: survivors are only ever parents.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .envs import EnvSpec
from .loss_dsl import (
    ALL_OPERATORS,
    MAX_HORIZON,
    MIN_HORIZON,
    LossCandidate,
    MaskPair,
    OperatorSpec,
    forward_dynamics_candidate,
    parse_candidate,
    sequence_length,
    validate,
)
from .rl_core.train import LearningCurve, RLConfig, train_run
from .seeding import derive_rng, derive_seed

logger = logging.getLogger(__name__)

SEARCH_LOG = "search.jsonl"
SURVIVOR_LOG = "survivors.jsonl"


class EmptyCurve(ValueError):
    pass


class HorizonMismatch(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EvolutionConfig:
    population: int = 100
    survivor_fraction: float = 0.25
    mix_replacement: float = 0.5
    mix_crossover: float = 0.2
    mix_horizon: float = 0.1
    mix_random: float = 0.2
    stages: int = 5
    prior_fraction: float = 0.25
    operator: str = "mse"
    env: str = "pointmass-dense"
    budget: int = 5000
    seed: int = 0
    workers: int = 1
    record_wall_time: bool = False

    def __post_init__(self):
        mix = (self.mix_replacement, self.mix_crossover, self.mix_horizon, self.mix_random)
        if any(m < 0 for m in mix) or not math.isclose(sum(mix), 1.0, abs_tol=1e-9):
            raise ConfigError(f"mutation mix must be non-negative and sum to 1, got {mix}")
        if not 0.0 < self.survivor_fraction < 1.0:
            raise ConfigError(f"survivor_fraction must be in (0, 1), got {self.survivor_fraction}")
        if not 0.0 <= self.prior_fraction <= 1.0:
            raise ConfigError(f"prior_fraction must be in [0, 1], got {self.prior_fraction}")
        if self.population < 1 or self.stages < 1 or self.workers < 1:
            raise ConfigError("population, stages and workers must be >= 1")
        if self.budget < 0 or self.seed < 0:
            raise ConfigError("budget and seed must be >= 0")
        try:
            OperatorSpec.from_name(self.operator)
            EnvSpec.parse(self.env)
        except ValueError as e:
            raise ConfigError(str(e)) from None

    @property
    def operator_spec(self) -> OperatorSpec:
        return OperatorSpec.from_name(self.operator)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class CandidateRecord:
    stage: int
    index: int
    candidate: LossCandidate
    score: float
    curve: LearningCurve | None
    seed: int
    wall_ms: int = 0

    def to_json(self) -> str:
        checkpoints = [] if self.curve is None else [[s, v] for s, v in self.curve.checkpoints]
        return json.dumps({
            "stage": self.stage,
            "index": self.index,
            "candidate": str(self.candidate),
            "aulc": self.score,
            "checkpoints": checkpoints,
            "seed": self.seed,
            "wall_ms": self.wall_ms,
        })

    @classmethod
    def from_json(cls, line: str) -> CandidateRecord:
        d = json.loads(line)
        curve = None
        if d["checkpoints"]:
            curve = LearningCurve([(int(s), float(v)) for s, v in d["checkpoints"]], d["seed"])
        return cls(d["stage"], d["index"], parse_candidate(d["candidate"]), float(d["aulc"]),
                   curve, d["seed"], d["wall_ms"])


@dataclass
class StageLog:
    stage: int
    records: list[CandidateRecord]
    survivors: list[CandidateRecord]
    rng_key: tuple[int, str, int] = (0, "mutate", 0)


@dataclass
class SearchLog:
    config: EvolutionConfig
    stages: list[StageLog] = field(default_factory=list)

    @property
    def records(self) -> list[CandidateRecord]:
        return [r for st in self.stages for r in st.records]

    def best(self) -> CandidateRecord:
        return select_top(self.records, 1e-12)[0]


# -- scoring and selection ---------------------------------------------------

def aulc(curve: LearningCurve | Sequence[float]) -> float:
    """Area under the learning curve, approximated by the checkpoint mean."""
    scores = curve.scores if isinstance(curve, LearningCurve) else list(curve)
    if not scores:
        raise EmptyCurve("curve has no checkpoints")
    return float(math.fsum(scores) / len(scores))


def select_top(records: Sequence[CandidateRecord], fraction: float) -> list[CandidateRecord]:
    """The floor(fraction * n) best records (at least one); ties go to the lower index."""
    if not records:
        raise ValueError("select_top needs at least one record")
    n = max(1, math.floor(fraction * len(records) + 1e-9))
    ranked = sorted(records, key=lambda r: (-_finite_or_low(r.score), r.index))
    return ranked[:n]


def _finite_or_low(x: float) -> float:
    return -math.inf if math.isnan(x) else x


# -- mutation operators --------------------------------------------------------

def _arrays(c: LossCandidate) -> tuple[np.ndarray, np.ndarray]:
    return np.array(c.masks.source, dtype=np.int8), np.array(c.masks.target, dtype=np.int8)


def _build(k: int, src, tgt, op: OperatorSpec) -> LossCandidate:
    return LossCandidate(MaskPair(k, tuple(int(b) for b in src), tuple(int(b) for b in tgt)), op)


def replacement_probability(k: int) -> float:
    return 1.0 / (2 * sequence_length(k))


def mutate_replacement(c: LossCandidate, rng: np.random.Generator) -> LossCandidate:
    """Flip every source and target bit independently with p = 1 / (2 (3k + 3))."""
    src, tgt = _arrays(c)
    p = replacement_probability(c.horizon)
    src ^= (rng.random(src.size) < p).astype(np.int8)
    tgt ^= (rng.random(tgt.size) < p).astype(np.int8)
    return _build(c.horizon, src, tgt, c.operator)


def mutate_crossover(a: LossCandidate, b: LossCandidate, rng: np.random.Generator) -> LossCandidate:
    """Uniform crossover of two equal-horizon parents; the operator comes from ``a``."""
    if a.horizon != b.horizon:
        raise HorizonMismatch(f"crossover needs equal horizons, got {a.horizon} and {b.horizon}")
    (sa, ta), (sb, tb) = _arrays(a), _arrays(b)
    src = np.where(rng.random(sa.size) < 0.5, sa, sb)
    tgt = np.where(rng.random(ta.size) < 0.5, ta, tb)
    return _build(a.horizon, src, tgt, a.operator)


def mutate_horizon(c: LossCandidate, direction: str, rng: np.random.Generator) -> LossCandidate:
    """Drop or append the last (s, a, r) step in both masks.

    A move that would leave [MIN_HORIZON, MAX_HORIZON] is applied in the
    opposite direction instead.
    """
    if direction not in ("increase", "decrease"):
        raise ValueError(f"direction must be 'increase' or 'decrease', got {direction!r}")
    k = c.horizon
    if direction == "decrease" and k <= MIN_HORIZON:
        direction = "increase"
    elif direction == "increase" and k >= MAX_HORIZON:
        direction = "decrease"
    src, tgt = _arrays(c)
    if direction == "decrease":
        return _build(k - 1, src[:-3], tgt[:-3], c.operator)
    extra_src = (rng.random(3) < 0.5).astype(np.int8)
    extra_tgt = (rng.random(3) < 0.5).astype(np.int8)
    return _build(k + 1, np.concatenate([src, extra_src]), np.concatenate([tgt, extra_tgt]), c.operator)


def random_candidate(rng: np.random.Generator, prior: str | None = None,
                     operator: OperatorSpec = OperatorSpec()) -> LossCandidate:
    """Fresh genome with horizon uniform in [1, 10]; may be invalid.

    ``prior="forward"`` biases towards forward-dynamics shapes (few source
    states, many source actions, target states complementing source states);
    ``prior="reward"`` towards reward prediction (target holds rewards only).
    """
    k = int(rng.integers(MIN_HORIZON, MAX_HORIZON + 1))
    n = sequence_length(k)
    src = (rng.random(n) < 0.5).astype(np.int8)
    tgt = (rng.random(n) < 0.5).astype(np.int8)
    if prior == "forward":
        src[0::3] = rng.random(k + 1) < 0.2
        src[1::3] = rng.random(k + 1) < 0.8
        tgt[0::3] = 1 - src[0::3]
    elif prior == "reward":
        tgt[2::3] = rng.random(k + 1) < 0.8
        tgt[0::3] = 0
        tgt[1::3] = 0
    elif prior is not None:
        raise ValueError(f"unknown prior {prior!r}")
    return _build(k, src, tgt, operator)


def _until_valid(make: Callable[[], LossCandidate]) -> LossCandidate:
    while True:
        c = make()
        if validate(c):
            return c


# -- populations -------------------------------------------------------------

@dataclass(frozen=True)
class Offspring:
    candidate: LossCandidate
    origin: str  # replacement | crossover | horizon | random | crossover-fallback


def generation_plan(config: EvolutionConfig) -> dict[str, int]:
    """Slot counts per mutation type; ceilings applied in order, random takes the rest."""
    p = config.population
    plan: dict[str, int] = {}
    left = p
    for name, share in (("replacement", config.mix_replacement),
                        ("crossover", config.mix_crossover),
                        ("horizon", config.mix_horizon)):
        n = min(left, math.ceil(share * p - 1e-9))
        plan[name] = n
        left -= n
    plan["random"] = left
    return plan


def next_generation_detailed(survivors: Sequence[LossCandidate], config: EvolutionConfig,
                             rng: np.random.Generator) -> list[Offspring]:
    if not survivors:
        raise ValueError("next_generation needs at least one survivor")
    plan = generation_plan(config)
    op = config.operator_spec
    out: list[Offspring] = []

    for i in range(plan["replacement"]):
        parent = survivors[i % len(survivors)]
        out.append(Offspring(_until_valid(lambda: mutate_replacement(parent, rng)), "replacement"))

    pairs = [(i, j) for i in range(len(survivors)) for j in range(i + 1, len(survivors))
             if survivors[i].horizon == survivors[j].horizon]
    for _ in range(plan["crossover"]):
        if not pairs:
            child = _until_valid(lambda: random_candidate(rng, operator=op))
            out.append(Offspring(child, "crossover-fallback"))
            continue

        def cross():
            i, j = pairs[int(rng.integers(len(pairs)))]
            return mutate_crossover(survivors[i], survivors[j], rng)

        out.append(Offspring(_until_valid(cross), "crossover"))

    for _ in range(plan["horizon"]):
        def shift():
            parent = survivors[int(rng.integers(len(survivors)))]
            direction = "increase" if rng.random() < 0.5 else "decrease"
            return mutate_horizon(parent, direction, rng)

        out.append(Offspring(_until_valid(shift), "horizon"))

    for _ in range(plan["random"]):
        out.append(Offspring(_until_valid(lambda: random_candidate(rng, operator=op)), "random"))
    return out


def next_generation(survivors: Sequence[LossCandidate], config: EvolutionConfig,
                    rng: np.random.Generator) -> list[LossCandidate]:
    return [o.candidate for o in next_generation_detailed(survivors, config, rng)]


def bootstrap_population(config: EvolutionConfig, rng: np.random.Generator) -> list[LossCandidate]:
    """Unprimed random genomes, then forward-dynamics and reward-prior genomes."""
    p = config.population
    n_random = math.ceil((1.0 - config.prior_fraction) * p - 1e-9)
    rest = p - n_random
    n_forward = math.ceil(rest / 2)
    op = config.operator_spec
    pop = [_until_valid(lambda: random_candidate(rng, operator=op)) for _ in range(n_random)]
    pop += [_until_valid(lambda: random_candidate(rng, "forward", op)) for _ in range(n_forward)]
    pop += [_until_valid(lambda: random_candidate(rng, "reward", op)) for _ in range(rest - n_forward)]
    return pop


# -- evaluators ----------------------------------------------------------------

@dataclass(frozen=True)
class RLEvaluator:
    """Scores a candidate by a full inner-loop training run."""

    env_id: str
    budget: int
    rl_config: RLConfig = RLConfig()

    def __call__(self, candidate: LossCandidate | None, seed: int) -> LearningCurve:
        return train_run(candidate, self.env_id, self.budget, seed, self.rl_config)


def hamming_distance(a: LossCandidate, b: LossCandidate) -> int:
    """Bit distance with both masks zero-padded to the longest horizon."""
    n = sequence_length(MAX_HORIZON)

    def pad(bits):
        return np.pad(np.array(bits, dtype=np.int8), (0, n - len(bits)))

    return int(np.sum(pad(a.masks.source) != pad(b.masks.source))
               + np.sum(pad(a.masks.target) != pad(b.masks.target)))


@dataclass(frozen=True)
class HammingFitness:
    """Surrogate evaluator: negative Hamming distance to a hidden genome."""

    target: LossCandidate

    def __call__(self, candidate: LossCandidate, seed: int) -> LearningCurve:
        return LearningCurve([(0, -float(hamming_distance(candidate, self.target)))], seed)


def _evaluate_one(task) -> tuple[LearningCurve | None, float, str | None]:
    evaluator, candidate, seed = task
    start = time.perf_counter()
    try:
        curve = evaluator(candidate, seed)
        error = None
    except Exception as e:  # a failed run scores -inf, the stage goes on
        curve, error = None, f"{type(e).__name__}: {e}"
    return curve, time.perf_counter() - start, error


def evaluate_all(evaluator, candidates: Sequence, seeds: Sequence[int],
                 workers: int = 1) -> list[tuple[LearningCurve | None, float, str | None]]:
    """Evaluate in parallel; results come back in input order."""
    tasks = [(evaluator, c, s) for c, s in zip(candidates, seeds)]
    if workers <= 1 or len(tasks) <= 1:
        return [_evaluate_one(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_evaluate_one, tasks))


# -- search driver -------------------------------------------------------------

def _stage_records(config: EvolutionConfig, stage: int, population: Sequence[LossCandidate],
                   evaluator) -> list[CandidateRecord]:
    seeds = [derive_seed(config.seed, "train", stage, i) for i in range(len(population))]
    results = evaluate_all(evaluator, population, seeds, config.workers)
    records = []
    for i, (cand, seed, (curve, wall, error)) in enumerate(zip(population, seeds, results)):
        if error is not None:
            logger.warning("stage %d candidate %d failed: %s", stage, i, error)
            score, curve = -math.inf, None
        else:
            score = aulc(curve)
        wall_ms = int(round(wall * 1000)) if config.record_wall_time else 0
        records.append(CandidateRecord(stage, i, cand, score, curve, seed, wall_ms))
    return records


def _read_stages(out_dir: Path, population: int) -> tuple[list[list[str]], list[list[CandidateRecord]]]:
    """Complete stages from an existing log; a torn tail is dropped."""
    path = out_dir / SEARCH_LOG
    if not path.exists():
        return [], []
    by_stage: dict[int, list[tuple[str, CandidateRecord]]] = {}
    for line in path.read_text().splitlines():
        try:
            rec = CandidateRecord.from_json(line)
        except (ValueError, KeyError, TypeError):
            break
        by_stage.setdefault(rec.stage, []).append((line, rec))
    lines, records = [], []
    for stage in sorted(by_stage):
        if stage != len(records) + 1 or len(by_stage[stage]) != population:
            break
        lines.append([ln for ln, _ in by_stage[stage]])
        records.append([r for _, r in by_stage[stage]])
    return lines, records


def _write_stage(out_dir: Path, stage: StageLog) -> None:
    with open(out_dir / SEARCH_LOG, "a") as f:
        for r in stage.records:
            f.write(r.to_json() + "\n")
        f.flush()
        os.fsync(f.fileno())
    with open(out_dir / SURVIVOR_LOG, "a") as f:
        f.write(json.dumps({"stage": stage.stage,
                            "survivors": [str(r.candidate) for r in stage.survivors]}) + "\n")
        f.flush()


def run_search(config: EvolutionConfig, evaluator=None, out_dir: str | Path | None = None,
               resume: bool = False, rl_config: RLConfig | None = None) -> SearchLog:
    """Bootstrap, then per stage: evaluate, score, select, mutate.

    Deterministic for a given config regardless of ``workers``. With
    ``out_dir`` each finished stage is appended to ``search.jsonl``; with
    ``resume`` the completed stages there are reused and the rest recomputed.
    """
    if evaluator is None:
        evaluator = RLEvaluator(config.env, config.budget, rl_config or RLConfig())
    out = Path(out_dir) if out_dir is not None else None
    log = SearchLog(config)

    done_lines: list[list[str]] = []
    done_records: list[list[CandidateRecord]] = []
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if resume:
            done_lines, done_records = _read_stages(out, config.population)
        # rewrite from the last complete stage so a torn tail disappears
        (out / SEARCH_LOG).write_text("".join(ln + "\n" for st in done_lines for ln in st))
        (out / SURVIVOR_LOG).write_text("")

    population = bootstrap_population(config, derive_rng(config.seed, "bootstrap"))
    for stage in range(1, config.stages + 1):
        if stage <= len(done_records):
            records = done_records[stage - 1]
            logger.info("stage %d restored from log", stage)
        else:
            records = _stage_records(config, stage, population, evaluator)
        survivors = select_top(records, config.survivor_fraction)
        st = StageLog(stage, records, survivors, (config.seed, "mutate", stage))
        log.stages.append(st)
        if out is not None:
            if stage <= len(done_records):
                with open(out / SURVIVOR_LOG, "a") as f:
                    f.write(json.dumps({"stage": stage,
                                        "survivors": [str(r.candidate) for r in survivors]}) + "\n")
            else:
                _write_stage(out, st)
        best = survivors[0]
        logger.info("stage %d best %.4f %s", stage, best.score, best.candidate)
        if stage < config.stages:
            population = next_generation([r.candidate for r in survivors], config,
                                         derive_rng(config.seed, "mutate", stage))
    return log


def random_search(config: EvolutionConfig, evaluator, n: int | None = None) -> list[CandidateRecord]:
    """Equal-budget baseline: ``population * stages`` independent random genomes."""
    n = config.population * config.stages if n is None else n
    rng = derive_rng(config.seed, "surrogate", 1)
    op = config.operator_spec
    cands = [_until_valid(lambda: random_candidate(rng, operator=op)) for _ in range(n)]
    seeds = [derive_seed(config.seed, "train", 0, i) for i in range(n)]
    results = evaluate_all(evaluator, cands, seeds, config.workers)
    return [CandidateRecord(0, i, c, -math.inf if curve is None else aulc(curve), curve, s)
            for i, (c, s, (curve, _, _)) in enumerate(zip(cands, seeds, results))]


# -- operator pruning and cross-validation -------------------------------------

@dataclass(frozen=True)
class OperatorScore:
    operator: OperatorSpec
    mean: float
    std: float
    scores: tuple[float, ...]


def prune_operators(config: EvolutionConfig, trials: int = 3, evaluator=None) -> list[OperatorScore]:
    """Rank all ten operators by mean AULC on the forward-dynamics input.

    Trial ``t`` uses the same seed for every operator. Ties keep enum order.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    evaluator = evaluator or RLEvaluator(config.env, config.budget)
    seeds = [derive_seed(config.seed, "prune", t) for t in range(trials)]
    cands = [forward_dynamics_candidate(op) for op in ALL_OPERATORS for _ in seeds]
    results = evaluate_all(evaluator, cands, seeds * len(ALL_OPERATORS), config.workers)
    out = []
    for i, op in enumerate(ALL_OPERATORS):
        chunk = results[i * trials:(i + 1) * trials]
        scores = tuple(-math.inf if c is None else aulc(c) for c, _, _ in chunk)
        finite = [s for s in scores if math.isfinite(s)]
        mean = float(np.mean(finite)) if finite else -math.inf
        std = float(np.std(finite)) if finite else 0.0
        out.append(OperatorScore(op, mean, std, scores))
    return sorted(out, key=lambda o: -o.mean)


def format_operator_table(scores: Iterable[OperatorScore]) -> str:
    """Two-row layout: with and without negatives, one column per measure."""
    by_op = {s.operator: s for s in scores}
    measures = [op.measure for op in ALL_OPERATORS[:5]]
    head = "operator".ljust(24) + "".join(m.value.rjust(20) for m in measures)
    rows = [head]
    for neg, label in ((True, "w/ negative samples"), (False, "w/o negative samples")):
        cells = []
        for m in measures:
            s = by_op.get(OperatorSpec(m, neg))
            cells.append("n/a".rjust(20) if s is None else f"{s.mean:.3f} ± {s.std:.3f}".rjust(20))
        rows.append(label.ljust(24) + "".join(cells))
    return "\n".join(rows)


@dataclass
class CrossValidation:
    winner_index: int
    winner: LossCandidate
    raw: np.ndarray  # (candidates, envs) mean AULC over seeds
    normalized: np.ndarray
    mean_normalized: np.ndarray
    env_ids: list[str]


def cross_validate(candidates: Sequence[LossCandidate], env_ids: Sequence[str],
                   seeds: int | Sequence[int] = 1, evaluator_factory=None,
                   budget: int = 5000, global_seed: int = 0, workers: int = 1) -> CrossValidation:
    """Train every candidate on every environment and seed; normalize per env by the max."""
    if not candidates or not env_ids:
        raise ValueError("cross_validate needs candidates and environments")
    if isinstance(seeds, int):
        seeds = [derive_seed(global_seed, "cross_validate", t) for t in range(seeds)]
    factory = evaluator_factory or (lambda env: RLEvaluator(env, budget))
    raw = np.zeros((len(candidates), len(env_ids)))
    for e, env in enumerate(env_ids):
        ev = factory(env)
        tasks = [c for c in candidates for _ in seeds]
        results = evaluate_all(ev, tasks, list(seeds) * len(candidates), workers)
        for ci in range(len(candidates)):
            chunk = results[ci * len(seeds):(ci + 1) * len(seeds)]
            raw[ci, e] = np.mean([-math.inf if c is None else aulc(c) for c, _, _ in chunk])
    col_max = raw.max(axis=0)
    scale = np.where(col_max > 0, col_max, 1.0)
    normalized = raw / scale
    mean_norm = normalized.mean(axis=1)
    winner = int(np.argmax(mean_norm))  # first maximum: lower index wins ties
    return CrossValidation(winner, candidates[winner], raw, normalized, mean_norm, list(env_ids))
