"""Statistics over evaluated loss candidates.

Every evaluated candidate from a search is one data point. Candidates are
split by whether they contain a known sub-pattern, or by whether they
predict more elements of a kind than they consume, and the two groups are
compared with Welch's t-test.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .loss_dsl import (
    NAMED_PATTERNS,
    ElementKind,
    LossCandidate,
    Pattern,
    element_count,
    has_pattern,
    parse_candidate,
)


class DegenerateSample(ValueError):
    pass


class EmptyCategory(ValueError):
    pass


@dataclass(frozen=True)
class AnalysisRecord:
    candidate: LossCandidate
    score: float
    env_id: str
    stage: int


@dataclass(frozen=True)
class EffectReport:
    label: str
    mean_diff: float  # mean(with) - mean(without)
    t: float
    p: float
    dof: float
    n_with: int
    n_without: int
    mean_with: float
    mean_without: float
    n_failed: int = 0

    @property
    def stars(self) -> str:
        return stars(self.p)


def stars(p: float) -> str:
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


def welch_t_test(xs: Sequence[float], ys: Sequence[float]) -> tuple[float, float, float]:
    """Two-sided Welch test; returns (t, p, dof).

    With both variances zero the test is degenerate: equal means give
    (0, 1, nan), unequal means (+-inf, 0, nan).
    """
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.size < 2 or y.size < 2:
        raise DegenerateSample(f"need at least 2 values per group, got {x.size} and {y.size}")
    mx, my = x.mean(), y.mean()
    vx = x.var(ddof=1) / x.size
    vy = y.var(ddof=1) / y.size
    se2 = vx + vy
    if se2 == 0.0:
        if mx == my:
            return 0.0, 1.0, math.nan
        return math.copysign(math.inf, mx - my), 0.0, math.nan
    t = (mx - my) / math.sqrt(se2)
    dof = se2**2 / (vx**2 / (x.size - 1) + vy**2 / (y.size - 1))
    p = 2.0 * stats.t.sf(abs(t), dof)
    return float(t), float(min(1.0, p)), float(dof)


def _effect(label: str, records: Sequence[AnalysisRecord], flags: Iterable[bool]) -> EffectReport:
    with_, without, failed = [], [], 0
    for rec, flag in zip(records, flags):
        if not math.isfinite(rec.score):
            failed += 1
            continue
        (with_ if flag else without).append(rec.score)
    if not with_ or not without:
        raise EmptyCategory(f"{label}: {len(with_)} with, {len(without)} without")
    # sort so the result does not depend on record order
    with_.sort()
    without.sort()
    t, p, dof = welch_t_test(with_, without)
    mw, mo = float(np.mean(with_)), float(np.mean(without))
    return EffectReport(label, mw - mo, t, p, dof, len(with_), len(without), mw, mo, failed)


def pattern_effect(records: Sequence[AnalysisRecord], pattern: Pattern | str) -> EffectReport:
    label = pattern if isinstance(pattern, str) else str(pattern)
    if isinstance(pattern, str):
        pattern = NAMED_PATTERNS[pattern]
    return _effect(label, records, (has_pattern(r.candidate, pattern) for r in records))


def predicts_more(candidate: LossCandidate, kind: ElementKind) -> bool:
    m = candidate.masks
    return element_count(m.target, kind) > element_count(m.source, kind)


def cardinality_effect(records: Sequence[AnalysisRecord], kind: ElementKind) -> EffectReport:
    label = f"n_target({kind.name.lower()}) > n_source"
    return _effect(label, records, (predicts_more(r.candidate, kind) for r in records))


def histogram(records: Sequence[AnalysisRecord], bins: int,
              categories: dict[str, Sequence[bool]] | None = None
              ) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Percent of records per score bin, per category.

    Bin edges span [min(0, lowest), highest] over all finite scores so every
    record lands in a bin. Without ``categories`` there is one, "all".
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    finite = [i for i, r in enumerate(records) if math.isfinite(r.score)]
    scores = np.array([records[i].score for i in finite], dtype=float)
    if categories is None:
        categories = {"all": [True] * len(records)}
    lo = min(0.0, float(scores.min())) if scores.size else 0.0
    hi = float(scores.max()) if scores.size else 1.0
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    out = {}
    for name, member in categories.items():
        member = list(member)
        vals = np.array([records[i].score for i in finite if member[i]], dtype=float)
        counts, _ = np.histogram(vals, bins=edges)
        out[name] = 100.0 * counts / vals.size if vals.size else np.zeros(bins)
    return edges, out


# -- I/O -----------------------------------------------------------------------

RECORD_FIELDS = ["env", "stage", "candidate", "aulc"]
REPORT_FIELDS = ["env", "effect", "mean_diff", "t", "p", "dof", "n_with", "n_without",
                 "mean_with", "mean_without", "n_failed", "significance"]


def _g(x: float) -> str:
    return format(x, ".6g")


def export_records_csv(records: Iterable[AnalysisRecord], path: str | Path) -> Path:
    path = Path(path)
    try:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(RECORD_FIELDS)
            for r in records:
                w.writerow([r.env_id, r.stage, str(r.candidate), _g(r.score)])
    except OSError as e:
        raise OSError(f"cannot write {path}: {e}") from e
    return path


def read_records_csv(path: str | Path) -> list[AnalysisRecord]:
    with open(path, newline="") as f:
        return [AnalysisRecord(parse_candidate(row["candidate"]), float(row["aulc"]), row["env"],
                               int(row["stage"])) for row in csv.DictReader(f)]


def export_reports_csv(reports: Iterable[tuple[str, EffectReport]], path: str | Path) -> Path:
    """One row per (env, effect)."""
    path = Path(path)
    try:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(REPORT_FIELDS)
            for env, rep in reports:
                w.writerow([env, rep.label, _g(rep.mean_diff), _g(rep.t), _g(rep.p), _g(rep.dof),
                            rep.n_with, rep.n_without, _g(rep.mean_with), _g(rep.mean_without),
                            rep.n_failed, rep.stars])
    except OSError as e:
        raise OSError(f"cannot write {path}: {e}") from e
    return path


def export_csv(items, path: str | Path) -> Path:
    items = list(items)
    if items and isinstance(items[0], tuple):
        return export_reports_csv(items, path)
    return export_records_csv(items, path)


def load_search_log(path: str | Path, env_id: str | None = None) -> list[AnalysisRecord]:
    """Records from a ``search.jsonl`` file (or the directory holding it)."""
    path = Path(path)
    if path.is_dir():
        if env_id is None:
            env_id = _env_from_echo(path / "config.toml")
        path = path / "search.jsonl"
    env_id = env_id or "unknown"
    out = []
    with open(path) as f:
        for line in f:
            if not line.strip():
                continue
            d = json.loads(line)
            out.append(AnalysisRecord(parse_candidate(d["candidate"]), float(d["aulc"]),
                                      env_id, int(d["stage"])))
    return out


def _env_from_echo(path: Path) -> str | None:
    if not path.exists():
        return None
    from .config import load_toml

    return load_toml(path).get("env")


def full_report(records: Sequence[AnalysisRecord]) -> list[tuple[str, EffectReport]]:
    """Pattern and cardinality effects per environment; empty splits are skipped."""
    out = []
    for env in sorted({r.env_id for r in records}):
        subset = [r for r in records if r.env_id == env]
        for name in NAMED_PATTERNS:
            try:
                out.append((env, pattern_effect(subset, name)))
            except (EmptyCategory, DegenerateSample):
                pass
        for kind in ElementKind:
            try:
                out.append((env, cardinality_effect(subset, kind)))
            except (EmptyCategory, DegenerateSample):
                pass
    return out


def format_report(reports: Sequence[tuple[str, EffectReport]]) -> str:
    """Plain-text table: signed mean difference with significance stars."""
    lines = [f"{'env':<28}{'effect':<34}{'diff':>12}{'p':>12}{'n_with':>8}{'n_w/o':>8}"]
    for env, rep in reports:
        diff = f"{rep.mean_diff:+.3f}{rep.stars}"
        lines.append(f"{env:<28}{rep.label:<34}{diff:>12}{rep.p:>12.3g}{rep.n_with:>8}{rep.n_without:>8}")
    return "\n".join(lines)
