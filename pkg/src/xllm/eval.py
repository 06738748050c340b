"""Character error rate, judge-relative scores, and report writers."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, UndefinedRateError

QUESTION_TYPES = ("conversation", "detail", "complex")


@dataclass(frozen=True)
class CerReport:
    substitutions: int
    insertions: int
    deletions: int
    reference_length: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def cer(self) -> float:
        return self.errors / self.reference_length

    def to_dict(self) -> dict:
        return {**asdict(self), "cer": self.cer}


def edit_table(reference: Sequence, hypothesis: Sequence) -> np.ndarray:
    """Levenshtein cost table; ``D[i, j]`` aligns ``reference[:i]`` with ``hypothesis[:j]``."""
    n, m = len(reference), len(hypothesis)
    D = np.zeros((n + 1, m + 1), dtype=np.int64)
    D[:, 0] = np.arange(n + 1)
    D[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        r = reference[i - 1]
        for j in range(1, m + 1):
            D[i, j] = min(D[i - 1, j - 1] + (r != hypothesis[j - 1]), D[i - 1, j] + 1, D[i, j - 1] + 1)
    return D


def cer(reference: Sequence, hypothesis: Sequence) -> CerReport:
    """Unit-cost alignment; counts come from one minimal backtrace.

    Walking back from the corner, ties prefer the diagonal (match or
    substitution), then deletion, then insertion.
    """
    if len(reference) == 0:
        raise UndefinedRateError("error rate is undefined for an empty reference")
    D = edit_table(reference, hypothesis)
    i, j = len(reference), len(hypothesis)
    s = ins = dele = 0
    while i > 0 or j > 0:
        if i > 0 and j > 0 and D[i, j] == D[i - 1, j - 1] + (reference[i - 1] != hypothesis[j - 1]):
            s += reference[i - 1] != hypothesis[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and D[i, j] == D[i - 1, j] + 1:
            dele += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return CerReport(int(s), ins, dele, len(reference))


def cer_corpus(references: Sequence[Sequence], hypotheses: Sequence[Sequence]) -> float:
    """Pooled rate: total edits over total reference tokens."""
    if len(references) != len(hypotheses):
        raise DataError("reference and hypothesis counts differ")
    reports = [cer(r, h) for r, h in zip(references, hypotheses)]
    return sum(r.errors for r in reports) / sum(r.reference_length for r in reports)


@dataclass(frozen=True)
class EvalRecord:
    question_id: str
    question_type: str
    candidate: str
    reference: str
    candidate_score: float
    reference_score: float

    def __post_init__(self):
        if self.question_type not in QUESTION_TYPES:
            raise DataError(f"unknown question type {self.question_type!r}")
        for s in (self.candidate_score, self.reference_score):
            if not 1 <= s <= 10:
                raise DataError(f"judge score {s} outside [1, 10]")


def relative_score(records: Iterable[EvalRecord]) -> dict[str, float]:
    """Percent ratio of summed candidate to summed reference scores, per type and overall.

    Types with no records are omitted.
    """
    records = list(records)
    if not records:
        raise UndefinedRateError("no records to score")
    out = {}
    for qt in QUESTION_TYPES + ("overall",):
        chosen = [r for r in records if qt == "overall" or r.question_type == qt]
        if not chosen:
            continue
        ref = sum(r.reference_score for r in chosen)
        if ref == 0:
            raise UndefinedRateError(f"reference scores for {qt} sum to zero")
        out[qt] = 100.0 * sum(r.candidate_score for r in chosen) / ref
    return out


def judge_stub(question_id: str, question_type: str, candidate: str, reference: str, seed: int = 0) -> EvalRecord:
    """Deterministic stand-in for an external judge: scores in [1, 10] hashed from the answers."""

    def score(text: str, role: str) -> int:
        h = hashlib.sha256(f"{seed}|{question_id}|{role}|{text}".encode()).digest()
        return 1 + h[0] % 10

    return EvalRecord(question_id, question_type, candidate, reference, score(candidate, "candidate"), score(reference, "reference"))


# ---------------------------------------------------------------------------
# record I/O and reports
# ---------------------------------------------------------------------------


def read_records(path) -> list[EvalRecord]:
    """Newline-delimited JSON, one ``EvalRecord`` per line (blank lines ignored)."""
    records = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append(EvalRecord(**json.loads(line)))
        except (json.JSONDecodeError, TypeError) as exc:
            raise DataError(f"{path}:{n}: bad record ({exc})") from None
    return records


def write_records(path, records: Iterable[EvalRecord]) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(asdict(r)) + "\n")


def relative_score_table(scores: dict[str, float]) -> str:
    """CSV with one row and the columns of a relative-score table."""
    buf = io.StringIO()
    cols = [c for c in QUESTION_TYPES + ("overall",) if c in scores]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["setting"] + cols)
    w.writerow(["model"] + [f"{scores[c]:.1f}" for c in cols])
    return buf.getvalue()


def cer_table(rows: dict[str, dict[str, float]]) -> str:
    """CSV of CER percentages: ``rows[setting][test_set]``."""
    buf = io.StringIO()
    sets = sorted({s for r in rows.values() for s in r})
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["setting"] + sets)
    for name, r in rows.items():
        w.writerow([name] + [f"{100 * r[s]:.2f}" if s in r else "" for s in sets])
    return buf.getvalue()


def write_report(stem, summary: dict, table_csv: str) -> tuple[Path, Path]:
    """Write ``<stem>.json`` and ``<stem>.csv``."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    js, cs = stem.with_suffix(".json"), stem.with_suffix(".csv")
    js.write_text(json.dumps(summary, indent=2, sort_keys=True))
    cs.write_text(table_csv)
    return js, cs
