"""Ranking metrics: MAP, MRR, top-1 accuracy, and question-type breakdown."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Sequence

QUESTION_TYPES = ("who", "why", "how", "when", "where", "what")
OTHER = "other"


class NoRelevantCandidate(ValueError):
    """Raised for a ranking without any relevant candidate; such questions are excluded."""


def average_precision(labels: Sequence[int]) -> float:
    # exact rational accumulation, rounded once
    hits = 0
    total = Fraction(0)
    for k, rel in enumerate(labels, start=1):
        if rel:
            hits += 1
            total += Fraction(hits, k)
    if hits == 0:
        raise NoRelevantCandidate("average precision is undefined without a relevant candidate")
    return float(total / hits)


def reciprocal_rank(labels: Sequence[int]) -> float:
    for k, rel in enumerate(labels, start=1):
        if rel:
            return 1.0 / k
    raise NoRelevantCandidate("reciprocal rank is undefined without a relevant candidate")


@dataclass
class RankedQuestion:
    qid: str
    labels: List[int]
    qtype: str = OTHER


def top1_accuracy(run: Sequence[RankedQuestion]) -> float:
    if not run:
        raise ValueError("top-1 accuracy of an empty run")
    return sum(1 for q in run if q.labels[0]) / len(run)


def classify_question_type(tokens: Sequence[str]) -> str:
    """First interrogative word scanning left to right, else ``other``."""
    for tok in tokens:
        t = tok.lower()
        if t in QUESTION_TYPES:
            return t
    return OTHER


@dataclass
class EvalReport:
    map: float
    mrr: float
    top1_accuracy: float
    n_questions: int
    per_type: Dict[str, "EvalReport"] = field(default_factory=dict)

    def metrics(self) -> Dict[str, float]:
        return {"map": self.map, "mrr": self.mrr, "top1_accuracy": self.top1_accuracy}

    def to_text(self) -> str:
        lines = [
            f"MAP {self.map:.4f}",
            f"MRR {self.mrr:.4f}",
            f"top1_accuracy {self.top1_accuracy:.4f}",
            f"questions {self.n_questions}",
        ]
        return "\n".join(lines) + "\n"

    def to_kv(self) -> str:
        lines = [f"{k}={v:.4f}" for k, v in self.metrics().items()]
        lines.append(f"questions={self.n_questions}")
        for qtype, sub in self.per_type.items():
            for k, v in sub.metrics().items():
                lines.append(f"type.{qtype}.{k}={v:.4f}")
            lines.append(f"type.{qtype}.questions={sub.n_questions}")
        return "\n".join(lines) + "\n"

    def type_table(self) -> str:
        """Tab-separated per-type breakdown, one row per question type."""
        rows = ["type\tquestions\tmap\tmrr\ttop1_accuracy"]
        for qtype in QUESTION_TYPES + (OTHER,):
            sub = self.per_type.get(qtype)
            if sub is None:
                rows.append(f"{qtype}\t0\t-\t-\t-")
            else:
                rows.append(f"{qtype}\t{sub.n_questions}\t{sub.map:.4f}\t{sub.mrr:.4f}\t{sub.top1_accuracy:.4f}")
        return "\n".join(rows) + "\n"


def summarize(run: Sequence[RankedQuestion], by_type: bool = True) -> EvalReport:
    """Aggregate a run; questions without a relevant candidate are skipped."""
    kept = [q for q in run if any(q.labels)]
    if not kept:
        raise ValueError("no rankable questions in run")
    n = len(kept)
    report = EvalReport(
        map=sum(average_precision(q.labels) for q in kept) / n,
        mrr=sum(reciprocal_rank(q.labels) for q in kept) / n,
        top1_accuracy=top1_accuracy(kept),
        n_questions=n,
    )
    if by_type:
        groups: Dict[str, List[RankedQuestion]] = {}
        for q in kept:
            groups.setdefault(q.qtype, []).append(q)
        report.per_type = {
            t: summarize(groups[t], by_type=False) for t in QUESTION_TYPES + (OTHER,) if t in groups
        }
    return report


def parse_kv(text: str) -> Dict[str, str]:
    out = {}
    for line in text.splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out
