"""Cosine scoring, max-margin hinge loss and candidate ranking."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, List, Optional, Sequence, Union

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError, DegenerateRepresentationError, DimensionError

NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class LossConfig:
    margin: float = 0.2

    def __post_init__(self):
        if not 0.0 < self.margin <= 2.0:
            raise ConfigError(f"margin must lie in (0, 2], got {self.margin}")


def cosine(r_q: T.Tensor, r_a: T.Tensor) -> T.Tensor:
    if r_q.data.ndim != 1 or r_q.shape != r_a.shape:
        raise DimensionError(f"cosine: vectors of shapes {r_q.shape} and {r_a.shape}")
    x, y = r_q.data, r_a.data
    nx, ny = float(np.linalg.norm(x)), float(np.linalg.norm(y))
    if nx < NORM_FLOOR or ny < NORM_FLOOR:
        raise DegenerateRepresentationError(
            f"cosine: representation norm below {NORM_FLOOR} ({nx:.3g}, {ny:.3g})"
        )
    c = float(np.dot(x, y)) / (nx * ny)
    return T.record("cosine", (r_q, r_a), np.array(c), {"nx": nx, "ny": ny, "cos": c})


@T.register_backward("cosine")
def _cosine_backward(node, g):
    x, y = node.inputs[0].data, node.inputs[1].data
    nx, ny, c = node.saved["nx"], node.saved["ny"], node.saved["cos"]
    g = float(g)
    gx = g * (y / (nx * ny) - c * x / (nx * nx))
    gy = g * (x / (nx * ny) - c * y / (ny * ny))
    return gx, gy


def hinge_loss(cos_pos: T.Tensor, cos_neg: T.Tensor, margin: float) -> T.Tensor:
    """``max(0, m - cos_pos + cos_neg)``; subgradient 0 at the kink."""
    slack = margin - cos_pos.item() + cos_neg.item()
    return T.record("hinge", (cos_pos, cos_neg), np.array(max(0.0, slack)),
                    {"active": slack > 0.0}, kink_gap=abs(slack))


@T.register_backward("hinge")
def _hinge_backward(node, g):
    if not node.saved["active"]:
        return None, None
    return -g, g


@dataclass(frozen=True)
class ScoredCandidate:
    candidate_id: Hashable
    score: float
    label: Optional[int] = None


def rank_scores(scores: Sequence[float], ids: Optional[Sequence[Hashable]] = None,
                labels: Optional[Sequence[int]] = None) -> List[ScoredCandidate]:
    """Order by descending score, ties broken by ascending candidate id."""
    if len(scores) == 0:
        raise DataError("cannot rank an empty candidate pool")
    if ids is None:
        ids = range(len(scores))
    if labels is None:
        labels = [None] * len(scores)
    if not len(ids) == len(labels) == len(scores):
        raise DimensionError("scores, ids and labels must have equal length")
    cands = [ScoredCandidate(i, float(s), lab) for i, s, lab in zip(ids, scores, labels)]
    return sorted(cands, key=lambda c: (-c.score, c.candidate_id))


def rank_candidates(question_reps: Union[T.Tensor, np.ndarray, Sequence],
                    candidate_reps: Sequence,
                    ids: Optional[Sequence[Hashable]] = None,
                    labels: Optional[Sequence[int]] = None) -> List[ScoredCandidate]:
    """Rank candidates by cosine against the question.

    ``question_reps`` is either one vector shared by all candidates or a
    sequence aligned with ``candidate_reps`` (two-way attention gives the
    question a different representation for every candidate).
    """
    if len(candidate_reps) == 0:
        raise DataError("cannot rank an empty candidate pool")
    single = isinstance(question_reps, (T.Tensor, np.ndarray)) and np.ndim(_raw(question_reps)) == 1
    qs = [question_reps] * len(candidate_reps) if single else list(question_reps)
    if len(qs) != len(candidate_reps):
        raise DimensionError("one question representation per candidate is required")
    with T.no_grad():
        scores = [cosine(_as_tensor(q), _as_tensor(a)).item() for q, a in zip(qs, candidate_reps)]
    return rank_scores(scores, ids, labels)


def _raw(x):
    return x.data if isinstance(x, T.Tensor) else np.asarray(x)


def _as_tensor(x) -> T.Tensor:
    return x if isinstance(x, T.Tensor) else T.Tensor(x)
