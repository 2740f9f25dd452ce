"""Triplet sampling, dropout, Adagrad and the training loop."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .attention import dump_record
from .data import QADataset, build_vocab
from .embedding import Sentence, Vocabulary, pad_truncate
from .errors import ConfigError, DataError, DegenerateRepresentationError, NumericalError
from .metrics import EvalReport, RankedQuestion, classify_question_type, summarize
from .model import AMMSNN, ModelConfig
from .scoring import cosine, hinge_loss, rank_scores

logger = logging.getLogger(__name__)

SELECT_METRICS = ("map", "mrr", "top1_accuracy")


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    lr: float = 0.001
    dropout: float = 0.3
    margin: float = 0.2
    epochs: int = 10
    negatives: int = 5
    seed: int = 1234
    min_count: int = 1
    eps: float = 1e-8
    select_metric: str = "map"

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if not 0.0 < self.margin <= 2.0:
            raise ConfigError(f"margin must lie in (0, 2], got {self.margin}")
        if self.epochs < 0 or self.negatives < 1 or self.min_count < 1:
            raise ConfigError("epochs >= 0, negatives >= 1 and min_count >= 1 are required")
        if self.select_metric not in SELECT_METRICS:
            raise ConfigError(f"select_metric must be one of {SELECT_METRICS}")


@dataclass
class EncodedQuestion:
    qid: str
    tokens: List[str]
    question: Sentence
    candidates: List[Sentence]
    candidate_tokens: List[List[str]]
    labels: List[int]

    @property
    def qtype(self) -> str:
        return classify_question_type(self.tokens)


def encode_dataset(dataset: QADataset, vocab: Vocabulary, L: int) -> List[EncodedQuestion]:
    out = []
    for q in dataset.questions:
        out.append(EncodedQuestion(
            q.qid,
            q.tokens,
            pad_truncate(vocab.encode(q.tokens), L),
            [pad_truncate(vocab.encode(c.tokens), L) for c in q.candidates],
            [c.tokens for c in q.candidates],
            [c.label for c in q.candidates],
        ))
    return out


@dataclass(frozen=True)
class Triplet:
    qid: str
    question: Sentence
    positive: Sentence
    negative: Sentence


def sample_triplets(questions: Sequence[EncodedQuestion], negatives_per_positive: int,
                    rng: np.random.Generator) -> Tuple[List[Triplet], int]:
    """One epoch of triplets, shuffled.

    Negatives are drawn without replacement from the question's pool, or
    with replacement when the pool is smaller than requested.  Returns the
    triplets and the number of questions skipped for lack of negatives.
    """
    triplets: List[Triplet] = []
    skipped = 0
    for q in questions:
        pos = [s for s, lab in zip(q.candidates, q.labels) if lab == 1]
        neg = [s for s, lab in zip(q.candidates, q.labels) if lab == 0]
        if not pos:
            continue
        if not neg:
            skipped += 1
            continue
        replace = len(neg) < negatives_per_positive
        for p in pos:
            for j in rng.choice(len(neg), size=negatives_per_positive, replace=replace):
                triplets.append(Triplet(q.qid, q.question, p, neg[int(j)]))
    if skipped:
        logger.warning("skipped %d question(s) without negative candidates", skipped)
    order = rng.permutation(len(triplets))
    return [triplets[i] for i in order], skipped


def apply_dropout(x: T.Tensor, p: float, rng: np.random.Generator, training: bool) -> T.Tensor:
    """Inverted dropout; identity at inference or when ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = rng.random(x.shape) >= p
    return T.mul_const(x, keep / (1.0 - p))


@dataclass
class OptimizerState:
    lr: float
    eps: float = 1e-8
    accum: Dict[str, np.ndarray] = field(default_factory=dict)


def adagrad_step(params: Sequence[Tuple[str, T.Tensor]], state: OptimizerState) -> None:
    """``acc += g**2; p -= lr * g / (sqrt(acc) + eps)``, then zero the gradients."""
    for name, p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NumericalError(f"non-finite gradient in parameter {name!r}")
    for name, p in params:
        g = p.grad
        acc = state.accum.get(name)
        if acc is None:
            acc = state.accum[name] = np.zeros_like(p.data)
        acc += g * g
        denom = np.sqrt(acc) + state.eps
        p.data -= state.lr * np.divide(g, denom, out=np.zeros_like(g), where=denom > 0)
        p.zero_grad()


def triplet_loss(model: AMMSNN, trip: Triplet, margin: float, dropout: float = 0.0,
                 rng: Optional[np.random.Generator] = None, training: bool = False) -> T.Tensor:
    qf = model.feature_map(trip.question)
    r_q1, r_p, _ = model.represent_pair(qf, model.feature_map(trip.positive))
    r_q2, r_n, _ = model.represent_pair(qf, model.feature_map(trip.negative))
    if training and dropout > 0.0:
        r_q1, r_p, r_q2, r_n = (apply_dropout(r, dropout, rng, True) for r in (r_q1, r_p, r_q2, r_n))
    return hinge_loss(cosine(r_q1, r_p), cosine(r_q2, r_n), margin)


def rank_question(model: AMMSNN, q: EncodedQuestion, keep_states: bool = False):
    """Score and rank one question's pool; returns ranking and optional attention states."""
    states = []
    with T.no_grad():
        qf = model.feature_map(q.question)
        scores = []
        for a in q.candidates:
            r_q, r_a, st = model.represent_pair(qf, model.feature_map(a))
            scores.append(cosine(r_q, r_a).item())
            if keep_states:
                states.append(st)
    ranking = rank_scores(scores, list(range(len(scores))), q.labels)
    return ranking, states


def evaluate(model: AMMSNN, questions: Sequence[EncodedQuestion],
             dump_attention: int = 0) -> Tuple[EvalReport, List[dict]]:
    """Rank every pool; optionally collect attention records for the first questions."""
    run = []
    dumps: List[dict] = []
    for i, q in enumerate(questions):
        want = i < dump_attention and model.attention is not None
        ranking, states = rank_question(model, q, keep_states=want)
        run.append(RankedQuestion(q.qid, [c.label for c in ranking], q.qtype))
        if want:
            scores = {c.candidate_id: c.score for c in ranking}
            for j, st in enumerate(states):
                dumps.append(dump_record(
                    st, q.tokens[: q.question.length], q.candidate_tokens[j][: q.candidates[j].length],
                    qid=q.qid, candidate=j, label=q.labels[j], score=scores[j],
                ))
    return summarize(run), dumps


def train(train_ds: QADataset, config: TrainConfig, dev_ds: Optional[QADataset] = None,
          vocab: Optional[Vocabulary] = None,
          on_epoch: Optional[Callable[[dict], None]] = None,
          stop_when: Optional[Callable[[dict], bool]] = None) -> Tuple[AMMSNN, List[dict]]:
    """Train with single-triplet Adagrad updates.

    When a dev split is given, the parameters of the best epoch by
    ``config.select_metric`` are restored before returning.  ``stop_when``
    is consulted after each epoch's log record and may end training early.
    """
    if len(train_ds) == 0:
        raise DataError("training split contains no questions")
    if vocab is None:
        vocab = build_vocab(train_ds, config.min_count)
    mc = config.model
    ss = np.random.SeedSequence(config.seed)
    s_init, s_sample, s_drop = ss.spawn(3)
    model = AMMSNN.initialize(mc, vocab, int(s_init.generate_state(1)[0]))
    sample_rng = np.random.default_rng(s_sample)
    drop_rng = np.random.default_rng(s_drop)
    train_q = encode_dataset(train_ds, vocab, mc.max_len)
    dev_q = encode_dataset(dev_ds, vocab, mc.max_len) if dev_ds is not None else None
    state = OptimizerState(config.lr, config.eps)
    params = model.named_parameters()
    tape = T.current_tape()

    log: List[dict] = []
    best_metric = -np.inf
    best_snap = None
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        triplets, skipped_q = sample_triplets(train_q, config.negatives, sample_rng)
        total = 0.0
        used = 0
        degenerate = 0
        updates = 0
        for trip in triplets:
            try:
                loss = triplet_loss(model, trip, config.margin, config.dropout, drop_rng, training=True)
            except DegenerateRepresentationError:
                tape.clear()
                degenerate += 1
                continue
            value = loss.item()
            total += value
            used += 1
            if value == 0.0:
                tape.clear()
                continue
            T.backward(loss)
            adagrad_step(params, state)
            updates += 1
        rec = {
            "epoch": epoch,
            "loss": total / used if used else float("nan"),
            "triplets": used,
            "updates": updates,
            "skipped_degenerate": degenerate,
            "skipped_no_negative": skipped_q,
        }
        if dev_q:
            report, _ = evaluate(model, dev_q)
            rec.update({f"dev_{k}": v for k, v in report.metrics().items()})
            metric = report.metrics()[config.select_metric]
            if metric > best_metric:
                best_metric = metric
                best_snap = model.snapshot()
                rec["best"] = True
        rec["wall_time"] = time.perf_counter() - t0
        log.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        if stop_when is not None and stop_when(rec):
            break
    if best_snap is not None:
        model.restore(best_snap)
    return model, log
