"""Question/candidate-pool datasets in the canonical 4-column TSV layout.

Each line is ``question_id<TAB>question_text<TAB>answer_text<TAB>label``.
"""
from __future__ import annotations

import csv
import logging
from collections import Counter, OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Tuple, Union

from .embedding import Vocabulary, tokenize
from .errors import DataError

logger = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")


@dataclass
class Candidate:
    text: str
    tokens: List[str]
    label: int


@dataclass
class Question:
    qid: str
    text: str
    tokens: List[str]
    candidates: List[Candidate] = field(default_factory=list)

    @property
    def n_positive(self) -> int:
        return sum(c.label for c in self.candidates)

    @property
    def n_negative(self) -> int:
        return len(self.candidates) - self.n_positive


@dataclass
class QADataset:
    questions: List[Question]
    split: str = "train"
    dropped: int = 0

    def __len__(self) -> int:
        return len(self.questions)

    def __iter__(self):
        return iter(self.questions)

    @property
    def n_pairs(self) -> int:
        return sum(len(q.candidates) for q in self.questions)


def _clean(text: str) -> str:
    return " ".join(text.split())


def load_tsv(path: Union[str, Path], split: str = "train", require_positive: bool = True) -> QADataset:
    """Parse a TSV file, grouping rows by question id in first-seen order.

    With ``require_positive`` questions without a relevant candidate are
    dropped (their count is kept in ``QADataset.dropped``).
    """
    path = Path(path)
    if split not in SPLITS:
        raise DataError(f"unknown split tag {split!r}")
    try:
        raw = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"dataset file not found: {path}") from None
    groups: "OrderedDict[str, Question]" = OrderedDict()
    n_rows = 0
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 4:
            raise DataError(f"{path}:{lineno}: expected 4 tab-separated columns, found {len(cols)}")
        qid, qtext, atext, label = cols
        if label.strip() not in ("0", "1"):
            raise DataError(f"{path}:{lineno}: label must be 0 or 1, got {label!r}")
        qtoks, atoks = tokenize(qtext), tokenize(atext)
        if not qtoks or not atoks:
            raise DataError(f"{path}:{lineno}: question and answer must contain at least one token")
        q = groups.get(qid)
        if q is None:
            q = groups[qid] = Question(qid, qtext, qtoks)
        elif q.text != qtext:
            raise DataError(f"{path}:{lineno}: question id {qid!r} appears with different text")
        q.candidates.append(Candidate(atext, atoks, int(label)))
        n_rows += 1
    if n_rows == 0:
        raise DataError(f"{path}: dataset is empty")
    questions = list(groups.values())
    dropped = 0
    if require_positive:
        kept = [q for q in questions if q.n_positive > 0]
        dropped = len(questions) - len(kept)
        questions = kept
    return QADataset(questions, split, dropped)


def write_tsv(dataset: QADataset, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for q in dataset.questions:
            for c in q.candidates:
                fh.write(f"{q.qid}\t{_clean(q.text)}\t{_clean(c.text)}\t{c.label}\n")


def make_dataset(rows: Iterable[Tuple[str, str, str, int]], split: str = "train") -> QADataset:
    """Build a dataset in memory from ``(qid, question, answer, label)`` rows."""
    groups: "OrderedDict[str, Question]" = OrderedDict()
    for qid, qtext, atext, label in rows:
        q = groups.get(qid)
        if q is None:
            q = groups[qid] = Question(qid, qtext, tokenize(qtext))
        q.candidates.append(Candidate(atext, tokenize(atext), int(label)))
    return QADataset(list(groups.values()), split)


def build_vocab(dataset: QADataset, min_count: int = 1) -> Vocabulary:
    """Ids by descending frequency, ties broken lexicographically."""
    counts: Counter = Counter()
    for q in dataset.questions:
        counts.update(q.tokens)
        for c in q.candidates:
            counts.update(c.tokens)
    if not counts:
        raise DataError("cannot build a vocabulary from empty training text")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary(tok for tok, n in ranked if n >= min_count)


WIKIQA_COLUMNS = ("QuestionID", "Question", "DocumentID", "DocumentTitle", "SentenceID", "Sentence", "Label")


def convert_wikiqa(src: Union[str, Path], dst: Union[str, Path]) -> int:
    """Rewrite a native WikiQA ``.tsv`` split (with header) into the canonical layout.

    Returns the number of rows written.
    """
    n = 0
    with open(src, encoding="utf-8", newline="") as fin, open(dst, "w", encoding="utf-8", newline="") as fout:
        reader = csv.reader(fin, delimiter="\t", quoting=csv.QUOTE_NONE)
        header = next(reader, None)
        if header is None or tuple(header[: len(WIKIQA_COLUMNS)]) != WIKIQA_COLUMNS:
            raise DataError(f"{src}: not a WikiQA file (header {header!r})")
        col = {name: i for i, name in enumerate(header)}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataError(f"{src}:{lineno}: expected {len(header)} columns, found {len(row)}")
            fout.write(
                f"{row[col['QuestionID']]}\t{_clean(row[col['Question']])}\t"
                f"{_clean(row[col['Sentence']])}\t{row[col['Label']]}\n"
            )
            n += 1
    return n

