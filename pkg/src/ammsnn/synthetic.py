"""Generated toy corpora for overfit and baseline experiments."""
from __future__ import annotations

from typing import List, Tuple

import numpy as np

from .data import QADataset, make_dataset

WH = ("who", "why", "how", "when", "where", "what")


def overlap_dataset(n_questions: int = 20, n_negatives: int = 4, shared: int = 3,
                    seed: int = 0, split: str = "train") -> QADataset:
    """Each question has one positive sharing ``shared`` content tokens with it
    and ``n_negatives`` answers that share no token with the question.
    """
    rng = np.random.default_rng(seed)
    content = [f"w{i}" for i in range(40 * n_questions)]
    filler = [f"f{i}" for i in range(30)]
    rows: List[Tuple[str, str, str, int]] = []
    for qi in range(n_questions):
        topic = [content[j] for j in rng.choice(len(content), size=shared + 2, replace=False)]
        wh = WH[qi % len(WH)]
        q_tokens = [wh] + topic
        used = set(q_tokens)
        kept = list(rng.choice(topic, size=shared, replace=False))
        pos = kept + [filler[j] for j in rng.choice(len(filler), size=3, replace=False)]
        rng.shuffle(pos)
        rows.append((f"q{qi}", " ".join(q_tokens), " ".join(pos), 1))
        pool = [t for t in content + filler if t not in used]
        for _ in range(n_negatives):
            neg = [pool[j] for j in rng.choice(len(pool), size=len(pos), replace=False)]
            rows.append((f"q{qi}", " ".join(q_tokens), " ".join(neg), 0))
    return make_dataset(rows, split)


def random_pool_dataset(n_questions: int, pool_size: int, vocab_size: int = 200,
                        length: int = 6, seed: int = 0, split: str = "test") -> QADataset:
    """Single-positive pools whose text carries no signal about the label."""
    rng = np.random.default_rng(seed)
    words = [f"t{i}" for i in range(vocab_size)]

    def sentence():
        return " ".join(words[j] for j in rng.integers(0, vocab_size, size=length))

    rows = []
    for qi in range(n_questions):
        q = sentence()
        pos = int(rng.integers(pool_size))
        for j in range(pool_size):
            rows.append((f"q{qi}", q, sentence(), int(j == pos)))
    return make_dataset(rows, split)
