"""Finite-difference verification of the analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import tensor as T
from .embedding import PAD, Sentence, Vocabulary, pad_truncate
from .encoder import EncoderConfig
from .errors import DegenerateRepresentationError
from .model import AMMSNN, ModelConfig
from .trainer import Triplet, triplet_loss

TOY_CONFIG = ModelConfig(d=8, max_len=7, encoder=EncoderConfig(branches=[(1, 2), (3, 2), (5, 2)]))

# denominators below this are treated as this; keeps near-zero gradients from
# turning float64 round-off into huge relative errors
REL_FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def numerical_gradient(f: Callable[[], float], x: T.Tensor, h: float = 1e-5,
                       indices: Optional[Sequence] = None) -> np.ndarray:
    """Central differences of ``f`` w.r.t. the entries of ``x`` (in place, restored)."""
    grad = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    with T.no_grad():
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = f()
            flat[i] = orig - h
            fm = f()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def check_function(f: Callable[[], T.Tensor], inputs: Dict[str, T.Tensor], h: float = 1e-5,
                   floor: float = REL_FLOOR) -> Dict[str, float]:
    """Max relative error per named input for a scalar-valued taped function."""
    for x in inputs.values():
        x.zero_grad()
    T.backward(f())
    out = {}
    for name, x in inputs.items():
        num = numerical_gradient(lambda: f().item(), x, h)
        out[name] = float(relative_error(x.grad, num, floor).max())
    return out


@dataclass
class GradcheckResult:
    tolerance: float
    max_error: Dict[str, float] = field(default_factory=dict)
    samples: int = 0
    resampled: int = 0

    @property
    def failing(self) -> List[str]:
        return [g for g, e in self.max_error.items() if not e <= self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failing

    def lines(self) -> List[str]:
        out = []
        for group, err in self.max_error.items():
            status = "ok" if err <= self.tolerance else "FAIL"
            out.append(f"{group}\t{err:.3e}\t{status}")
        return out


def _random_sentence(rng: np.random.Generator, vocab_size: int, L: int) -> Sentence:
    length = int(rng.integers(2, L + 1))
    ids = rng.choice(np.arange(2, vocab_size), size=length, replace=False)
    return pad_truncate(list(ids), L)


def check_model_gradients(config: ModelConfig = TOY_CONFIG, samples: int = 3, tolerance: float = 1e-4,
                          h: float = 1e-5, margin: float = 0.5, seed: int = 0,
                          vocab_size: int = 16, kink_guard: float = 1e-4,
                          max_tries: int = 200) -> GradcheckResult:
    """Compare backward() against central differences on random triplets.

    Draws whose forward pass sits within ``kink_guard`` of a relu kink, a
    max tie or the hinge corner, whose hinge is inactive, or whose
    representation vanishes, are redrawn.
    Dropout is off.
    """
    rng = np.random.default_rng(seed)
    vocab = Vocabulary(f"tok{i}" for i in range(vocab_size - 2))
    result = GradcheckResult(tolerance)
    tries = 0
    while result.samples < samples:
        tries += 1
        if tries > max_tries:
            raise RuntimeError("could not draw a kink-free gradcheck instance")
        model = AMMSNN.initialize(config, vocab, int(rng.integers(2**31)))
        L = config.max_len
        trip = Triplet("g", *(_random_sentence(rng, vocab_size, L) for _ in range(3)))
        tape = T.current_tape()
        tape.clear()
        model.zero_grad()
        try:
            loss = triplet_loss(model, trip, margin)
        except DegenerateRepresentationError:
            loss = None
        if loss is None or loss.item() <= 0.0 or tape.min_kink_gap() < kink_guard:
            tape.clear()
            result.resampled += 1
            continue
        T.backward(loss)

        def f() -> float:
            return triplet_loss(model, trip, margin).item()

        used = sorted({i for s in (trip.question, trip.positive, trip.negative) for i in s.ids} | {PAD})
        for name, p in model.named_parameters():
            if name == "W":
                d = p.shape[0]
                idx = [r * p.shape[1] + c for r in range(d) for c in used]
            else:
                idx = None
            num = numerical_gradient(f, p, h, idx)
            sel = np.zeros(p.size, dtype=bool)
            sel[idx if idx is not None else slice(None)] = True
            err = relative_error(p.grad.reshape(-1)[sel], num.reshape(-1)[sel])
            result.max_error[name] = max(result.max_error.get(name, 0.0), float(err.max()))
        result.samples += 1
    return result
