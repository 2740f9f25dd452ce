"""Two-way attention over a question/answer pair of feature maps."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO, Sequence, Tuple, Union

import numpy as np

from . import tensor as T
from .encoder import FeatureMap, pool_encoding
from .errors import DataError, DimensionError


@dataclass
class AttentionParams:
    U: T.Tensor

    @property
    def side(self) -> int:
        return self.U.shape[0]


def init_attention(c_total: int, half_range: float, seed) -> AttentionParams:
    rng = np.random.default_rng(seed)
    U = rng.uniform(-half_range, half_range, size=(c_total, c_total))
    return AttentionParams(T.Tensor(U, requires_grad=True, name="U"))


@dataclass
class AttentionState:
    T: T.Tensor
    g_q: T.Tensor
    g_a: T.Tensor
    sigma_q: T.Tensor
    sigma_a: T.Tensor


def attention_matrix(qf: FeatureMap, af: FeatureMap, params: AttentionParams) -> T.Tensor:
    """M x N soft-alignment matrix ``tanh(Q_f^T U A_f)``.

    Only the block of unmasked rows and columns is computed; masked feature
    columns are zero, so the remaining entries are exactly ``tanh(0) = 0``.
    The bilinear form is evaluated in both association orders and the two
    results averaged; the sum is symmetric in its terms, so exchanging the
    pair (with U -> U^T) transposes the matrix bit for bit.
    """
    if qf.channels != af.channels:
        raise DimensionError(f"attention: question has {qf.channels} channels, answer {af.channels}")
    U = params.U
    if U.shape != (qf.channels, qf.channels):
        raise DimensionError(f"attention: U is {U.shape}, expected {(qf.channels, qf.channels)}")
    Q = T.narrow(qf.values, 1, qf.length)
    A = T.narrow(af.values, 1, af.length)
    left = T.matmul(T.matmul(T.transpose(Q), U), A)
    # (A^T U^T Q)^T, computed from the answer side
    right = T.transpose(T.matmul(T.matmul(T.transpose(A), T.transpose(U)), Q))
    block = T.activation(T.scale(T.add(left, right), 0.5), "tanh")
    return T.pad_zeros(block, (qf.padded_length, af.padded_length))


def _masked_softmax(scores: T.Tensor, padded: int) -> T.Tensor:
    sigma = T.softmax_vec(scores)
    n = scores.shape[0]
    if n == padded:
        return sigma
    return T.concat(sigma, T.Tensor(np.zeros(padded - n)), axis=0)


def attention_vectors(Tm: T.Tensor, q_len: int, a_len: int) -> AttentionState:
    """Row/column max-pooling of T over unmasked cells, then softmax.

    Masked positions get exactly zero weight.
    """
    M, N = Tm.shape
    if q_len < 1 or a_len < 1:
        raise DataError("attention needs sentences with at least one token")
    if q_len > M or a_len > N:
        raise DimensionError(f"true lengths ({q_len}, {a_len}) exceed attention matrix {Tm.shape}")
    valid = T.narrow(T.narrow(Tm, 0, q_len), 1, a_len)
    g_q, _ = T.max_reduce(valid, T.ROWS)
    g_a, _ = T.max_reduce(valid, T.COLS)
    sigma_q = _masked_softmax(g_q, M)
    sigma_a = _masked_softmax(g_a, N)
    return AttentionState(Tm, g_q, g_a, sigma_q, sigma_a)


def _weighted_pool(fm: FeatureMap, sigma: T.Tensor) -> T.Tensor:
    weighted = T.hadamard_broadcast(fm.values, sigma)
    pooled, _ = T.max_reduce(T.narrow(weighted, 1, fm.length), T.ROWS)
    return pooled


def attend(qf: FeatureMap, af: FeatureMap, sigma_q: T.Tensor, sigma_a: T.Tensor) -> Tuple[T.Tensor, T.Tensor]:
    """Final 2*c representations: [plain max-pool ; attention-weighted max-pool]."""
    r_q = T.concat(pool_encoding(qf), _weighted_pool(qf, sigma_q), axis=0)
    r_a = T.concat(pool_encoding(af), _weighted_pool(af, sigma_a), axis=0)
    return r_q, r_a


def attention_forward(qf: FeatureMap, af: FeatureMap, params: AttentionParams):
    Tm = attention_matrix(qf, af, params)
    state = attention_vectors(Tm, qf.length, af.length)
    r_q, r_a = attend(qf, af, state.sigma_q, state.sigma_a)
    return r_q, r_a, state


def dump_record(state: AttentionState, question_tokens: Sequence[str],
                answer_tokens: Sequence[str], **extra) -> dict:
    """One JSON-serialisable attention record for offline inspection."""
    M, N = state.T.shape
    rec = dict(extra)
    rec.update(
        question_tokens=list(question_tokens),
        answer_tokens=list(answer_tokens),
        sigma_q=state.sigma_q.data.tolist(),
        sigma_a=state.sigma_a.data.tolist(),
        shape=[M, N],
        T=state.T.data.reshape(-1).tolist(),
    )
    return rec


def write_dump(records, out: Union[str, IO[str]]) -> None:
    if isinstance(out, str):
        with open(out, "w", encoding="utf-8") as fh:
            write_dump(records, fh)
        return
    for rec in records:
        out.write(json.dumps(rec, sort_keys=True) + "\n")
