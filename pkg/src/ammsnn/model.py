"""The full answer-selection network: embed -> encode -> attend -> cosine."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import tensor as T
from .attention import AttentionParams, AttentionState, attention_forward, init_attention
from .embedding import EmbeddingTable, Sentence, Vocabulary, embed, init_embeddings, pad_truncate
from .encoder import EncoderConfig, EncoderParams, encode_feature_map, init_encoder, pool_encoding
from .errors import ConfigError
from .scoring import cosine


@dataclass
class ModelConfig:
    d: int = 100
    max_len: int = 100
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    attention: bool = True
    embed_init: float = 0.1
    attention_init: float = 0.1

    def __post_init__(self):
        if isinstance(self.encoder, dict):
            self.encoder = EncoderConfig(**self.encoder)
        if self.d < 1:
            raise ConfigError(f"embedding dimension must be >= 1, got {self.d}")
        if self.max_len < 1:
            raise ConfigError(f"max_len must be >= 1, got {self.max_len}")

    @property
    def c_total(self) -> int:
        return self.encoder.c_total

    @property
    def rep_dim(self) -> int:
        return 2 * self.c_total if self.attention else self.c_total

    def to_dict(self) -> dict:
        return asdict(self)


class AMMSNN:
    """Parameters plus forward pass for one configuration and vocabulary."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary, embedding: EmbeddingTable,
                 encoder: EncoderParams, attention: Optional[AttentionParams]):
        self.config = config
        self.vocab = vocab
        self.embedding = embedding
        self.encoder = encoder
        self.attention = attention

    @classmethod
    def initialize(cls, config: ModelConfig, vocab: Vocabulary, seed: int) -> "AMMSNN":
        ss = np.random.SeedSequence(seed)
        s_emb, s_enc, s_att = (np.random.default_rng(s) for s in ss.spawn(3))
        embedding = init_embeddings(vocab, config.d, config.embed_init, s_emb)
        encoder = init_encoder(config.encoder, config.d, s_enc)
        attention = init_attention(config.c_total, config.attention_init, s_att) if config.attention else None
        return cls(config, vocab, embedding, encoder, attention)

    def named_parameters(self) -> List[Tuple[str, T.Tensor]]:
        params = [("W", self.embedding.W)]
        params.extend(self.encoder.named_tensors())
        if self.attention is not None:
            params.append(("U", self.attention.U))
        return params

    def parameters(self) -> List[T.Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def prepare(self, tokens) -> Sentence:
        return pad_truncate(self.vocab.encode(tokens), self.config.max_len)

    def feature_map(self, sentence: Sentence):
        emb = embed(sentence, self.embedding)
        return encode_feature_map(emb, self.config.encoder, self.encoder, sentence.length)

    def represent_pair(self, qf, af) -> Tuple[T.Tensor, T.Tensor, Optional[AttentionState]]:
        """Final representations for a pair of already-encoded feature maps."""
        if self.attention is None:
            return pool_encoding(qf), pool_encoding(af), None
        return attention_forward(qf, af, self.attention)

    def pair_representations(self, question: Sentence, answer: Sentence):
        return self.represent_pair(self.feature_map(question), self.feature_map(answer))

    def score(self, question: Sentence, answers: List[Sentence]) -> List[float]:
        """Cosine score of every answer against the question (no taping)."""
        with T.no_grad():
            qf = self.feature_map(question)
            out = []
            for a in answers:
                r_q, r_a, _ = self.represent_pair(qf, self.feature_map(a))
                out.append(cosine(r_q, r_a).item())
        return out

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def restore(self, snap: Dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            p.data[...] = snap[name]
