"""Run configuration: flat ``section.key = value`` text files.

Lines starting with ``#`` and blank lines are ignored.  Every key has a
default except the dataset paths.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

from .encoder import EncoderConfig
from .errors import ConfigError
from .model import ModelConfig
from .trainer import TrainConfig


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _branches(s: str) -> List[Tuple[int, int]]:
    out = []
    for part in s.split(","):
        k, _, c = part.strip().partition(":")
        out.append((int(k), int(c)))
    return out


def _fmt_branches(b: List[Tuple[int, int]]) -> str:
    return ",".join(f"{k}:{c}" for k, c in b)


def _opt_str(s: str) -> Optional[str]:
    s = s.strip()
    return s or None


_D = TrainConfig()
_M = ModelConfig()
_E = EncoderConfig()

# key -> (parser, default, formatter)
KEYS: Dict[str, Tuple[Callable[[str], Any], Any, Callable[[Any], str]]] = {
    "data.train": (_opt_str, None, str),
    "data.dev": (_opt_str, None, str),
    "data.test": (_opt_str, None, str),
    "model.variant": (str.strip, _E.variant, str),
    "model.branches": (_branches, _E.branches, _fmt_branches),
    "model.channels": (int, _E.channels, str),
    "model.width": (int, _E.width, str),
    "model.activation": (str.strip, _E.activation, str),
    "model.d": (int, _M.d, str),
    "model.max_len": (int, _M.max_len, str),
    "model.attention": (_bool, _M.attention, lambda b: "true" if b else "false"),
    "model.embed_init": (float, _M.embed_init, repr),
    "model.attention_init": (float, _M.attention_init, repr),
    "train.lr": (float, _D.lr, repr),
    "train.dropout": (float, _D.dropout, repr),
    "train.margin": (float, _D.margin, repr),
    "train.epochs": (int, _D.epochs, str),
    "train.negatives": (int, _D.negatives, str),
    "train.seed": (int, _D.seed, str),
    "train.min_count": (int, _D.min_count, str),
    "train.eps": (float, _D.eps, repr),
    "train.select_metric": (str.strip, _D.select_metric, str),
    "output.checkpoint": (str.strip, "model.ckpt", str),
    "output.log": (str.strip, "train_log.jsonl", str),
    "output.vocab": (_opt_str, None, str),
    "output.figures": (_opt_str, None, str),
}


@dataclass
class RunConfig:
    values: Dict[str, Any]
    base_dir: Path = Path(".")

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def path(self, key: str) -> Optional[Path]:
        v = self.values[key]
        if v is None:
            return None
        p = Path(v)
        return p if p.is_absolute() else self.base_dir / p

    def model_config(self) -> ModelConfig:
        v = self.values
        enc = EncoderConfig(
            variant=v["model.variant"], branches=v["model.branches"], channels=v["model.channels"],
            width=v["model.width"], activation=v["model.activation"],
        )
        return ModelConfig(d=v["model.d"], max_len=v["model.max_len"], encoder=enc,
                           attention=v["model.attention"], embed_init=v["model.embed_init"],
                           attention_init=v["model.attention_init"])

    def train_config(self) -> TrainConfig:
        v = self.values
        return TrainConfig(
            model=self.model_config(), lr=v["train.lr"], dropout=v["train.dropout"],
            margin=v["train.margin"], epochs=v["train.epochs"], negatives=v["train.negatives"],
            seed=v["train.seed"], min_count=v["train.min_count"], eps=v["train.eps"],
            select_metric=v["train.select_metric"],
        )

    def resolved(self) -> Dict[str, Optional[str]]:
        """Every key with defaults expanded, formatted as it would be written."""
        out = {}
        for key, (_, _, fmt) in KEYS.items():
            val = self.values[key]
            out[key] = None if val is None else fmt(val)
        return out

    def dumps(self) -> str:
        return "".join(f"{k} = {'' if v is None else v}\n" for k, v in self.resolved().items())


def parse_config(text: str, base_dir: Union[str, Path] = ".",
                 overrides: Optional[Dict[str, str]] = None) -> RunConfig:
    raw: Dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        if key not in KEYS:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"config line {lineno}: duplicate key {key!r}")
        raw[key] = value.strip()
    raw.update(overrides or {})
    values = {}
    for key, (parse, default, _) in KEYS.items():
        if key in raw:
            try:
                values[key] = parse(raw[key])
            except ValueError as exc:
                raise ConfigError(f"config key {key}: {exc}") from None
        else:
            values[key] = default
    cfg = RunConfig(values, Path(base_dir))
    cfg.train_config()  # validates ranges
    return cfg


def load_config(path: Union[str, Path], overrides: Optional[Dict[str, str]] = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    return parse_config(text, path.parent, overrides)
