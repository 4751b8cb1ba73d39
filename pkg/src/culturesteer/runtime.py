"""Deterministic tiny decoder-only transformer with residual capture and injection.

The model is a pre-layer-norm GPT-style stack (learned positions, GELU MLP,
output head tied to the token embedding) evaluated in float64 with numpy.
Interventions add ``alpha * vector`` to the residual stream at the output of a
block, at every position; captures read the residual at the same point, after
any injection.

``ModelHandle`` is immutable and may be shared between threads. A
``Session`` owns interventions and captures and belongs to one thread.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence, runtime_checkable

import numpy as np
from scipy.special import logsumexp

from .errors import (
    EmptyContinuation,
    InvalidConfig,
    NonFiniteLogit,
    SequenceTooLong,
    ShapeMismatch,
    TokenOutOfRange,
    TokenResolutionError,
)
from .weights import read_tensors, write_tensors

logger = logging.getLogger(__name__)

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
BYTE_OFFSET = 3
LN_EPS = 1e-5

DEFAULT_TEMPERATURE = 0.7
DEFAULT_PPL_WINDOW = 128
DEFAULT_GEN_SEED = 42


# ----------------------------------------------------------------------
# Byte tokenizer
# ----------------------------------------------------------------------
def encode(text: str) -> list[int]:
    """UTF-8 bytes shifted past the three special ids."""

    return [b + BYTE_OFFSET for b in text.encode("utf-8")]


def decode(tokens: Iterable[int]) -> str:
    data = bytes(t - BYTE_OFFSET for t in tokens if BYTE_OFFSET <= t < BYTE_OFFSET + 256)
    return data.decode("utf-8", errors="replace")


# ----------------------------------------------------------------------
# Configuration and parameters
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 259
    d_model: int = 64
    n_layers: int = 8
    n_heads: int = 4
    d_ff: int = 256
    max_seq: int = 2048
    init_seed: int = 0

    def __post_init__(self) -> None:
        for name in ("vocab_size", "d_model", "n_layers", "n_heads", "d_ff"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be >= 1")
        if self.max_seq < 8:
            raise InvalidConfig("max_seq must be >= 8")
        if self.d_model % self.n_heads:
            raise InvalidConfig(
                f"d_model {self.d_model} is not divisible by n_heads {self.n_heads}"
            )

    def to_dict(self) -> dict:
        return asdict(self)


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Parameter names and shapes in canonical (initialisation and file) order."""

    d, f = config.d_model, config.d_ff
    shapes: dict[str, tuple[int, ...]] = {
        "wte": (config.vocab_size, d),
        "wpe": (config.max_seq, d),
    }
    for layer in range(config.n_layers):
        p = f"h.{layer}."
        shapes[p + "ln_1.g"] = (d,)
        shapes[p + "ln_1.b"] = (d,)
        shapes[p + "attn.c_attn.w"] = (d, 3 * d)
        shapes[p + "attn.c_attn.b"] = (3 * d,)
        shapes[p + "attn.c_proj.w"] = (d, d)
        shapes[p + "attn.c_proj.b"] = (d,)
        shapes[p + "ln_2.g"] = (d,)
        shapes[p + "ln_2.b"] = (d,)
        shapes[p + "mlp.c_fc.w"] = (d, f)
        shapes[p + "mlp.c_fc.b"] = (f,)
        shapes[p + "mlp.c_proj.w"] = (f, d)
        shapes[p + "mlp.c_proj.b"] = (d,)
    shapes["ln_f.g"] = (d,)
    shapes["ln_f.b"] = (d,)
    return shapes


def init_weights(config: ModelConfig) -> dict[str, np.ndarray]:
    """Seeded standard-normal matrices scaled by 1/sqrt(d_model); unit gains, zero biases."""

    rng = np.random.default_rng(config.init_seed)
    scale = 1.0 / math.sqrt(config.d_model)
    weights: dict[str, np.ndarray] = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".g"):
            weights[name] = np.ones(shape, dtype=np.float32)
        elif name.endswith(".b"):
            weights[name] = np.zeros(shape, dtype=np.float32)
        else:
            weights[name] = (rng.standard_normal(shape) * scale).astype(np.float32)
    return weights


# ----------------------------------------------------------------------
# Interventions
# ----------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class Intervention:
    layer: int
    vector: np.ndarray
    alpha: float


@dataclass(frozen=True)
class InterventionSpec:
    entries: tuple[Intervention, ...] = ()

    @classmethod
    def from_vectors(
        cls, vectors: Mapping[int, np.ndarray], layers: Sequence[int], alpha: float
    ) -> "InterventionSpec":
        return cls(tuple(Intervention(int(l), vectors[l], float(alpha)) for l in layers))

    def validate(self, n_layers: int, d_model: int) -> None:
        for entry in self.entries:
            if not 0 <= entry.layer < n_layers:
                raise InvalidConfig(f"intervention layer {entry.layer} outside [0, {n_layers})")
            if np.shape(entry.vector) != (d_model,):
                raise InvalidConfig(
                    f"intervention vector shape {np.shape(entry.vector)} != ({d_model},)"
                )
            if not math.isfinite(entry.alpha):
                raise InvalidConfig("intervention alpha must be finite")

    def deltas_by_layer(self) -> dict[int, list[np.ndarray]]:
        """Per-layer additive deltas; zero-alpha entries are dropped."""

        deltas: dict[int, list[np.ndarray]] = {}
        for entry in self.entries:
            if entry.alpha == 0.0:
                continue
            delta = entry.alpha * np.asarray(entry.vector, dtype=np.float64)
            deltas.setdefault(entry.layer, []).append(delta)
        return deltas

    def to_json(self) -> list[dict]:
        return [
            {"layer": e.layer, "vector": np.asarray(e.vector, dtype=np.float64).tolist(), "alpha": e.alpha}
            for e in self.entries
        ]

    @classmethod
    def from_json(cls, data: Iterable[Mapping]) -> "InterventionSpec":
        return cls(
            tuple(
                Intervention(int(d["layer"]), np.asarray(d["vector"], dtype=np.float64), float(d["alpha"]))
                for d in data
            )
        )


# ----------------------------------------------------------------------
# Sessions
# ----------------------------------------------------------------------
class Session:
    """Mutable per-thread view of a model: interventions plus capture requests.

    Backends implement :meth:`forward_last_logits`; generation and perplexity
    are built on top of it here.
    """

    def __init__(self, n_layers: int, d_model: int, max_seq: int, interventions: InterventionSpec | None = None) -> None:
        self.n_layers = n_layers
        self.d_model = d_model
        self.max_seq = max_seq
        self.interventions = InterventionSpec()
        self.capture_requests: list[tuple[int, int]] = []
        self.captured: dict[tuple[int, int], np.ndarray] = {}
        if interventions is not None:
            self.set_interventions(interventions)

    def set_interventions(self, spec: InterventionSpec) -> None:
        spec.validate(self.n_layers, self.d_model)
        self.interventions = spec

    def clear_interventions(self) -> None:
        self.interventions = InterventionSpec()

    def request_capture(self, layer: int, position: int = -1) -> None:
        if not 0 <= layer < self.n_layers:
            raise InvalidConfig(f"capture layer {layer} outside [0, {self.n_layers})")
        self.capture_requests.append((int(layer), int(position)))

    def clear_captures(self) -> None:
        self.capture_requests = []
        self.captured = {}

    def forward_last_logits(self, tokens: Sequence[int]) -> np.ndarray:
        """Backends provide this; the base exists for typing."""
        raise NotImplementedError

    # --- decoding ------------------------------------------------------
    def _continue(
        self, prompt: Sequence[int], max_new: int, temperature: float, gen_seed: int
    ) -> tuple[list[int], list[float]]:
        if max_new < 1:
            raise InvalidConfig("max_new must be >= 1")
        if temperature < 0:
            raise InvalidConfig("temperature must be >= 0")
        if len(prompt) > self.max_seq:
            raise SequenceTooLong(f"prompt of {len(prompt)} tokens exceeds max_seq {self.max_seq}")

        rng = np.random.default_rng(gen_seed)
        context = list(prompt)
        generated: list[int] = []
        logprobs: list[float] = []
        for _ in range(max_new):
            logits = np.asarray(self.forward_last_logits(context[-self.max_seq :]), dtype=np.float64)
            if temperature == 0:
                token = int(np.argmax(logits))
            else:
                scaled = logits / temperature
                probs = np.exp(scaled - logsumexp(scaled))
                token = int(rng.choice(probs.size, p=probs / probs.sum()))
            if token == EOS_ID:
                break
            generated.append(token)
            logprobs.append(float(logits[token] - logsumexp(logits)))
            context.append(token)
        return generated, logprobs

    def generate(
        self, prompt: Sequence[int], max_new: int, temperature: float = 0.0, gen_seed: int = 0
    ) -> list[int]:
        """Greedy (temperature 0) or seeded sampling; EOS ends and is not returned."""

        return self._continue(prompt, max_new, temperature, gen_seed)[0]

    def score(self, prompt: Sequence[int], continuation: Sequence[int]) -> list[float]:
        """Log-probability of each continuation token under this session."""

        context = list(prompt)
        out: list[float] = []
        for token in continuation:
            logits = np.asarray(self.forward_last_logits(context[-self.max_seq :]), dtype=np.float64)
            out.append(float(logits[token] - logsumexp(logits)))
            context.append(token)
        return out

    def perplexity(
        self,
        prompt: Sequence[int],
        window: int = DEFAULT_PPL_WINDOW,
        temperature: float = DEFAULT_TEMPERATURE,
        gen_seed: int = DEFAULT_GEN_SEED,
        scorer: "Session | None" = None,
    ) -> float:
        """exp(mean NLL) of up to ``window`` generated tokens.

        The session that generates also scores, unless ``scorer`` is given
        (e.g. an unsteered session for baseline scoring).
        """

        if window < 1:
            raise InvalidConfig("perplexity window must be >= 1")
        tokens, logprobs = self._continue(prompt, window, temperature, gen_seed)
        if not tokens:
            raise EmptyContinuation("generation produced no tokens before EOS")
        if scorer is not None:
            logprobs = scorer.score(prompt, tokens)
        return float(np.exp(-np.mean(logprobs)))


class TinySession(Session):
    def __init__(self, model: "ModelHandle", interventions: InterventionSpec | None = None) -> None:
        cfg = model.config
        super().__init__(cfg.n_layers, cfg.d_model, cfg.max_seq, interventions)
        self.model = model

    def forward_last_logits(self, tokens: Sequence[int]) -> np.ndarray:
        layers = {layer for layer, _ in self.capture_requests}
        logits, residuals = self.model.run(tokens, self.interventions, layers)
        self.captured = {}
        length = len(tokens)
        for layer, position in self.capture_requests:
            if not -length <= position < length:
                raise InvalidConfig(f"capture position {position} outside a {length}-token input")
            self.captured[(layer, position)] = residuals[layer][position].copy()
        return logits[-1]


# ----------------------------------------------------------------------
# Model handle
# ----------------------------------------------------------------------
def _layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + LN_EPS) * gain + bias


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)))


@dataclass(frozen=True, eq=False)
class ModelHandle:
    config: ModelConfig
    weights: Mapping[str, np.ndarray]
    _params: dict[str, np.ndarray] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        expected = parameter_shapes(self.config)
        missing = sorted(set(expected) - set(self.weights))
        if missing:
            raise ShapeMismatch(f"weights lack parameters {missing[:5]}")
        frozen: dict[str, np.ndarray] = {}
        params: dict[str, np.ndarray] = {}
        for name, shape in expected.items():
            array = np.array(self.weights[name], dtype=np.float32)
            if array.shape != shape:
                raise ShapeMismatch(f"parameter {name}: shape {array.shape} != {shape}")
            array.flags.writeable = False
            frozen[name] = array
            params[name] = array.astype(np.float64)
        object.__setattr__(self, "weights", frozen)
        object.__setattr__(self, "_params", params)

    # --- backend protocol ---------------------------------------------
    @property
    def n_layers(self) -> int:
        return self.config.n_layers

    @property
    def d_model(self) -> int:
        return self.config.d_model

    @property
    def max_seq(self) -> int:
        return self.config.max_seq

    def encode(self, text: str) -> list[int]:
        return encode(text)

    def decode(self, tokens: Iterable[int]) -> str:
        return decode(tokens)

    def letter_token(self, letter: str) -> int:
        return resolve_letter_token(self.encode, letter)

    def open_session(self, interventions: InterventionSpec | None = None) -> TinySession:
        return TinySession(self, interventions)

    # --- forward pass -------------------------------------------------
    def run(
        self,
        tokens: Sequence[int],
        interventions: InterventionSpec = InterventionSpec(),
        capture_layers: Iterable[int] = (),
    ) -> tuple[np.ndarray, dict[int, np.ndarray]]:
        """Logits at every position plus the requested residual snapshots."""

        cfg = self.config
        ids = np.asarray(list(tokens), dtype=np.int64)
        if ids.size == 0:
            raise InvalidConfig("forward pass needs at least one token")
        if ids.size > cfg.max_seq:
            raise SequenceTooLong(f"{ids.size} tokens exceed max_seq {cfg.max_seq}")
        if ids.min() < 0 or ids.max() >= cfg.vocab_size:
            raise TokenOutOfRange(f"token ids must lie in [0, {cfg.vocab_size})")

        w = self._params
        length = ids.size
        deltas = interventions.deltas_by_layer()
        wanted = set(capture_layers)
        mask = np.triu(np.ones((length, length), dtype=bool), k=1)

        x = w["wte"][ids] + w["wpe"][:length]
        captured: dict[int, np.ndarray] = {}
        for layer in range(cfg.n_layers):
            p = f"h.{layer}."
            x = x + self._attention(_layer_norm(x, w[p + "ln_1.g"], w[p + "ln_1.b"]), p, mask)
            h = _layer_norm(x, w[p + "ln_2.g"], w[p + "ln_2.b"])
            x = x + _gelu(h @ w[p + "mlp.c_fc.w"] + w[p + "mlp.c_fc.b"]) @ w[p + "mlp.c_proj.w"] + w[p + "mlp.c_proj.b"]
            for delta in deltas.get(layer, ()):
                x = x + delta
            if layer in wanted:
                captured[layer] = x.copy()

        h = _layer_norm(x, w["ln_f.g"], w["ln_f.b"])
        logits = h @ w["wte"].T
        if not np.all(np.isfinite(logits[-1])):
            raise NonFiniteLogit("forward pass produced non-finite logits")
        return logits, captured

    def _attention(self, h: np.ndarray, prefix: str, mask: np.ndarray) -> np.ndarray:
        w = self._params
        length, d = h.shape
        heads = self.config.n_heads
        dh = d // heads
        qkv = h @ w[prefix + "attn.c_attn.w"] + w[prefix + "attn.c_attn.b"]
        q, k, v = (part.reshape(length, heads, dh).transpose(1, 0, 2) for part in np.split(qkv, 3, axis=-1))
        scores = q @ k.transpose(0, 2, 1) / math.sqrt(dh)
        scores = np.where(mask, -np.inf, scores)
        scores = scores - scores.max(axis=-1, keepdims=True)
        probs = np.exp(scores)
        probs = probs / probs.sum(axis=-1, keepdims=True)
        out = (probs @ v).transpose(1, 0, 2).reshape(length, d)
        return out @ w[prefix + "attn.c_proj.w"] + w[prefix + "attn.c_proj.b"]


@runtime_checkable
class ModelBackend(Protocol):
    """What the probing and steering code needs from a model."""

    @property
    def n_layers(self) -> int: ...

    @property
    def d_model(self) -> int: ...

    def encode(self, text: str) -> list[int]: ...

    def letter_token(self, letter: str) -> int: ...

    def open_session(self, interventions: InterventionSpec | None = None) -> Session: ...


def resolve_letter_token(encoder, letter: str) -> int:
    """Exact single token for ``letter``, else the single leading-space variant."""

    for candidate in (letter, " " + letter):
        ids = encoder(candidate)
        if len(ids) == 1:
            return int(ids[0])
    raise TokenResolutionError(f"option letter {letter!r} is not a single token")


# ----------------------------------------------------------------------
# Operations
# ----------------------------------------------------------------------
def load_model(config: ModelConfig, weights_path: str | Path | None = None) -> ModelHandle:
    """Seeded initialisation, or the tensors in ``weights_path`` checked against ``config``."""

    if weights_path is None:
        logger.debug("initialising tiny model from seed %d", config.init_seed)
        return ModelHandle(config, init_weights(config))
    tensors, _ = read_tensors(weights_path)
    logger.info("loaded %d tensors from %s", len(tensors), weights_path)
    return ModelHandle(config, tensors)


def save_weights(model: ModelHandle, path: str | Path) -> Path:
    return write_tensors(path, model.weights, {"config": model.config.to_dict()})


def config_from_weights(path: str | Path) -> ModelConfig:
    """Model configuration stored in a weights file header."""

    _, metadata = read_tensors(path)
    if "config" not in metadata:
        raise ShapeMismatch(f"{path} carries no model configuration")
    return ModelConfig(**metadata["config"])


def open_session(model: ModelBackend, interventions: InterventionSpec | None = None) -> Session:
    return model.open_session(interventions)


def forward_last_logits(session: Session, tokens: Sequence[int]) -> np.ndarray:
    return session.forward_last_logits(tokens)


def generate(
    session: Session, prompt: Sequence[int], max_new: int, temperature: float = 0.0, gen_seed: int = 0
) -> list[int]:
    return session.generate(prompt, max_new, temperature, gen_seed)


def perplexity(
    session: Session,
    prompt: Sequence[int],
    window: int = DEFAULT_PPL_WINDOW,
    temperature: float = DEFAULT_TEMPERATURE,
    gen_seed: int = DEFAULT_GEN_SEED,
    scorer: Session | None = None,
) -> float:
    return session.perplexity(prompt, window, temperature, gen_seed, scorer)


__all__ = [
    "PAD_ID",
    "BOS_ID",
    "EOS_ID",
    "BYTE_OFFSET",
    "DEFAULT_TEMPERATURE",
    "DEFAULT_PPL_WINDOW",
    "DEFAULT_GEN_SEED",
    "encode",
    "decode",
    "ModelConfig",
    "parameter_shapes",
    "init_weights",
    "Intervention",
    "InterventionSpec",
    "Session",
    "TinySession",
    "ModelHandle",
    "ModelBackend",
    "resolve_letter_token",
    "load_model",
    "save_weights",
    "config_from_weights",
    "open_session",
    "forward_last_logits",
    "generate",
    "perplexity",
]
