"""Line-delimited JSON protocol for substituting an out-of-process model.

One request per line on the child's stdin, one response per line on stdout.
Every response carries ``"ok"``; failures add ``"error"`` (exception class
name) and ``"message"``.

Requests::

    {"op": "info"}
        -> {"n_layers", "d_model", "max_seq", "vocab_size", "letter_tokens": {"A": id, "B": id}}
    {"op": "encode", "text": str}                                    -> {"tokens"}
    {"op": "logits", "prompt": tokens|str, "system"?: str,
     "interventions"?: [{"layer", "vector", "alpha"}], "capture"?: [[layer, position], ...]}
        -> {"logits": [...], "captured": [[layer, position, [...]], ...]}
    {"op": "generate", "prompt", "max_new", "temperature", "gen_seed", "interventions"?}
        -> {"tokens"}
    {"op": "perplexity", "prompt", "window", "temperature", "gen_seed", "interventions"?,
     "baseline_scored"?: bool}                                       -> {"perplexity"}

A string ``prompt`` is encoded by the server; ``system`` text is prepended to
it followed by a blank line. Adapters for chat models map ``system`` to their
own template instead.
"""

from __future__ import annotations

import json
import logging
import subprocess
import threading
from typing import IO, Any, Sequence

import numpy as np

from .errors import BackendError, CultureSteerError
from .runtime import (
    DEFAULT_GEN_SEED,
    DEFAULT_PPL_WINDOW,
    DEFAULT_TEMPERATURE,
    InterventionSpec,
    ModelHandle,
    Session,
    resolve_letter_token,
)

logger = logging.getLogger(__name__)


def _prompt_tokens(model: ModelHandle, request: dict) -> list[int]:
    prompt = request.get("prompt", [])
    if isinstance(prompt, str):
        system = request.get("system")
        text = f"{system}\n\n{prompt}" if system else prompt
        return model.encode(text)
    return [int(t) for t in prompt]


def _session(model: ModelHandle, request: dict) -> Session:
    return model.open_session(InterventionSpec.from_json(request.get("interventions") or []))


def handle_request(model: ModelHandle, request: dict) -> dict:
    op = request.get("op")
    if op == "info":
        return {
            "n_layers": model.n_layers,
            "d_model": model.d_model,
            "max_seq": model.max_seq,
            "vocab_size": model.config.vocab_size,
            "letter_tokens": {letter: model.letter_token(letter) for letter in ("A", "B")},
        }
    if op == "encode":
        return {"tokens": model.encode(str(request.get("text", "")))}
    if op == "logits":
        session = _session(model, request)
        for layer, position in request.get("capture") or []:
            session.request_capture(int(layer), int(position))
        logits = session.forward_last_logits(_prompt_tokens(model, request))
        return {
            "logits": np.asarray(logits, dtype=np.float64).tolist(),
            "captured": [
                [layer, position, vector.tolist()]
                for (layer, position), vector in sorted(session.captured.items())
            ],
        }
    if op == "generate":
        session = _session(model, request)
        tokens = session.generate(
            _prompt_tokens(model, request),
            int(request["max_new"]),
            float(request.get("temperature", 0.0)),
            int(request.get("gen_seed", 0)),
        )
        return {"tokens": tokens}
    if op == "perplexity":
        session = _session(model, request)
        scorer = model.open_session() if request.get("baseline_scored") else None
        value = session.perplexity(
            _prompt_tokens(model, request),
            int(request.get("window", DEFAULT_PPL_WINDOW)),
            float(request.get("temperature", DEFAULT_TEMPERATURE)),
            int(request.get("gen_seed", DEFAULT_GEN_SEED)),
            scorer,
        )
        return {"perplexity": value}
    raise BackendError(f"unknown op {op!r}")


def serve(model: ModelHandle, instream: IO[str], outstream: IO[str]) -> int:
    """Answer requests until EOF; returns the number of requests handled."""

    handled = 0
    for line in instream:
        if not line.strip():
            continue
        try:
            request = json.loads(line)
            response: dict[str, Any] = {"ok": True, **handle_request(model, request)}
        except CultureSteerError as exc:
            response = {"ok": False, "error": type(exc).__name__, "message": str(exc)}
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            response = {"ok": False, "error": "BackendError", "message": str(exc)}
        outstream.write(json.dumps(response) + "\n")
        outstream.flush()
        handled += 1
    logger.info("backend served %d requests", handled)
    return handled


class RemoteSession(Session):
    def __init__(self, backend: "SubprocessBackend", interventions: InterventionSpec | None = None) -> None:
        super().__init__(backend.n_layers, backend.d_model, backend.max_seq, interventions)
        self.backend = backend

    def forward_last_logits(self, tokens: Sequence[int]) -> np.ndarray:
        reply = self.backend.request(
            {
                "op": "logits",
                "prompt": list(tokens),
                "interventions": self.interventions.to_json(),
                "capture": [list(req) for req in self.capture_requests],
            }
        )
        self.captured = {
            (int(layer), int(position)): np.asarray(vector, dtype=np.float64)
            for layer, position, vector in reply["captured"]
        }
        return np.asarray(reply["logits"], dtype=np.float64)

    def generate(self, prompt: Sequence[int], max_new: int, temperature: float = 0.0, gen_seed: int = 0) -> list[int]:
        reply = self.backend.request(
            {
                "op": "generate",
                "prompt": list(prompt),
                "max_new": max_new,
                "temperature": temperature,
                "gen_seed": gen_seed,
                "interventions": self.interventions.to_json(),
            }
        )
        return [int(t) for t in reply["tokens"]]

    def perplexity(
        self,
        prompt: Sequence[int],
        window: int = DEFAULT_PPL_WINDOW,
        temperature: float = DEFAULT_TEMPERATURE,
        gen_seed: int = DEFAULT_GEN_SEED,
        scorer: Session | None = None,
    ) -> float:
        reply = self.backend.request(
            {
                "op": "perplexity",
                "prompt": list(prompt),
                "window": window,
                "temperature": temperature,
                "gen_seed": gen_seed,
                "interventions": self.interventions.to_json(),
                "baseline_scored": scorer is not None,
            }
        )
        return float(reply["perplexity"])


class SubprocessBackend:
    """Model backend living in a child process that speaks the protocol above.

    Requests from all sessions are serialised through one pipe under a lock.
    """

    def __init__(self, command: Sequence[str]) -> None:
        self._proc = subprocess.Popen(
            list(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            encoding="utf-8",
        )
        self._lock = threading.Lock()
        info = self.request({"op": "info"})
        self.n_layers = int(info["n_layers"])
        self.d_model = int(info["d_model"])
        self.max_seq = int(info["max_seq"])
        self._letters = {k: int(v) for k, v in info.get("letter_tokens", {}).items()}

    def request(self, payload: dict) -> dict:
        if self._proc.stdin is None or self._proc.stdout is None:
            raise BackendError("backend process has no pipes")
        with self._lock:
            self._proc.stdin.write(json.dumps(payload) + "\n")
            self._proc.stdin.flush()
            line = self._proc.stdout.readline()
        if not line:
            raise BackendError(f"backend exited (code {self._proc.poll()})")
        reply = json.loads(line)
        if not reply.get("ok"):
            raise BackendError(f"{reply.get('error')}: {reply.get('message')}")
        return reply

    def encode(self, text: str) -> list[int]:
        return [int(t) for t in self.request({"op": "encode", "text": text})["tokens"]]

    def letter_token(self, letter: str) -> int:
        if letter in self._letters:
            return self._letters[letter]
        return resolve_letter_token(self.encode, letter)

    def open_session(self, interventions: InterventionSpec | None = None) -> RemoteSession:
        return RemoteSession(self, interventions)

    def close(self) -> None:
        if self._proc.stdin is not None:
            self._proc.stdin.close()
        self._proc.wait()

    def __enter__(self) -> "SubprocessBackend":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


__all__ = [
    "handle_request",
    "serve",
    "RemoteSession",
    "SubprocessBackend",
]
