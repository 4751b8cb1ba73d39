"""Line-delimited JSON model protocol, in-process and through a child process."""

from __future__ import annotations

import io
import json
import sys
from pathlib import Path

import numpy as np
import pytest

from culturesteer.backend import SubprocessBackend, serve
from culturesteer.runtime import InterventionSpec, ModelHandle, encode, save_weights
from conftest import SRC

PROMPT = "Option A or Option B?"


def _exchange(model: ModelHandle, *requests: dict | str) -> list[dict]:
    lines = [r if isinstance(r, str) else json.dumps(r) for r in requests]
    out = io.StringIO()
    handled = serve(model, io.StringIO("\n".join(lines) + "\n"), out)
    assert handled == len(lines)
    return [json.loads(line) for line in out.getvalue().splitlines()]


def test_info_and_encode(tiny_model: ModelHandle) -> None:
    info, encoded = _exchange(tiny_model, {"op": "info"}, {"op": "encode", "text": "A"})
    assert info["ok"] and info["n_layers"] == 4 and info["d_model"] == 16
    assert info["letter_tokens"] == {"A": 68, "B": 69}
    assert encoded["tokens"] == [68]


def test_logits_match_local_session(tiny_model: ModelHandle) -> None:
    vector = np.linspace(-1, 1, 16)
    spec = InterventionSpec.from_vectors({1: vector}, [1], 0.2)
    (reply,) = _exchange(
        tiny_model,
        {"op": "logits", "prompt": PROMPT, "interventions": spec.to_json(), "capture": [[1, -1]]},
    )
    session = tiny_model.open_session(spec)
    session.request_capture(1, -1)
    expected = session.forward_last_logits(encode(PROMPT))
    np.testing.assert_allclose(reply["logits"], expected, rtol=0, atol=1e-12)
    (layer, position, captured) = reply["captured"][0]
    assert (layer, position) == (1, -1)
    np.testing.assert_allclose(captured, session.captured[(1, -1)], atol=1e-12)


def test_system_text_is_prepended(tiny_model: ModelHandle) -> None:
    with_system, joined = _exchange(
        tiny_model,
        {"op": "logits", "prompt": PROMPT, "system": "You are a person from Denmark."},
        {"op": "logits", "prompt": "You are a person from Denmark.\n\n" + PROMPT},
    )
    assert with_system["logits"] == joined["logits"]


def test_errors_are_reported_in_band(tiny_model: ModelHandle) -> None:
    bad_op, bad_json, too_big, ok = _exchange(
        tiny_model,
        {"op": "shutdown"},
        "{not json",
        {"op": "logits", "prompt": [300]},
        {"op": "info"},
    )
    assert bad_op == {"ok": False, "error": "BackendError", "message": "unknown op 'shutdown'"}
    assert bad_json["ok"] is False and bad_json["error"] == "BackendError"
    assert too_big["error"] == "TokenOutOfRange"
    assert ok["ok"] is True


def test_subprocess_backend_matches_local(
    tmp_path: Path, tiny_model: ModelHandle, monkeypatch: pytest.MonkeyPatch
) -> None:
    weights = save_weights(tiny_model, tmp_path / "model.bin")
    monkeypatch.setenv("PYTHONPATH", str(SRC))
    command = [sys.executable, "-m", "culturesteer.cli", "serve", "--weights", str(weights), "--quiet"]
    with SubprocessBackend(command) as backend:
        assert (backend.n_layers, backend.d_model) == (4, 16)
        assert backend.letter_token("A") == 68
        tokens = backend.encode(PROMPT)
        remote = backend.open_session().forward_last_logits(tokens)
        local = tiny_model.open_session().forward_last_logits(tokens)
        np.testing.assert_allclose(remote, local, atol=1e-12)

        greedy = backend.open_session().generate(tokens, max_new=4)
        assert greedy == tiny_model.open_session().generate(tokens, max_new=4)
