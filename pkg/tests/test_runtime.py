"""Forward pass, interventions, decoding and perplexity of the tiny runtime."""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np
import pytest

from culturesteer.errors import (
    EmptyContinuation,
    InvalidConfig,
    SequenceTooLong,
    ShapeMismatch,
    TokenOutOfRange,
    WeightsFileError,
)
from culturesteer.runtime import (
    EOS_ID,
    InterventionSpec,
    ModelConfig,
    ModelHandle,
    config_from_weights,
    encode,
    decode,
    load_model,
    parameter_shapes,
    save_weights,
)
from culturesteer.weights import read_tensors

PROMPT = encode("Option A or Option B?")


def _capture(model: ModelHandle, tokens, layers, spec: InterventionSpec | None = None) -> dict:
    session = model.open_session(spec)
    for layer in layers:
        session.request_capture(layer, -1)
        session.request_capture(layer, 0)
    session.forward_last_logits(tokens)
    return session.captured


def _zero_model(**overrides) -> ModelHandle:
    config = ModelConfig(d_model=8, n_layers=2, n_heads=2, d_ff=16, max_seq=64, **overrides)
    return ModelHandle(config, {name: np.zeros(shape) for name, shape in parameter_shapes(config).items()})


def test_tokenizer_offsets_bytes() -> None:
    assert encode("A") == [68]
    assert decode(encode("Søren")) == "Søren"
    assert decode([0, 1, 2] + encode("x")) == "x"


def test_letter_tokens(tiny_model: ModelHandle) -> None:
    assert tiny_model.letter_token("A") == 68
    assert tiny_model.letter_token("B") == 69


def test_forward_is_deterministic(tiny_model: ModelHandle) -> None:
    first = tiny_model.open_session().forward_last_logits(PROMPT)
    second = tiny_model.open_session().forward_last_logits(PROMPT)
    assert first.shape == (259,)
    assert np.array_equal(first, second)


def test_same_seed_same_weights() -> None:
    config = ModelConfig(d_model=8, n_layers=2, n_heads=2, d_ff=16, max_seq=64, init_seed=3)
    a, b = load_model(config), load_model(config)
    assert all(np.array_equal(a.weights[k], b.weights[k]) for k in a.weights)


def test_zero_alpha_is_bitwise_noop(tiny_model: ModelHandle) -> None:
    vector = np.linspace(-1.0, 1.0, tiny_model.d_model)
    spec = InterventionSpec.from_vectors({2: vector}, [2], 0.0)
    plain = tiny_model.open_session().forward_last_logits(PROMPT)
    steered = tiny_model.open_session(spec).forward_last_logits(PROMPT)
    assert np.array_equal(plain, steered)


def test_injection_is_local_and_added_everywhere(tiny_model: ModelHandle) -> None:
    layer = 2
    vector = np.linspace(-1.0, 1.0, tiny_model.d_model)
    spec = InterventionSpec.from_vectors({layer: vector}, [layer], 0.3)
    plain = _capture(tiny_model, PROMPT, range(tiny_model.n_layers))
    steered = _capture(tiny_model, PROMPT, range(tiny_model.n_layers), spec)

    for lower in range(layer):
        assert np.array_equal(plain[(lower, -1)], steered[(lower, -1)])
    for position in (-1, 0):
        np.testing.assert_allclose(
            steered[(layer, position)] - plain[(layer, position)], 0.3 * vector, atol=1e-12
        )
    assert not np.allclose(plain[(layer + 1, -1)], steered[(layer + 1, -1)])


def test_injection_is_linear_in_alpha(tiny_model: ModelHandle) -> None:
    vector = np.ones(tiny_model.d_model)
    base = _capture(tiny_model, PROMPT, [1])[(1, -1)]
    once = _capture(tiny_model, PROMPT, [1], InterventionSpec.from_vectors({1: vector}, [1], 0.5))[(1, -1)]
    twice = _capture(tiny_model, PROMPT, [1], InterventionSpec.from_vectors({1: vector}, [1], 1.0))[(1, -1)]
    np.testing.assert_allclose(twice - base, 2.0 * (once - base), atol=1e-12)


def test_intervention_validation(tiny_model: ModelHandle) -> None:
    with pytest.raises(InvalidConfig):
        tiny_model.open_session(InterventionSpec.from_vectors({9: np.zeros(16)}, [9], 0.1))
    with pytest.raises(InvalidConfig):
        tiny_model.open_session(InterventionSpec.from_vectors({0: np.zeros(3)}, [0], 0.1))


def test_token_and_length_limits(tiny_model: ModelHandle) -> None:
    with pytest.raises(TokenOutOfRange):
        tiny_model.open_session().forward_last_logits([259])
    with pytest.raises(SequenceTooLong):
        tiny_model.open_session().forward_last_logits([3] * (tiny_model.max_seq + 1))


def test_generation_slides_past_max_seq() -> None:
    model = load_model(ModelConfig(d_model=8, n_layers=2, n_heads=2, d_ff=16, max_seq=8))
    session = model.open_session()
    out = session.generate(encode("abcdefgh"), max_new=6, temperature=0.0)
    assert len(out) <= 6
    with pytest.raises(SequenceTooLong):
        session.generate(encode("abcdefghi"), max_new=1)


def test_sampling_is_seeded(tiny_model: ModelHandle) -> None:
    session = tiny_model.open_session()
    a = session.generate(PROMPT, max_new=12, temperature=0.7, gen_seed=42)
    b = session.generate(PROMPT, max_new=12, temperature=0.7, gen_seed=42)
    assert a == b
    assert EOS_ID not in a


def test_uniform_model_perplexity_is_vocab_size() -> None:
    session = _zero_model().open_session()
    assert session.perplexity(encode("hello"), window=8, temperature=0.0) == pytest.approx(259.0)


def test_perplexity_of_scripted_continuation(scripted_model) -> None:
    a, b = encode("a")[0], encode("b")[0]
    prompt = encode("x")

    def logits(tokens, text, deltas):
        out = np.zeros(259)
        step = len(tokens) - len(prompt)
        if step == 0:
            out[a] = math.log(258)
        elif step == 1:
            out[b] = math.log(258 / 3)
        else:
            out[EOS_ID] = 10.0
        return out

    session = scripted_model(logits).open_session()
    assert session.generate(prompt, max_new=5) == [a, b]
    assert session.perplexity(prompt, window=5, temperature=0.0) == pytest.approx(2.8284, abs=1e-4)


def test_immediate_eos_has_no_perplexity(scripted_model) -> None:
    def logits(tokens, text, deltas):
        out = np.zeros(259)
        out[EOS_ID] = 10.0
        return out

    with pytest.raises(EmptyContinuation):
        scripted_model(logits).open_session().perplexity(encode("x"), window=4, temperature=0.0)


def test_weights_file_restores_the_model(tmp_path: Path, tiny_model: ModelHandle) -> None:
    path = save_weights(tiny_model, tmp_path / "model.bin")
    config = config_from_weights(path)
    assert config == tiny_model.config
    restored = load_model(config, path)
    assert np.array_equal(
        restored.open_session().forward_last_logits(PROMPT),
        tiny_model.open_session().forward_last_logits(PROMPT),
    )


def test_bad_weights_files(tmp_path: Path, tiny_model: ModelHandle) -> None:
    short = tmp_path / "short.bin"
    short.write_bytes(b"\x01\x02")
    with pytest.raises(WeightsFileError):
        load_model(tiny_model.config, short)

    path = save_weights(tiny_model, tmp_path / "model.bin")
    truncated = tmp_path / "truncated.bin"
    truncated.write_bytes(path.read_bytes()[:-64])
    with pytest.raises(ShapeMismatch):
        load_model(tiny_model.config, truncated)

    with pytest.raises(ShapeMismatch):
        load_model(ModelConfig(d_model=32, n_layers=4, n_heads=2, d_ff=32, max_seq=1024), path)

    with pytest.raises(WeightsFileError, match="cannot read"):
        read_tensors(tmp_path / "absent.bin")
    header = json.dumps({"dtype": "float32", "tensors": [{"name": "wte", "offset": 0}]}).encode("utf-8")
    broken = tmp_path / "broken.bin"
    broken.write_bytes(struct.pack("<Q", len(header)) + header + bytes(4))
    with pytest.raises(WeightsFileError, match="malformed tensor entry"):
        read_tensors(broken)


def _ppl_or_none(session, prompt: list[int]) -> float | None:
    try:
        return session.perplexity(prompt, window=4, temperature=0.7, gen_seed=11)
    except EmptyContinuation:
        return None


def test_zero_alpha_changes_nothing_on_random_prompts(tiny_model: ModelHandle) -> None:
    rng = np.random.default_rng(2024)
    for _ in range(100):
        prompt = rng.integers(3, 259, size=int(rng.integers(1, 24))).tolist()
        layers = sorted(set(rng.integers(0, tiny_model.n_layers, size=2).tolist()))
        vectors = {layer: rng.normal(size=tiny_model.d_model) for layer in layers}
        spec = InterventionSpec.from_vectors(vectors, layers, 0.0)
        plain, steered = tiny_model.open_session(), tiny_model.open_session(spec)

        assert np.array_equal(plain.forward_last_logits(prompt), steered.forward_last_logits(prompt))
        assert plain.generate(prompt, max_new=3) == steered.generate(prompt, max_new=3)
        assert _ppl_or_none(plain, prompt) == _ppl_or_none(steered, prompt)


def test_clearing_restores_the_unsteered_session(tiny_model: ModelHandle) -> None:
    spec = InterventionSpec.from_vectors({1: np.linspace(-2.0, 2.0, tiny_model.d_model)}, [1], 0.4)
    baseline = tiny_model.open_session().forward_last_logits(PROMPT)

    session = tiny_model.open_session(spec)
    session.request_capture(1)
    assert not np.array_equal(session.forward_last_logits(PROMPT), baseline)
    assert (1, -1) in session.captured

    session.clear_interventions()
    session.clear_captures()
    assert session.captured == {}
    assert np.array_equal(session.forward_last_logits(PROMPT), baseline)
    assert session.captured == {}
    assert session.generate(PROMPT, max_new=4) == tiny_model.open_session().generate(PROMPT, max_new=4)
