"""Utility helpers shared across the pipeline."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Sequence, TypeVar

from tqdm import tqdm

from .errors import DataError

T = TypeVar("T")
R = TypeVar("R")

MASK64 = 0xFFFFFFFFFFFFFFFF


def splitmix64(x: int) -> int:
    """One step of the splitmix64 output function on a 64-bit state."""

    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def hash64(seed: int, key: str) -> int:
    """Mix ``seed`` and the UTF-8 bytes of ``key`` into a 64-bit integer.

    The state starts at ``splitmix64(seed mod 2**64)``. The key bytes are
    consumed in 8-byte little-endian chunks (the last chunk zero padded), each
    xor-ed into the state followed by one splitmix64 step. The byte length is
    folded in last so that keys differing only in trailing NUL bytes differ.
    """

    state = splitmix64(seed & MASK64)
    data = key.encode("utf-8")
    for start in range(0, len(data), 8):
        chunk = int.from_bytes(data[start : start + 8].ljust(8, b"\0"), "little")
        state = splitmix64(state ^ chunk)
    return splitmix64(state ^ len(data))


def derive_seed(seed: int, *parts: object) -> int:
    """Seed for a sub-stream identified by ``parts`` (joined with ``|``)."""

    return hash64(seed, "|".join(str(p) for p in parts))


def dumps_json(obj: Any) -> str:
    """Canonical JSON text used for every artifact written to disk."""

    return json.dumps(obj, ensure_ascii=False, indent=2, sort_keys=True) + "\n"


def write_json(path: str | Path, obj: Any) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(dumps_json(obj), encoding="utf-8")
    return out


def read_json(path: str | Path) -> Any:
    """Parsed JSON document; unreadable or malformed files raise :class:`DataError`."""

    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path} is not valid JSON: {exc}") from exc


def parallel_map(
    fn: Callable[[T], R],
    items: Sequence[T],
    jobs: int = 1,
    progress: bool = False,
    desc: str | None = None,
) -> list[R]:
    """``[fn(item) for item in items]`` over a thread pool; results keep input order."""

    bar = tqdm(total=len(items), desc=desc, disable=not progress, leave=False)
    try:
        if jobs <= 1:
            out = []
            for item in items:
                out.append(fn(item))
                bar.update()
            return out
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            out = []
            for result in pool.map(fn, items):
                out.append(result)
                bar.update()
            return out
    finally:
        bar.close()


__all__ = [
    "MASK64",
    "splitmix64",
    "hash64",
    "derive_seed",
    "dumps_json",
    "write_json",
    "read_json",
    "parallel_map",
]
