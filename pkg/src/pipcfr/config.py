"""Flat ``key = value`` config files and named random substreams.

Config files look like::

    # comments start with '#'
    data.kind = temporal
    data.K = 20
    train.lr = 0.001
    train.method = PIPCFR_WASS

Values are parsed as int, float, bool (true/false), ``none``, or a
comma-separated list of those; anything else stays a string.
"""

from __future__ import annotations

import zlib
from pathlib import Path
from typing import Any

import numpy as np

SUBSTREAMS = ("data", "split", "init", "batching")


def substream(root_seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named purpose, derived from the root seed.

    Changing how many draws one stream makes never shifts another stream.
    """
    return np.random.default_rng(np.random.SeedSequence([int(root_seed), zlib.crc32(name.encode())]))


def substream_seed(root_seed: int, name: str) -> int:
    return int(substream(root_seed, name).integers(0, 2**31 - 1))


class ConfigError(ValueError):
    pass


def parse_scalar(text: str) -> Any:
    s = text.strip()
    low = s.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null"):
        return None
    if len(s) >= 2 and s[0] == s[-1] and s[0] in "\"'":
        return s[1:-1]
    for cast in (int, float):
        try:
            return cast(s)
        except ValueError:
            pass
    return s


def parse_value(text: str) -> Any:
    s = text.strip()
    if "," in s and not (s[:1] in "\"'" and s[-1:] == s[:1]):
        return [parse_scalar(p) for p in s.split(",") if p.strip()]
    return parse_scalar(s)


def parse_config_text(text: str, source: str = "<string>") -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if not key or any(c.isspace() for c in key):
            raise ConfigError(f"{source}:{lineno}: bad key {key!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = parse_value(value)
    return out


def load_config(path) -> dict:
    p = Path(path)
    return parse_config_text(p.read_text(encoding="utf-8"), str(p))


def format_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "none"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ", ".join(format_value(x) for x in v)
    return str(v)


def dump_config(cfg: dict) -> str:
    return "".join(f"{k} = {format_value(cfg[k])}\n" for k in sorted(cfg))


def section(cfg: dict, prefix: str) -> dict:
    """Keys under ``prefix.`` with the prefix stripped."""
    pre = prefix + "."
    return {k[len(pre):]: v for k, v in cfg.items() if k.startswith(pre)}
