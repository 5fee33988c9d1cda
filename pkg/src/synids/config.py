"""Key-value config files.

One ``key = value`` pair per line; ``#`` starts a comment; keys are dotted
(``basis.a``, ``attack.rate_pps``). Lists are comma-separated.
"""

from __future__ import annotations

import hashlib
from typing import Dict, List, Optional

from .errors import ConfigError


def parse_config(text: str) -> Dict[str, str]:
    out = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {line_no}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"config line {line_no}: empty key")
        out[key] = value
    return out


def load_config(path: Optional[str]) -> Dict[str, str]:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def get_float(cfg, key, default=None) -> Optional[float]:
    if key not in cfg:
        return default
    try:
        return float(cfg[key])
    except ValueError:
        raise ConfigError(f"{key}: {cfg[key]!r} is not a number") from None


def get_int(cfg, key, default=None) -> Optional[int]:
    if key not in cfg:
        return default
    try:
        return int(cfg[key], 0)
    except ValueError:
        raise ConfigError(f"{key}: {cfg[key]!r} is not an integer") from None


def get_bool(cfg, key, default=False) -> bool:
    if key not in cfg:
        return default
    value = cfg[key].lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: {cfg[key]!r} is not a boolean")


def get_list(cfg, key, default=None) -> Optional[List[str]]:
    if key not in cfg:
        return default
    return [item.strip() for item in cfg[key].split(",") if item.strip()]


def get_floats(cfg, key) -> Optional[List[float]]:
    items = get_list(cfg, key)
    if items is None:
        return None
    try:
        return [float(v) for v in items]
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated numbers") from None


def derive_seed(seed: int, stage: str) -> int:
    """Independent 64-bit seed for one pipeline stage."""
    digest = hashlib.blake2b(f"{int(seed)}:{stage}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")
