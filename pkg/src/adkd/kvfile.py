"""Parsing for the line-oriented ``key = value`` files (run configs, corpus specs)."""

from __future__ import annotations

from .errors import ConfigError


def parse_lines(text: str, source: str = "<config>") -> list[tuple[str, str]]:
    """Split ``key = value`` text into pairs, dropping blanks and ``#`` comments."""
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if " #" in line:
            line = line.split(" #", 1)[0].rstrip()
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        pairs.append((key, value))
    return pairs
