"""Flat key = value experiment spec files.

The format is line-oriented and diff-friendly: one ``key = value`` pair
per line, ``#`` comments, blank lines ignored.  Values are scalars or
comma-separated lists; numbers parse as int when possible, else float.
A ``schema_version`` key is required so stored specs stay interpretable.

Example::

    schema_version = 1
    kind = rho_h_sweep
    L = 500          # observation rows
    M = 500          # observation columns
    H = 10, 20, 40   # inner dimensions to sweep
    rho = 0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95
    sigma = 0.05     # noise magnitude (matches the solver's sigma)
    trials = 20
    epsilon = 0.1
    zb_threshold = 1e-5
    max_iters = 1000000
    k0 = 1e7
    seed = 42
"""

from __future__ import annotations

from pathlib import Path

SCHEMA_VERSION = 1


def _parse_scalar(tok: str):
    tok = tok.strip()
    try:
        return int(tok)
    except ValueError:
        pass
    try:
        return float(tok)
    except ValueError:
        pass
    if tok.lower() in ("true", "false"):
        return tok.lower() == "true"
    return tok


def parse_value(raw: str):
    raw = raw.strip()
    if "," in raw:
        return [_parse_scalar(t) for t in raw.split(",") if t.strip()]
    return _parse_scalar(raw)


def loads(text: str) -> dict:
    """Parse spec text into a {key: value} dict."""
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ValueError(f"line {lineno}: expected 'key = value', "
                             f"got {line!r}")
        key, _, raw = body.partition("=")
        key = key.strip()
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        if key in out:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        out[key] = parse_value(raw)
    version = out.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"schema_version must be {SCHEMA_VERSION}, "
                         f"got {version!r}")
    return out


def load(path) -> dict:
    return loads(Path(path).read_text())


def dumps(values: dict) -> str:
    """Serialize a flat dict back to spec text (lists join with ', ')."""
    lines = []
    items = dict(values)
    items.setdefault("schema_version", SCHEMA_VERSION)
    for key in sorted(items, key=lambda k: (k != "schema_version", k)):
        val = items[key]
        if val is None:
            continue
        if isinstance(val, (list, tuple)):
            rendered = ", ".join(repr(x) if not isinstance(x, str) else x
                                 for x in val)
        elif isinstance(val, bool):
            rendered = "true" if val else "false"
        else:
            rendered = repr(val) if not isinstance(val, str) else val
        lines.append(f"{key} = {rendered}")
    return "\n".join(lines) + "\n"
