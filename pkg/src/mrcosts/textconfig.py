"""Structured-text key/value format shared by run configs and archive manifests.

The format is a strict subset of TOML: ``key = value`` lines grouped under
``[section]`` headers, ``#`` comments, blank lines ignored. Values are
integers, floats, booleans (``true``/``false``), double-quoted strings with
backslash escapes, or bare words (returned as strings). Keys before the first
section header land in the ``""`` section.

Writing is deterministic: insertion order is preserved and floats are
rendered with ``%.17g`` so that every IEEE double round-trips exactly.
"""

from __future__ import annotations

from .errors import ParseError

Value = int | float | bool | str
Sections = dict[str, dict[str, Value]]

_ESCAPES = {"n": "\n", "t": "\t", '"': '"', "\\": "\\", "r": "\r"}


def _unquote(raw: str, where: str) -> str:
    out = []
    i = 1
    while i < len(raw) - 1:
        ch = raw[i]
        if ch == "\\":
            i += 1
            if i >= len(raw) - 1 or raw[i] not in _ESCAPES:
                raise ParseError(f"{where}: bad escape in string")
            out.append(_ESCAPES[raw[i]])
        else:
            out.append(ch)
        i += 1
    return "".join(out)


def _parse_value(raw: str, where: str) -> Value:
    raw = raw.strip()
    if not raw:
        raise ParseError(f"{where}: empty value")
    if raw.startswith('"'):
        if len(raw) < 2 or not raw.endswith('"'):
            raise ParseError(f"{where}: unterminated string")
        return _unquote(raw, where)
    if raw == "true":
        return True
    if raw == "false":
        return False
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    # bare word (e.g. auto, abs_imag)
    if all(c.isalnum() or c in "_.-" for c in raw):
        return raw
    raise ParseError(f"{where}: cannot parse value {raw!r}")


def parse(text: str) -> Sections:
    """Parse config text into ``{section: {key: value}}``."""
    sections: Sections = {"": {}}
    current = ""
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        where = f"line {lineno}"
        if stripped.startswith("["):
            if not stripped.endswith("]") or len(stripped) < 3:
                raise ParseError(f"{where}: malformed section header")
            current = stripped[1:-1].strip()
            sections.setdefault(current, {})
            continue
        if "=" not in stripped:
            raise ParseError(f"{where}: expected key = value")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if not key:
            raise ParseError(f"{where}: empty key")
        sections[current][key] = _parse_value(raw, where)
    return sections


def _format_value(value: Value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return "%.17g" % value
    escaped = (
        value.replace("\\", "\\\\")
        .replace('"', '\\"')
        .replace("\n", "\\n")
        .replace("\t", "\\t")
        .replace("\r", "\\r")
    )
    return f'"{escaped}"'


def render(sections: Sections) -> str:
    """Render sections back to text. Inverse of :func:`parse` for valid values."""
    lines: list[str] = []
    top = sections.get("", {})
    for key, value in top.items():
        lines.append(f"{key} = {_format_value(value)}")
    for name, body in sections.items():
        if name == "":
            continue
        if lines:
            lines.append("")
        lines.append(f"[{name}]")
        for key, value in body.items():
            lines.append(f"{key} = {_format_value(value)}")
    return "\n".join(lines) + "\n"


def read_file(path) -> Sections:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse(fh.read())
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
