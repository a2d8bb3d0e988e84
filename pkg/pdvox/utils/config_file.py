"""
Flat `key = value` config files: one pair per line, `#` starts a comment,
blank lines are ignored. Keys may use dashes or underscores.
"""

from pathlib import Path

from pdvox.errors import UsageError


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{line_number}: expected `key = value`, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if not key:
            raise UsageError(f"{source}:{line_number}: missing key")
        if key in values:
            raise UsageError(f"{source}:{line_number}: duplicate key {key!r}")
        values[key] = value
    return values


def load_config_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise UsageError(f"cannot read config file {path}: {e}") from e
    return parse_config_text(text, source=str(path))
