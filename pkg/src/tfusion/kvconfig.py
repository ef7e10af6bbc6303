"""Plain `key = value` configuration grammar.

One pair per line, `#` starts a comment, blank lines ignored. The same
grammar serves the CLI config file and the config blob embedded in
checkpoints; schemas are applied by the callers.
"""

from .errors import ConfigError


def parse_kv_text(text: str) -> dict:
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = line.split("=", 1)
        key, value = key.strip(), value.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in pairs:
            raise ConfigError(f"line {lineno}: duplicate key '{key}'")
        pairs[key] = value
    return pairs


def format_kv_text(pairs) -> str:
    return "".join(f"{key} = {value}\n" for key, value in pairs)
