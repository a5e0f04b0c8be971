"""Flat dotted-key configuration files.

One ``key=value`` per line, ``#`` starts a comment::

    scene.seed=7
    net.depth=6
    sweep.sensor_counts=20,40,60,100

Values stay strings until read through one of the typed getters, which
report the key path (and source line) on failure.
"""

from __future__ import annotations

from pathlib import Path

from .errors import FormatError, ValidationError


class Config:
    def __init__(self, values=None, lines=None, source=None):
        self._values = dict(values or {})
        self._lines = dict(lines or {})
        self.source = source

    # construction ---------------------------------------------------------

    @classmethod
    def parse(cls, text: str, source=None) -> "Config":
        values, lines = {}, {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"expected key=value, got {raw.strip()!r}", line=lineno, path=source)
            key, value = (s.strip() for s in line.split("=", 1))
            if not key:
                raise FormatError("empty key", line=lineno, path=source)
            values[key] = value
            lines[key] = lineno
        return cls(values, lines, source)

    @classmethod
    def load(cls, path) -> "Config":
        return cls.parse(Path(path).read_text(), source=str(path))

    def merged(self, other: "Config | dict") -> "Config":
        """New config with ``other``'s keys taking precedence."""
        if isinstance(other, dict):
            other = Config({k: str(v) for k, v in other.items()})
        values = {**self._values, **other._values}
        lines = {**self._lines, **other._lines}
        return Config(values, lines, self.source)

    def dump(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in sorted(self._values.items()))

    # access ---------------------------------------------------------------

    def __contains__(self, key):
        return key in self._values

    def keys(self):
        return self._values.keys()

    def as_dict(self) -> dict[str, str]:
        return dict(self._values)

    def line_of(self, key):
        return self._lines.get(key)

    def fail(self, key, msg):
        where = ""
        if self.source:
            where = f"{self.source}"
            if key in self._lines:
                where += f":{self._lines[key]}"
            where += ": "
        raise ValidationError(f"{where}{key}: {msg}")

    def get_str(self, key, default=None) -> str:
        v = self._values.get(key)
        return default if v is None else v

    def get_int(self, key, default=None) -> int:
        raw = self._values.get(key)
        if raw is None:
            return default
        try:
            return int(raw)
        except ValueError:
            self.fail(key, f"expected integer, got {raw!r}")

    def get_float(self, key, default=None) -> float:
        raw = self._values.get(key)
        if raw is None:
            return default
        try:
            return float(raw)
        except ValueError:
            self.fail(key, f"expected number, got {raw!r}")

    def get_bool(self, key, default=None) -> bool:
        raw = self._values.get(key)
        if raw is None:
            return default
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        self.fail(key, f"expected boolean, got {raw!r}")

    def get_list(self, key, default=None, cast=str) -> list:
        raw = self._values.get(key)
        if raw is None:
            return default
        items = [s.strip() for s in raw.split(",") if s.strip()]
        try:
            return [cast(s) for s in items]
        except ValueError:
            self.fail(key, f"cannot parse list {raw!r}")

    def get_choice(self, key, choices, default=None) -> str:
        raw = self._values.get(key)
        if raw is None:
            return default
        low = raw.lower()
        if low not in choices:
            self.fail(key, f"expected one of {sorted(choices)}, got {raw!r}")
        return low

