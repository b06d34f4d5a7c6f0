"""Prompt template assets.

Templates are plain text files with ``{placeholder}`` slots, shipped with the
package and overridable per deployment by pointing the library at a directory
containing same-named files. Rendering is a pure function of the template and
its values, so identical inputs always produce byte-identical prompts.
"""

from __future__ import annotations

import json
from pathlib import Path

from ..core import NamegenError

_TEMPLATE_DIR = Path(__file__).parent / "templates"


class PromptError(NamegenError):
    """Unknown template or missing placeholder value."""


class PromptLibrary:
    def __init__(self, override_dir: str | Path | None = None) -> None:
        self._override_dir = Path(override_dir) if override_dir else None
        self._cache: dict[str, str] = {}

    def _template_path(self, name: str) -> Path:
        filename = f"{name}.txt"
        if self._override_dir is not None:
            candidate = self._override_dir / filename
            if candidate.is_file():
                return candidate
        candidate = _TEMPLATE_DIR / filename
        if not candidate.is_file():
            raise PromptError(f"unknown prompt template {name!r}")
        return candidate

    def raw(self, name: str) -> str:
        if name not in self._cache:
            self._cache[name] = self._template_path(name).read_text(encoding="utf-8")
        return self._cache[name]

    def render(self, name: str, **values: str) -> str:
        try:
            return self.raw(name).format(**values)
        except (KeyError, IndexError) as exc:
            raise PromptError(f"template {name!r} is missing a value: {exc}") from exc


def load_shots(count: int = 2, path: str | Path | None = None) -> tuple[tuple[str, str], ...]:
    """Load up to ``count`` demonstration exemplars as (input, output) pairs."""
    if count <= 0:
        return ()
    source = Path(path) if path else _TEMPLATE_DIR / "shots_ncb.json"
    data = json.loads(source.read_text(encoding="utf-8"))
    pairs = tuple((str(d["input"]), str(d["output"])) for d in data)
    return pairs[:count]
