"""Prompt templates with placeholder substitution.

A template set is a directory of plain-text prompts, one file per pipeline
stage. Substitution only touches known ``{name}`` placeholders so JSON
examples inside the prompt text survive untouched. Template sets for the four
bundled task styles (grade-school math, competition math, Python coding,
theory-of-mind stories) ship with the package; a config can point at any
directory with the same file names instead.
"""

from __future__ import annotations

import re
from pathlib import Path

STAGES = ("pivot", "dimension", "coverage", "samples", "answer", "baseline", "value_draw")

_PLACEHOLDER_RE = re.compile(
    r"\{(description|samples|dimension|values|count|instruction|forbidden|nonce)\}"
)

_BUNDLED_DIR = Path(__file__).parent / "templates"


def bundled_tasks() -> list[str]:
    return sorted(p.name for p in _BUNDLED_DIR.iterdir() if p.is_dir())


def render(template: str, **fields) -> str:
    """Replace known placeholders; leave every other brace construct alone."""

    def _sub(match: re.Match) -> str:
        name = match.group(1)
        if name not in fields:
            raise KeyError(f"template needs {{{name}}} but no value was provided")
        return str(fields[name])

    return _PLACEHOLDER_RE.sub(_sub, template)


def numbered(items: list[str]) -> str:
    return "\n".join(f"{i + 1}. {item}" for i, item in enumerate(items))


class TemplateSet:
    """Loaded prompts for one task style."""

    def __init__(self, directory: Path, name: str = ""):
        self.directory = Path(directory)
        self.name = name or self.directory.name
        self._texts: dict[str, str] = {}
        for stage in STAGES:
            path = self.directory / f"{stage}.txt"
            if not path.is_file():
                raise FileNotFoundError(f"template set {self.name!r} lacks {stage}.txt")
            self._texts[stage] = path.read_text(encoding="utf-8")

    @classmethod
    def bundled(cls, task: str) -> "TemplateSet":
        directory = _BUNDLED_DIR / task
        if not directory.is_dir():
            raise FileNotFoundError(
                f"no bundled template set {task!r}; available: {bundled_tasks()}"
            )
        return cls(directory, name=task)

    def pivot(self, description: str, count: int) -> str:
        return render(self._texts["pivot"], description=description, count=count)

    def dimension(self, description: str, samples: list[str], forbidden: list[str]) -> str:
        banned = ", ".join(forbidden) if forbidden else "(none so far)"
        return render(
            self._texts["dimension"],
            description=description,
            samples=numbered(samples),
            forbidden=banned,
        )

    def coverage(self, description: str, dimension: str, values: list[str]) -> str:
        return render(
            self._texts["coverage"],
            description=description,
            dimension=dimension,
            values=numbered(values),
        )

    def samples(self, description: str, count: int) -> str:
        return render(self._texts["samples"], description=description, count=count)

    def answer(self, instruction: str) -> str:
        return render(self._texts["answer"], instruction=instruction)

    def baseline(self, description: str, count: int) -> str:
        return render(self._texts["baseline"], description=description, count=count)

    def value_draw(self, description: str, dimension: str, nonce: int) -> str:
        return render(
            self._texts["value_draw"],
            description=description,
            dimension=dimension,
            nonce=nonce,
        )


__all__ = ["STAGES", "TemplateSet", "render", "numbered", "bundled_tasks"]
