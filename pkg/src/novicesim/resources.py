"""Locate bundled data files (configs, problems, prompt blocks, references)."""

from __future__ import annotations

from pathlib import Path

DATA_DIR = Path(__file__).resolve().parent / "data"


def data_path(*parts: str) -> Path:
    return DATA_DIR.joinpath(*parts)


def resolve(path, *subdirs: str, suffixes: tuple[str, ...] = ()) -> Path:
    """Resolve a user path, falling back to bundled data.

    ``path`` is tried as given, then under each bundled ``subdirs`` directory,
    with each of ``suffixes`` appended. Bundled names like ``particle`` thus
    work wherever a file path is accepted.
    """
    p = Path(path)
    candidates = [p] + [p.with_name(p.name + s) for s in suffixes]
    for sub in ("",) + subdirs:
        base = DATA_DIR / sub if sub else DATA_DIR
        candidates += [base / p] + [base / (p.name + s) for s in suffixes]
    for c in candidates:
        if c.is_file():
            return c
    return p
