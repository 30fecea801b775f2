"""Shared collector for acceptance verdict lines.

Tests record one line per criterion here; the terminal-summary hook in
conftest.py prints them at the end of the run so they survive output capture.
"""

VERDICTS: list[str] = []


def record(line: str) -> None:
    VERDICTS.append(line)
