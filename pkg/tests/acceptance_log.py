"""Collects one pass/fail line per acceptance criterion for the terminal summary."""

LINES: list[str] = []


def record(cid: int, name: str, passed: bool, detail: str) -> bool:
    LINES.append(f"[{'PASS' if passed else 'FAIL'}] criterion {cid}: {name} | {detail}")
    return passed
