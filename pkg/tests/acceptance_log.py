"""Collects one result line per acceptance criterion for the terminal summary."""

LINES: dict[int, str] = {}


def record(criterion: int, passed: bool, detail: str) -> bool:
    LINES[criterion] = f"criterion {criterion:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(LINES[criterion])
    return passed
