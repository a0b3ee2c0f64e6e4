"""Collects one pass/fail line per acceptance criterion for the session summary."""

LINES = {}


def record(number, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}: {title} | {detail}"
    LINES[number] = line
    print(line)
    return ok
