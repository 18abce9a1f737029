"""One line per acceptance criterion, filled in by test_acceptance and
printed in the pytest terminal summary."""
RESULTS: list[str] = []


def record(criterion: str, ok: bool, detail: str, seconds: float | None = None) -> None:
    t = "" if seconds is None else f" [{seconds:.2f} s]"
    line = f"{'PASS' if ok else 'FAIL'}  {criterion:<5s} {detail}{t}"
    RESULTS.append(line)
    print(line)
