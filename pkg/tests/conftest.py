"""Shared pytest hooks: the acceptance verdicts are printed once at session end."""

ACCEPTANCE: dict[str, list[tuple[bool, str]]] = {}


def record(criterion: str, passed: bool, detail: str) -> bool:
    ACCEPTANCE.setdefault(criterion, []).append((bool(passed), detail))
    print(f"{criterion} {'PASS' if passed else 'FAIL'}: {detail}")
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(ACCEPTANCE, key=lambda c: int(c[1:])):
        checks = ACCEPTANCE[criterion]
        ok = all(p for p, _ in checks)
        detail = "; ".join(d for _, d in checks)
        terminalreporter.write_line(f"{criterion} {'PASS' if ok else 'FAIL'}: {detail}")
