import contextlib
import time

RESULTS = {}  # criterion number -> (title, passed, detail, seconds)


@contextlib.contextmanager
def criterion(number, title, budget):
    """Time a block and record one PASS/FAIL line for it.

    The block may set ``note["detail"]``; ``note["ok"] = False`` marks a
    documented failure that the block itself does not raise for.
    """
    note = {"detail": "", "ok": True}
    start = time.perf_counter()
    try:
        yield note
    except BaseException as exc:
        elapsed = time.perf_counter() - start
        RESULTS[number] = (title, False, note["detail"] or f"{type(exc).__name__}: {exc}".splitlines()[0], elapsed)
        line = _line(number)
        print(line)
        raise
    elapsed = time.perf_counter() - start
    ok = note["ok"] and elapsed < budget
    detail = note["detail"]
    if elapsed >= budget:
        detail = f"runtime {elapsed:.2f}s over {budget}s budget; " + detail
    RESULTS[number] = (title, ok, detail, elapsed)
    print(_line(number))
    assert elapsed < budget, f"criterion {number} took {elapsed:.2f}s (budget {budget}s)"


def _line(number):
    title, ok, detail, elapsed = RESULTS[number]
    return f"{'PASS' if ok else 'FAIL'} criterion {number} ({title}) [{elapsed:.2f}s] {detail}".rstrip()


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        terminalreporter.write_line(_line(number))
