import numpy as np
import pytest

from ffnlab import autograd as ag

_criteria: dict[str, tuple[bool, list[str]]] = {}


@pytest.fixture
def criterion(request):
    """Notes list for a named acceptance criterion; the test outcome decides pass/fail."""
    notes: list[str] = []
    request.node._criterion_notes = notes
    return notes


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if not m or rep.when != "call" and not rep.failed:
        return
    name = m.args[0]
    ok, notes = _criteria.get(name, (True, []))
    if rep.failed:
        ok = False
        notes = notes + [str(rep.longrepr).splitlines()[-1][:160]]
    elif rep.skipped:
        ok = False
        notes = notes + ["skipped"]
    else:
        notes = notes + getattr(item, "_criterion_notes", [])
    _criteria[name] = (ok, notes)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_criteria, key=lambda s: int(s.split()[0]) if s[0].isdigit() else 99):
        ok, notes = _criteria[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {'; '.join(notes)}")


def numeric_grad(f, x: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x`` (mutated in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest absolute discrepancy relative to the tensor's gradient scale.

    The floor keeps analytically zero gradients (a key bias) from dividing noise by noise.
    """
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-6)
    return float(np.abs(analytic - numeric).max() / scale)


def gradcheck_params(loss_fn, params: dict[str, ag.Tensor], h: float = 1e-3) -> dict[str, float]:
    """Analytic vs central-difference gradients for each parameter, float64."""
    for t in params.values():
        t.grad = None
    loss = loss_fn()
    ag.backward(loss)
    analytic = {k: t.grad.copy() for k, t in params.items()}

    def value():
        with ag.no_grad():
            return float(loss_fn().data)

    return {k: rel_err(analytic[k], numeric_grad(value, t.data, h)) for k, t in params.items()}
