import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from gridsense import denoiser as dn
from gridsense.grid import bundled_case_path, load_case
from gridsense.problem import build_problem

settings.register_profile(
    "repo", deadline=None, derandomize=True, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repo")
torch.set_num_threads(1)


def random_graph(rng: np.random.Generator, n: int, p: float) -> np.ndarray:
    a = np.triu(rng.random((n, n)) < p, 1)
    return (a | a.T).astype(int)


@pytest.fixture(scope="session")
def ieee9():
    return load_case(bundled_case_path("ieee9"))


@pytest.fixture(scope="session")
def problem9(ieee9):
    return build_problem(ieee9, seed=0, n_conditions=20)


def fd_check(model, batches, T, sched, seed, h=1e-5):
    """Analytic loss and the worst relative error against central differences over every parameter."""
    loss, grads = dn.loss_and_grad(model, batches, T, sched, seed)
    worst = 0.0
    with torch.no_grad():
        for name, p in model.named_parameters():
            flat = p.view(-1)
            g = grads[name].reshape(-1)
            for i in range(flat.numel()):
                old = flat[i].item()
                flat[i] = old + h
                up = float(dn.loss_tensor(model, batches, T, sched, seed))
                flat[i] = old - h
                down = float(dn.loss_tensor(model, batches, T, sched, seed))
                flat[i] = old
                fd = (up - down) / (2 * h)
                worst = max(worst, abs(fd - g[i]) / max(abs(fd), abs(g[i]), 1e-6))
    return loss, worst


ACCEPTANCE: dict[object, tuple[bool, str]] = {}


def record(criterion, ok: bool, detail: str) -> bool:
    ACCEPTANCE[criterion] = (bool(ok), detail)
    print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} ({detail})")
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE, key=str):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} ({detail})")
