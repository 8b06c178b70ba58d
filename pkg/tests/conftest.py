import numpy as np
import pytest
import torch


def fd_relative_error(loss_fn, params, step=1e-5, floor=1e-8):
    """Relative error ||g_autograd - g_fd|| / max(||g_autograd||, ||g_fd||) over ``params``.

    The norms run over all parameters jointly, so a tensor whose gradient is
    nearly zero does not turn round-off into a large ratio. ``loss_fn`` takes no
    arguments and returns a scalar tensor; parameters must be float64.
    """
    params = list(params)
    for p in params:
        p.grad = None
    loss_fn().backward()
    analytic, numeric = [], []
    for p in params:
        analytic.append(p.grad.detach().reshape(-1).clone() if p.grad is not None else torch.zeros(p.numel(), dtype=p.dtype))
        num = torch.zeros(p.numel(), dtype=p.dtype)
        flat = p.data.view(-1)
        for i in range(flat.numel()):
            old = flat[i].item()
            with torch.no_grad():
                flat[i] = old + step
                up = loss_fn().item()
                flat[i] = old - step
                down = loss_fn().item()
                flat[i] = old
            num[i] = (up - down) / (2 * step)
        numeric.append(num)
    a, n = torch.cat(analytic), torch.cat(numeric)
    return ((a - n).norm() / max(a.norm().item(), n.norm().item(), floor)).item()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)


_CRITERIA = {}


def report_criterion(number, passed, detail):
    """Record and print one acceptance line; the session summary repeats them."""
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
    _CRITERIA[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: multi-minute training runs")
