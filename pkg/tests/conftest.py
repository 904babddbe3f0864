import numpy as np
import pytest

from reskws.synthetic import write_synthetic_dataset


def naive_conv2d(x, w, dh, dw):
    """Direct nested-loop reference for the same-padded dilated 3x3 convolution."""
    n, c, h, wd = x.shape
    o = w.shape[0]
    out = np.zeros((n, o, h, wd))
    for b in range(n):
        for k in range(o):
            for y in range(h):
                for xx in range(wd):
                    s = 0.0
                    for ch in range(c):
                        for i in range(3):
                            for j in range(3):
                                yy, xj = y + (i - 1) * dh, xx + (j - 1) * dw
                                if 0 <= yy < h and 0 <= xj < wd:
                                    s += w[k, ch, i, j] * x[b, ch, yy, xj]
                    out[b, k, y, xx] = s
    return out


def numeric_grad(f, x, h=1e-3):
    """Central differences of scalar ``f`` w.r.t. every entry of ``x`` (modified in place, restored)."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def max_rel_error(analytic, numeric, floor=1e-6):
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(numeric, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


@pytest.fixture(scope="session")
def synth_root(tmp_path_factory):
    return write_synthetic_dataset(tmp_path_factory.mktemp("speech_commands"), n_speakers=40, seed=0)


TRAINED_EPOCHS = 6


@pytest.fixture(scope="session")
def trained_run(synth_root, tmp_path_factory):
    """Output directory of a short CLI training run of res8-narrow on the synthetic corpus."""
    from reskws import cli

    out = tmp_path_factory.mktemp("trained")
    argv = ["train", "--arch", "res8-narrow", "--data", str(synth_root), "--epochs", str(TRAINED_EPOCHS), "--out", str(out)]
    assert cli.main(argv) == 0
    return out


_acceptance = []


def pytest_runtest_logreport(report):
    if "test_acceptance.py" in report.nodeid and (report.when == "call" or report.failed):
        _acceptance.append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _acceptance:
        terminalreporter.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {name}")
