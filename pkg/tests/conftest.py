import numpy as np
import pytest

from stformer_sci.tensor import Tensor

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def t64(a, requires_grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=requires_grad, dtype=np.float64)


def conv3d_loops(x, w, b, stride, pad):
    """Direct nested-loop cross-correlation on one (D, H, W, Cin) volume."""
    kd, kh, kw, cin, cout = w.shape
    sd, sh, sw = stride
    pd, ph, pw = pad
    xp = np.zeros((x.shape[0] + 2 * pd, x.shape[1] + 2 * ph, x.shape[2] + 2 * pw, cin))
    xp[pd:pd + x.shape[0], ph:ph + x.shape[1], pw:pw + x.shape[2]] = x
    do = (xp.shape[0] - kd) // sd + 1
    ho = (xp.shape[1] - kh) // sh + 1
    wo = (xp.shape[2] - kw) // sw + 1
    out = np.zeros((do, ho, wo, cout))
    for d in range(do):
        for h in range(ho):
            for v in range(wo):
                for co in range(cout):
                    acc = 0.0 if b is None else b[co]
                    for a in range(kd):
                        for bb in range(kh):
                            for c in range(kw):
                                for ci in range(cin):
                                    acc += xp[d * sd + a, h * sh + bb, v * sw + c, ci] * w[a, bb, c, ci, co]
                    out[d, h, v, co] = acc
    return out
