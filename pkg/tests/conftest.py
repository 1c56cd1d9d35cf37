import numpy as np
import pytest


class PlainBatchNorm:
    """Textbook per-channel batch norm, written without any band machinery.

    Used as the independent reference that SSN with one sub-band must match.
    """

    def __init__(self, c, eps=1e-5, momentum=0.1):
        self.eps = eps
        self.momentum = momentum
        self.gamma = np.ones(c)
        self.beta = np.zeros(c)
        self.running_mean = np.zeros(c)
        self.running_var = np.ones(c)

    def forward_train(self, x):
        n, c, f, t = x.shape
        y = np.empty_like(x)
        self.cache = []
        for ch in range(c):
            v = x[:, ch]
            mu = v.sum() / v.size
            d = v - mu
            var = (d * d).sum() / v.size
            std = np.sqrt(var + self.eps)
            xh = d / std
            y[:, ch] = self.gamma[ch] * xh + self.beta[ch]
            self.cache.append((d, var, std, xh))
            self.running_mean[ch] = (1 - self.momentum) * self.running_mean[ch] + self.momentum * mu
            self.running_var[ch] = (1 - self.momentum) * self.running_var[ch] + self.momentum * var
        return y

    def forward_infer(self, x):
        g = self.gamma[None, :, None, None]
        b = self.beta[None, :, None, None]
        m = self.running_mean[None, :, None, None]
        v = self.running_var[None, :, None, None]
        return g * (x - m) / np.sqrt(v + self.eps) + b

    def backward(self, dy):
        n, c, f, t = dy.shape
        dx = np.empty_like(dy)
        dgamma = np.empty(c)
        dbeta = np.empty(c)
        for ch in range(c):
            d, var, std, xh = self.cache[ch]
            g = dy[:, ch]
            m = g.size
            dgamma[ch] = (g * xh).sum()
            dbeta[ch] = g.sum()
            dxh = g * self.gamma[ch]
            dvar = (dxh * d).sum() * -0.5 * (var + self.eps) ** -1.5
            dmu = -(dxh / std).sum() + dvar * (-2.0 / m) * d.sum()
            dx[:, ch] = dxh / std + dvar * 2.0 * d / m + dmu / m
        return dx, dgamma, dbeta


@pytest.fixture
def plain_bn():
    return PlainBatchNorm


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
