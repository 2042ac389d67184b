import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def direct_conv(x, kernels, bias):
    """Triple-loop 3x3 same-padding convolution; the oracle for conv2d_forward."""
    n, c_in, h, w = x.shape
    c_out = kernels.shape[0]
    padded = np.zeros((n, c_in, h + 2, w + 2))
    padded[:, :, 1:-1, 1:-1] = x
    out = np.zeros((n, c_out, h, w))
    for b in range(n):
        for co in range(c_out):
            for y in range(h):
                for xx in range(w):
                    acc = bias[co]
                    for ci in range(c_in):
                        for dy in range(3):
                            for dx in range(3):
                                acc += padded[b, ci, y + dy, xx + dx] * kernels[co, ci, dy, dx]
                    out[b, co, y, xx] = acc
    return out
