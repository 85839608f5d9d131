"""Independent naive-loop oracles shared by the tests."""

import numpy as np


def naive_conv(x, weight, bias, stride, padding, groups):
    n, c, h, w = x.shape
    out_c, per_group, k, _ = weight.shape
    padded = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    out = np.zeros((n, out_c, ho, wo))
    out_per_group = out_c // groups
    for b in range(n):
        for o in range(out_c):
            g = o // out_per_group
            for i in range(ho):
                for j in range(wo):
                    total = 0.0 if bias is None else bias[o]
                    for ci in range(per_group):
                        for ki in range(k):
                            for kj in range(k):
                                total += (weight[o, ci, ki, kj]
                                          * padded[b, g * per_group + ci, i * stride + ki, j * stride + kj])
                    out[b, o, i, j] = total
    return out


def naive_bilinear(x, ho, wo):
    """Half-pixel bilinear sampling, one output pixel at a time."""
    n, c, h, w = x.shape
    out = np.zeros((n, c, ho, wo))

    def taps(i, n_in, n_out):
        src = max((i + 0.5) * n_in / n_out - 0.5, 0.0)
        lo = min(int(np.floor(src)), n_in - 1)
        return lo, min(lo + 1, n_in - 1), src - lo

    for i in range(ho):
        r0, r1, fr = taps(i, h, ho)
        for j in range(wo):
            c0, c1, fc = taps(j, w, wo)
            out[:, :, i, j] = ((1 - fr) * ((1 - fc) * x[:, :, r0, c0] + fc * x[:, :, r0, c1])
                               + fr * ((1 - fc) * x[:, :, r1, c0] + fc * x[:, :, r1, c1]))
    return out

