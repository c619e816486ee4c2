#!/usr/bin/env python3
"""Half-pixel-centers bilinear upsampling oracle.

Computes the 2x2 -> 8x8 expansion of [[1,2],[3,4]] with the half-pixel
(align_corners=False) convention and cross-checks against torch when
available.  The printed table is frozen into the C++ tests.
"""

import numpy as np


def upsample_bilinear(src, factor):
    h, w = src.shape
    oh, ow = h * factor, w * factor
    out = np.zeros((oh, ow), dtype=np.float64)
    for oy in range(oh):
        sy = (oy + 0.5) / factor - 0.5
        y0 = int(np.floor(sy))
        fy = sy - y0
        y0c = min(max(y0, 0), h - 1)
        y1c = min(max(y0 + 1, 0), h - 1)
        for ox in range(ow):
            sx = (ox + 0.5) / factor - 0.5
            x0 = int(np.floor(sx))
            fx = sx - x0
            x0c = min(max(x0, 0), w - 1)
            x1c = min(max(x0 + 1, 0), w - 1)
            out[oy, ox] = (src[y0c, x0c] * (1 - fy) * (1 - fx)
                           + src[y0c, x1c] * (1 - fy) * fx
                           + src[y1c, x0c] * fy * (1 - fx)
                           + src[y1c, x1c] * fy * fx)
    return out


def main():
    src = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = upsample_bilinear(src, 4)
    np.set_printoptions(precision=17, linewidth=200)
    print("2x2 -> 8x8 table (factor 4):")
    for row in out:
        print("  {" + ", ".join("%.17g" % v for v in row) + "},")

    try:
        import torch
        import torch.nn.functional as F
        t = torch.tensor(src, dtype=torch.float64)[None, None]
        ref = F.interpolate(t, scale_factor=4, mode="bilinear", align_corners=False)
        diff = np.abs(ref[0, 0].numpy() - out).max()
        print("max |torch - oracle| =", diff)
    except ImportError:
        print("torch unavailable; skipped cross-check")


if __name__ == "__main__":
    main()
