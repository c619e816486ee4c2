#!/usr/bin/env python3
"""Closed-form expected values for the loss/cost unit tests, computed
directly from the defining formulas and frozen into the C++ suites."""

import math


def main():
    # Smoothed dice coefficient: (2*inter + 1) / (|a| + |b| + 1)
    print("dice identical |m|=100     :", (200 + 1) / (200 + 1))
    print("dice both empty            :", (0 + 1) / (0 + 1))
    print("dice disjoint |a|=|b|=4    :", (0 + 1) / (4 + 4 + 1), "= 1/9 =", "%.17g" % (1.0 / 9.0))
    print("dice cost (1.0, 1/9)       :", "%.17g" % (-(1.0 + 1.0 / 9.0) / 2.0), "= -5/9 =", "%.17g" % (-5.0 / 9.0))
    print("dice loss (1.0, 1/9)       :", "%.17g" % ((1.0 - 1.0) + (1.0 - 1.0 / 9.0)), "= 8/9 =", "%.17g" % (8.0 / 9.0))

    # Focal, single pixel, alpha=0.25 gamma=2
    f_pos = -0.25 * (1 - 0.9) ** 2 * math.log(0.9)
    f_neg = -0.75 * (1 - 0.9) ** 2 * math.log(0.9)   # GT=0, p_hat=0.1 -> p_T=0.9, alpha_T=0.75
    print("focal GT=1 p=0.9           :", "%.17g" % f_pos)
    print("focal GT=0 p=0.1           :", "%.17g" % f_neg)

    # Mask loss composition with lambda_d=5, lambda_f=2
    print("mask loss 5*(8/9)+2*f_pos  :", "%.17g" % (5 * (8.0 / 9.0) + 2 * f_pos), "(= 40/9 + %.17g)" % (2 * f_pos))

    # Reference cost: -(1/T) sum r_hat . r  (probabilities dotted with one-hot)
    print("ref cost (0.8,0.4) pos GT  :", "%.17g" % (-(0.8 + 0.4) / 2.0))

    # Reference loss: -lambda_r (1/T) sum w * log(r_hat[class]), w=0.1 negative
    print("ref loss neg r=0.5 lr=2    :", "%.17g" % (2 * 0.1 * -math.log(0.5)))
    print("ref loss pos r=0.5 lr=2    :", "%.17g" % (2 * 1.0 * -math.log(0.5)))

    # Reference head softmax with logits (0, ln 3)
    z = math.exp(0), math.exp(math.log(3.0))
    s = z[0] + z[1]
    print("softmax (0, ln3)           :", z[0] / s, z[1] / s)

    # Region IoU for the 10x10 square shifted by (1,1) on a 96x96 canvas
    print("J shifted square           : 81/119 =", "%.17g" % (81.0 / 119.0))
    # And the 3x3 square shifted one column: inter 6, union 12
    print("iou 3x3 shift-col          :", 6 / 12)
    # Two-sample overall/mean: (6,12) and (0,9)
    print("overall (6+0)/(12+9)       :", "%.17g" % (6.0 / 21.0))
    print("mean (0.5+0)/2             :", (0.5 + 0) / 2)


if __name__ == "__main__":
    main()
