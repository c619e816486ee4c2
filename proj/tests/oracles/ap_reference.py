#!/usr/bin/env python3
"""Reference 101-point-interpolated average precision (COCO convention).

Standalone oracle for the evaluation code: one prediction per sample, one
ground truth per sample.  A prediction is (confidence, iou).  For a
threshold tau the prediction is a true positive iff iou >= tau.  AP is the
mean over 101 recall points r in {0.00, 0.01, ..., 1.00} of the maximum
precision achieved at recall >= r.  mAP averages AP over
tau in {0.50, 0.55, ..., 0.95}.

Run:  python3 ap_reference.py            # prints frozen fixture values
"""

from fractions import Fraction


THRESHOLDS = [Fraction(50 + 5 * i, 100) for i in range(10)]


def ap_101(conf_iou, tau):
    n_gt = len(conf_iou)
    # stable sort: confidence descending, original index ascending
    order = sorted(range(n_gt), key=lambda i: (-conf_iou[i][0], i))
    tp, fp = 0, 0
    prec_at_rank = []
    rec_at_rank = []
    for i in order:
        if Fraction(conf_iou[i][1]) >= tau:
            tp += 1
        else:
            fp += 1
        prec_at_rank.append(Fraction(tp, tp + fp))
        rec_at_rank.append(Fraction(tp, n_gt))
    total = Fraction(0)
    for k in range(101):
        r = Fraction(k, 100)
        best = Fraction(0)
        for p, rr in zip(prec_at_rank, rec_at_rank):
            if rr >= r and p > best:
                best = p
        total += best
    return total / 101


def map_5095(conf_iou):
    return sum(ap_101(conf_iou, t) for t in THRESHOLDS) / len(THRESHOLDS)


def main():
    # Fixture A: the two-sample case (confidences 0.9 / 0.8, IoUs 1.0 / 0.0).
    fix_a = [(Fraction(9, 10), Fraction(1)), (Fraction(8, 10), Fraction(0))]
    map_a = map_5095(fix_a)
    print("fixture_a mAP =", map_a, "=", float(map_a))

    # Fixture B: 20 samples, deterministic LCG-generated, frozen here.
    # conf in (0,1), iou in [0,1] quantized to 1/64 steps.
    state = 12345
    def lcg():
        nonlocal state
        state = (state * 6364136223846793005 + 1442695040888963407) % (1 << 64)
        return state >> 33
    fix_b = []
    raw = []
    for _ in range(20):
        cn = lcg() % 1000 + 1
        im = lcg() % 65
        raw.append((cn, im))
        fix_b.append((Fraction(cn, 1001), Fraction(im, 64)))
    print("fixture_b entries:")
    for cn, im in raw:
        print("  conf=%d/1001 iou=%d/64" % (cn, im))
    for t in THRESHOLDS:
        print("  AP(%.2f) = %.17g" % (float(t), float(ap_101(fix_b, t))))
    map_b = map_5095(fix_b)
    print("fixture_b mAP =", map_b, "=", "%.17g" % float(map_b))

    # Fixture C: all perfect predictions regardless of confidence.
    fix_c = [(Fraction(k + 1, 30), Fraction(1)) for k in range(20)]
    print("fixture_c mAP =", float(map_5095(fix_c)))


if __name__ == "__main__":
    main()
