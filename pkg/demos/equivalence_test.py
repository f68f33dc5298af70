"""Can judges tell simulated traces from real ones?

Given a confusion table from a discrimination study (judges label each trace
as simulated or real), compute sensitivity d', response bias c, and a two
one-sided test for equivalence of d' to zero within a margin.

    python demos/equivalence_test.py [hits misses false_alarms correct_rejections]
"""

import sys

from novicesim.metrics import ConfusionCounts, d_prime_se, sdt_analysis, tost_equivalence


def main(counts: ConfusionCounts, margin: float = 0.3) -> None:
    res = sdt_analysis(counts)
    se = d_prime_se(counts)
    tost = tost_equivalence(res.d_prime, se, margin)
    print(f"hit rate {res.hit_rate:.3f}, false-alarm rate {res.fa_rate:.3f}")
    print(f"d' = {res.d_prime:.3f} (SE {se:.3f}), c = {res.criterion:.3f}")
    print(f"TOST within +/-{margin}: z_lower {tost.z_lower:.2f}, z_upper {tost.z_upper:.2f}, p = {tost.p_tost:.4f}")
    verdict = "equivalent to chance" if tost.p_tost < 0.05 else "equivalence not shown"
    print(f"judges' discrimination is {verdict} at alpha 0.05")


if __name__ == "__main__":
    args = [int(a) for a in sys.argv[1:5]] or [265, 161, 241, 185]
    main(ConfusionCounts(*args))
