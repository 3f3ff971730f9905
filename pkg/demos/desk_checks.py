"""Print lhs/rhs ratios of the planar and 3D incidence bounds on generated families.

Run with ``python3 demos/desk_checks.py``.  A ratio above 1 means the bound holds.
"""

from flab.incidence import (
    check_bush_nd,
    check_hairbrush_3d,
    check_two_ends_furstenberg_2d,
    gen_bush,
    gen_hairbrush,
    gen_random_two_ends,
)


def main():
    print(f"{'check':<26}{'generator':<22}{'k':>3}{'lam_exp':>9}{'lines':>7}{'ratio':>10}")
    for k in (6, 7):
        d = 2.0**-k
        for gen in (gen_bush, gen_hairbrush, gen_random_two_ends):
            for lam_exp in (0.25, 0.5):
                F = gen(2, 24, d**lam_exp, k, seed=k)
                r = check_two_ends_furstenberg_2d(F)
                print(f"{r.name:<26}{gen.__name__:<22}{k:>3}{lam_exp:>9}{len(F):>7}{r.ratio:>10.2f}")
    k = 5
    d = 2.0**-k
    for gen in (gen_hairbrush, gen_random_two_ends):
        F = gen(3, 30, d**0.25, k, seed=1)
        for check in (check_hairbrush_3d, check_bush_nd):
            r = check(F)
            print(f"{r.name:<26}{gen.__name__:<22}{k:>3}{0.25:>9}{len(F):>7}{r.ratio:>10.2f}")


if __name__ == "__main__":
    main()
