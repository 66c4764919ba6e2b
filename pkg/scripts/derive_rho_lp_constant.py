"""Derive the sharp constant of the velocity-interpolation bound on rho.

For f(x, .) with 0 <= f <= F and int |v|^2 f dv = m, the largest possible
rho = int f dv is attained by a truncation f = F 1{|v| < R} (a level set of
|v|^2), the radius R being fixed by the energy constraint. By scaling,
rho_max = C_d F^{2/(d+2)} m^{d/(d+2)}, and integrating rho^{(d+2)/d} over x
gives the same constant for the L^{(d+2)/d} norm.

Two independent computations of C_d (F = m = 1):

1. optimization over the truncation radius: solve the energy constraint for R
   with a root finder and evaluate the mass of the truncated profile;
2. a linear program over radial shells that maximizes mass subject to the
   pointwise bound and the energy constraint, with no profile assumed.

Run: python scripts/derive_rho_lp_constant.py
"""
import math

import numpy as np
from scipy.optimize import brentq, linprog


def ball_volume(d):
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def sphere_area(d):
    return d * ball_volume(d)


def by_truncation(d):
    def energy(R):
        # int_{|v|<R} |v|^2 dv
        return sphere_area(d) * R ** (d + 2) / (d + 2) - 1.0

    R = brentq(energy, 1e-6, 100.0, xtol=1e-15, rtol=1e-15)
    return ball_volume(d) * R**d


def by_linear_program(d, shells=4000, vmax=4.0):
    edges = np.linspace(0.0, vmax, shells + 1)
    vol = sphere_area(d) * (edges[1:] ** d - edges[:-1] ** d) / d
    second = sphere_area(d) * (edges[1:] ** (d + 2) - edges[:-1] ** (d + 2)) / (d + 2)
    res = linprog(-vol, A_eq=second[None, :], b_eq=[1.0], bounds=[(0.0, 1.0)] * shells,
                  method="highs")
    return -res.fun


if __name__ == "__main__":
    for d in (1, 2, 3):
        closed = ball_volume(d) ** (2 / (d + 2)) * ((d + 2) / d) ** (d / (d + 2))
        print(f"d={d}  truncation={by_truncation(d)!r}  lp={by_linear_program(d):.10f}  "
              f"closed={closed!r}")
