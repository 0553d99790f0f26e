#!/usr/bin/env python3
"""Sobolev quotients of tip-concentrated functions on the planar cusp.

A profile concentrated at scale r near the tip has ||f||_q / ||f||_{W^{1,2}}
of order r^(3/q - 1/2), so one mesh halving can raise the discrete quotient
by at most about 2^(1/2 - 3/q).  Prints the quotient of (1 - x/r)_+ for
r a multiple of the tip cell, together with the ascent estimate.
"""
import argparse

import numpy as np

from neumann_spectra.discrete_operator import assemble, sobolev_norm
from neumann_spectra.geometry import CuspDomain, rasterize
from neumann_spectra.inequalities import estimate_sobolev_constant


def lq(f, mass, q):
    return float(np.sum(mass * np.abs(f) ** q) ** (1 / q))


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--q", type=float, default=8.0)
    p.add_argument("--hs", type=float, nargs="+", default=[1 / 32, 1 / 64, 1 / 128, 1 / 256])
    args = p.parse_args()
    dom = CuspDomain(2, 0.5)
    print(f"per-halving growth ceiling 2^(1/2 - 3/q) = {2 ** (0.5 - 3 / args.q):.4f}")
    print("h,tip_x,r=2tip,r=4tip,r=8tip,ascent")
    for h in args.hs:
        op = assemble(rasterize(dom, h))
        x = op.cell_centers()[:, 0]
        vals = []
        for k in (2, 4, 8):
            f = np.maximum(0.0, 1 - x / (k * x.min()))
            vals.append(lq(f, op.mass, args.q) / sobolev_norm(op, f))
        est = estimate_sobolev_constant(op, args.q, domain=dom).value if op.n <= 20_000 else float("nan")
        print(f"{h:g},{x.min():.4g}," + ",".join(f"{v:.4f}" for v in vals) + f",{est:.4f}")


if __name__ == "__main__":
    main()
