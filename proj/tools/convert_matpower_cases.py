#!/usr/bin/env python3
"""Write IEEE Common Data Format files for the standard IEEE test cases.

The bus and branch tables are taken from the MATPOWER case data shipped with
the `pypower` package (`pip install pypower`), which MATPOWER itself converted
from the original IEEE CDF distribution. Only the columns the DC model needs are
meaningful; the remaining CDF columns are written as zeros.

The MATPOWER `case30` table carries flat (all-zero) voltage angles. For that
case the angles are replaced by a DC power-flow solution so that line flows are
non-trivial; the title card records this.

Usage: convert_matpower_cases.py OUTPUT_DIR
"""

import math
import os
import sys

import numpy as np
from pypower.case14 import case14
from pypower.case30 import case30
from pypower.case57 import case57
from pypower.case118 import case118
from pypower.case300 import case300


def dc_angles(ppc):
    bus = ppc["bus"]
    branch = ppc["branch"]
    base = ppc["baseMVA"]
    index = {int(b): k for k, b in enumerate(bus[:, 0])}
    n = len(index)
    B = np.zeros((n, n))
    for row in branch:
        i, j = index[int(row[0])], index[int(row[1])]
        b = 1.0 / row[3]
        B[i, i] += b
        B[j, j] += b
        B[i, j] -= b
        B[j, i] -= b
    p = -bus[:, 2].copy()
    for g in ppc["gen"]:
        p[index[int(g[0])]] += g[1]
    p /= base
    slack = [k for k in range(n) if int(bus[k, 1]) == 3][0]
    keep = [k for k in range(n) if k != slack]
    theta = np.zeros(n)
    theta[keep] = np.linalg.solve(B[np.ix_(keep, keep)], p[keep])
    return np.degrees(theta)


def fmt_bus(number, name, btype, vm, va, pd, qd, pg, qg, base_kv, gs, bs):
    return (
        f"{number:4d} {name:<12s} {1:2d}{1:3d} {btype:2d} "
        f"{vm:6.3f}{va:7.2f}{pd:9.2f}{qd:9.2f}{pg:9.2f}{qg:8.2f} "
        f"{base_kv:7.2f} {0.0:6.3f}{0.0:7.2f} {0.0:7.2f} {gs:8.4f}{bs:8.4f} {0:4d}"
    )


def fmt_branch(tap_bus, z_bus, circuit, btype, r, x, b, ratio, shift):
    return (
        f"{tap_bus:4d} {z_bus:4d} {1:2d}{1:2d}  {circuit:1d} {btype:1d}"
        f"{r:10.5f}{x:11.5f}{b:10.5f}{0:5d} {0:5d} {0:5d} {0:4d} {0:1d}  "
        f"{ratio:6.4f} {shift:6.2f}"
    )


def write_case(path, title, ppc, angles_deg):
    bus = ppc["bus"]
    gen_p = {}
    gen_q = {}
    for g in ppc["gen"]:
        gen_p[int(g[0])] = gen_p.get(int(g[0]), 0.0) + g[1]
        gen_q[int(g[0])] = gen_q.get(int(g[0]), 0.0) + g[2]
    lines = []
    lines.append(f" 01/01/00 {'MATPOWER DATA':<20} {ppc['baseMVA']:6.1f} 2000 S {title}")
    lines.append(f"BUS DATA FOLLOWS                            {len(bus)} ITEMS")
    for k, row in enumerate(bus):
        number = int(row[0])
        lines.append(
            fmt_bus(number, f"Bus {number}", int(row[1]) if int(row[1]) != 4 else 1,
                    row[7], angles_deg[k], row[2], row[3],
                    gen_p.get(number, 0.0), gen_q.get(number, 0.0), row[9], row[4], row[5])
        )
    lines.append("-999")
    branch = ppc["branch"]
    lines.append(f"BRANCH DATA FOLLOWS                         {len(branch)} ITEMS")
    seen = {}
    for row in branch:
        f, t = int(row[0]), int(row[1])
        key = (min(f, t), max(f, t))
        seen[key] = seen.get(key, 0) + 1
        ratio = row[8]
        btype = 0 if ratio == 0 else 1
        lines.append(fmt_branch(f, t, seen[key], btype, row[2], row[3], row[4], ratio, row[9]))
    lines.append("-999")
    lines.append("LOSS ZONES FOLLOWS                     1 ITEMS")
    lines.append("  1 ZONE 1")
    lines.append("-99")
    lines.append("INTERCHANGE DATA FOLLOWS                 0 ITEMS")
    lines.append("-9")
    lines.append("TIE LINES FOLLOWS                     0 ITEMS")
    lines.append("-999")
    lines.append("END OF DATA")
    with open(path, "w") as out:
        out.write("\n".join(lines) + "\n")


def main():
    outdir = sys.argv[1] if len(sys.argv) > 1 else "."
    cases = [
        ("ieee14", case14, "IEEE 14 Bus Test Case", False),
        ("ieee30", case30, "IEEE 30 Bus (DC-solved angles)", True),
        ("ieee57", case57, "IEEE 57 Bus Test Case", False),
        ("ieee118", case118, "IEEE 118 Bus Test Case", False),
        ("ieee300", case300, "IEEE 300 Bus Test Case", False),
    ]
    for name, fn, title, solve in cases:
        ppc = fn()
        angles = dc_angles(ppc) if solve else ppc["bus"][:, 8]
        if not solve and np.all(angles == 0):
            raise SystemExit(f"{name}: flat angles")
        write_case(os.path.join(outdir, name + ".cdf"), title, ppc, angles)


if __name__ == "__main__":
    main()
