"""Planar speed on the homogeneous cubic against (1 - 2a)/sqrt 2 for a few h."""
import math
import time

from curvedfronts.media import build_reaction
from curvedfronts.pde_solver import planar_speed

if __name__ == "__main__":
    for a in (0.1, 0.25, 0.4):
        reaction = build_reaction("homogeneous-cubic", threshold=a)
        exact = (1 - 2 * a) / math.sqrt(2)
        for h in (0.2, 0.1, 0.05):
            t0 = time.perf_counter()
            c, _ = planar_speed(reaction, length=80.0, width=4.0, h=h)
            print(f"a={a:.2f} h={h:.2f} c={c:.6f} exact={exact:.6f} "
                  f"rel={abs(c - exact) / exact:.2e} {time.perf_counter() - t0:.1f} s")
