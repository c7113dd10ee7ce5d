"""Grow the parametric instability and estimate its rate.

The transverse pump (amplitude sqrt(3), wavenumber 1/sqrt(2)) decays
into plasma waves; the second Fourier mode of the longitudinal field
climbs out of the sampling noise exponentially before saturating.
This is the reduced-scale version of the batch experiment; the full
run is the 64-cell, 4000-particle configuration in the README.

Writes a diagnostics CSV so the companion tool can draw the panels:

    postplot --csv demo_out/instability/diagnostics.csv \
             --out demo_out/instability --fit-window 10 18
"""

import numpy as np

from vlpic.cli import parse_config, run

config = parse_config("""
[grid]
cells = 32
[time]
dt = 0.02
t_end = 40
[particles]
np = 1000
[output]
modes = 1 2
""")

run(config, out_dir="demo_out/instability", quiet=True)

rows = np.genfromtxt("demo_out/instability/diagnostics.csv", delimiter=",", names=True)
t, amp = rows["time"], rows["e_x_m2"]
floor = np.median(amp[t <= 5.0])
print(f"mode-2 noise floor  {floor:.3e}")
print(f"mode-2 peak         {amp.max():.3e}  (x{amp.max() / floor:.0f})")

grow = (t >= 10.0) & (t <= 18.0) & (amp > 0)
slope = np.polyfit(t[grow], np.log(amp[grow]), 1)[0]
print(f"growth rate on [10, 18]: {slope:.3f} per unit time")
