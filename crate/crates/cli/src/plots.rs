//! Generated matplotlib scripts. The core stays plot-free; these scripts
//! render the CSVs a command just wrote.

/// Density/velocity surfaces plus the control signal for one run.
pub fn simulate_script() -> String {
    r#"#!/usr/bin/env python3
"""Render states.csv / control.csv / norms.csv from a simulate run."""
import csv
import math
from collections import defaultdict

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return rows


states = read_csv("states.csv")
times = sorted({float(r["t"]) for r in states})
xs = sorted({float(r["x"]) for r in states})
rho = np.zeros((len(times), len(xs)))
vel = np.zeros((len(times), len(xs)))
t_index = {t: i for i, t in enumerate(times)}
x_index = {x: j for j, x in enumerate(xs)}
for r in states:
    i, j = t_index[float(r["t"])], x_index[float(r["x"])]
    rho[i, j] = float(r["rho"]) * 1000.0  # veh/km
    vel[i, j] = float(r["v"])

fig, axes = plt.subplots(2, 2, figsize=(12, 8))
for ax, field, label in [
    (axes[0][0], rho, "density [veh/km]"),
    (axes[0][1], vel, "velocity [m/s]"),
]:
    im = ax.pcolormesh(xs, times, field, shading="auto", cmap="viridis")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("t [s]")
    ax.set_title(label)
    fig.colorbar(im, ax=ax)

control = read_csv("control.csv")
axes[1][0].plot([float(r["t"]) for r in control], [float(r["u"]) for r in control])
axes[1][0].set_xlabel("t [s]")
axes[1][0].set_ylabel("U(t) [m/s]")
axes[1][0].set_title("boundary control")

norms = read_csv("norms.csv")
ts = [float(r["t"]) for r in norms]
combined = [math.hypot(float(r["l2_w"]), float(r["l2_v"])) for r in norms]
axes[1][1].semilogy(ts, combined)
axes[1][1].set_xlabel("t [s]")
axes[1][1].set_ylabel("||(w, v)||_L2")
axes[1][1].set_title("state norm")

fig.tight_layout()
fig.savefig("simulate.png", dpi=150)
print("wrote simulate.png")
"#
    .to_string()
}

/// Overlay plots of U(t) and the state norms for the four controllers.
pub fn compare_script() -> String {
    r#"#!/usr/bin/env python3
"""Render control_overlay.csv / norms_overlay.csv from a compare run."""
import csv

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

METHODS = ["backstepping", "no_kernels", "no_law", "pi"]


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


fig, (ax_u, ax_n) = plt.subplots(1, 2, figsize=(12, 4.5))

control = read_csv("control_overlay.csv")
ts = [float(r["t"]) for r in control]
for m in METHODS:
    ax_u.plot(ts, [float(r[m]) for r in control], label=m)
ax_u.set_xlabel("t [s]")
ax_u.set_ylabel("U(t) [m/s]")
ax_u.set_title("control input")
ax_u.legend()

norms = read_csv("norms_overlay.csv")
ts = [float(r["t"]) for r in norms]
for m in METHODS:
    ax_n.semilogy(ts, [float(r[m]) for r in norms], label=m)
ax_n.set_xlabel("t [s]")
ax_n.set_ylabel("||(w, v)||_L2")
ax_n.set_title("state norms")
ax_n.legend()

fig.tight_layout()
fig.savefig("compare.png", dpi=150)
print("wrote compare.png")
"#
    .to_string()
}
