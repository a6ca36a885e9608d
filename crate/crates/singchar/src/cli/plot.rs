//! Matplotlib scripts written next to the CSVs they read.

const HEAD: &str = r#"import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))


def rows(name):
    with open(os.path.join(HERE, name), newline="") as f:
        return list(csv.DictReader(f))


def col(rs, key):
    return [float(r[key]) for r in rs]

"#;

pub fn characteristic(dim: usize) -> String {
    let mut s = HEAD.to_string();
    s.push_str("rs = rows(\"characteristic.csv\")\nt = col(rs, \"t\")\n");
    s.push_str("fig, ax = plt.subplots(2, 1, sharex=True, figsize=(7, 6))\n");
    for a in 0..dim {
        s.push_str(&format!("ax[0].plot(t, col(rs, \"x_{a}\"), label=\"x_{a}\")\n"));
    }
    s.push_str(
        "ax[0].set_ylabel(\"position\")\nax[0].legend()\nax[1].plot(t, col(rs, \"h_value\"))\n\
         ax[1].set_ylabel(\"H(x, p#)\")\nax[1].set_xlabel(\"t\")\nfig.tight_layout()\n\
         fig.savefig(os.path.join(HERE, \"characteristic.png\"), dpi=150)\n",
    );
    s
}

pub fn weak_kam(dim: usize) -> String {
    let mut s = HEAD.to_string();
    s.push_str("rs = rows(\"u.csv\")\n");
    if dim == 1 {
        s.push_str(
            "n = len(rs)\nx = [int(r[\"index_0\"]) / n for r in rs]\nfig, ax = plt.subplots(figsize=(7, 4))\n\
             ax.plot(x, col(rs, \"value\"))\nax.set_xlabel(\"x\")\nax.set_ylabel(\"u\")\n",
        );
    } else {
        s.push_str(
            "n0 = max(int(r[\"index_0\"]) for r in rs) + 1\nn1 = max(int(r[\"index_1\"]) for r in rs) + 1\n\
             grid = [[0.0] * n1 for _ in range(n0)]\nfor r in rs:\n    grid[int(r[\"index_0\"])][int(r[\"index_1\"])] = float(r[\"value\"])\n\
             fig, ax = plt.subplots(figsize=(6, 5))\nim = ax.imshow(grid, origin=\"lower\", extent=(0, 1, 0, 1))\nfig.colorbar(im)\n",
        );
    }
    s.push_str("fig.tight_layout()\nfig.savefig(os.path.join(HERE, \"u.png\"), dpi=150)\n");
    s
}

pub fn transport(dim: usize) -> String {
    let mut s = HEAD.to_string();
    s.push_str(
        "cloud = rows(\"cloud.csv\")\ntimes = sorted({float(r[\"t\"]) for r in cloud})\n\
         fig, ax = plt.subplots(1, 2, figsize=(11, 4))\n",
    );
    if dim == 1 {
        s.push_str(
            "for t in times[:: max(1, len(times) // 4)]:\n    xs = [float(r[\"x_0\"]) for r in cloud if float(r[\"t\"]) == t]\n\
             \x20   ax[0].hist(xs, bins=100, histtype=\"step\", label=f\"t={t:g}\")\nax[0].legend()\nax[0].set_xlabel(\"x\")\n",
        );
    } else {
        s.push_str(
            "last = [r for r in cloud if float(r[\"t\"]) == times[-1]]\n\
             ax[0].scatter(col(last, \"x_0\"), col(last, \"x_1\"), s=1)\nax[0].set_aspect(\"equal\")\n",
        );
    }
    s.push_str(
        "mass = rows(\"mass.csv\")\nfor d in sorted({r[\"delta\"] for r in mass}):\n\
         \x20   sel = [r for r in mass if r[\"delta\"] == d]\n    ax[1].plot(col(sel, \"t\"), col(sel, \"mass\"), marker=\"o\", label=f\"delta={d}\")\n\
         ax[1].set_xlabel(\"t\")\nax[1].set_ylabel(\"mass near the region\")\nax[1].legend()\nfig.tight_layout()\n\
         fig.savefig(os.path.join(HERE, \"transport.png\"), dpi=150)\n",
    );
    s
}

pub fn verify() -> String {
    let mut s = HEAD.to_string();
    s.push_str(
        "import json\n\nwith open(os.path.join(HERE, \"run.json\")) as f:\n    checks = json.load(f)[\"results\"][\"checks\"]\n\
         labels = [c[\"fixture\"] + \":\" + c[\"name\"] for c in checks]\n\
         ratio = [abs(c[\"value\"]) / c[\"bound\"] if c[\"bound\"] else 0.0 for c in checks]\n\
         fig, ax = plt.subplots(figsize=(7, max(3, len(checks) * 0.25)))\nax.barh(labels, ratio)\n\
         ax.axvline(1.0, color=\"k\")\nax.set_xscale(\"symlog\", linthresh=1e-6)\nax.set_xlabel(\"|value| / bound\")\n\
         fig.tight_layout()\nfig.savefig(os.path.join(HERE, \"verify.png\"), dpi=150)\n",
    );
    s
}
