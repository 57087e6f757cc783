"""Report figures for the command-line tools.

Everything renders through the Agg backend to PNG files so headless runs
work and output bytes are reproducible (no timestamps, no Software tag).
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_DPI = 110
_FLOOR = 1e-18  # log-scale plots cannot take exact zeros


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI, format="png", metadata={"Software": None})
    plt.close(fig)


def solve_figure(path, initial_xy, final_xy, chi2_trace):
    """Trajectory before/after optimization plus the chi2 descent trace."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    initial_xy = np.asarray(initial_xy)
    final_xy = np.asarray(final_xy)
    ax1.plot(initial_xy[:, 0], initial_xy[:, 1], "o--", color="0.6",
             label="initial", markersize=3)
    ax1.plot(final_xy[:, 0], final_xy[:, 1], "o-", color="tab:blue",
             label="optimized", markersize=3)
    ax1.set_xlabel("x [m]")
    ax1.set_ylabel("y [m]")
    ax1.set_aspect("equal", adjustable="datalim")
    ax1.legend()
    ax2.plot(np.maximum(chi2_trace, _FLOOR), "o-", markersize=3)
    ax2.set_yscale("log")
    ax2.set_xlabel("accepted step")
    ax2.set_ylabel("chi2")
    _save(fig, path)


def pipeline_figure(path, stage_names, stage_chi2, stage_oc, refine_costs):
    """Per-stage chi2/OC bars plus the stage-3 refinement cost trace."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    x = np.arange(len(stage_names))
    ax1.plot(x, np.maximum(stage_chi2, _FLOOR), "o-", label="chi2")
    ax1.plot(x, np.maximum(stage_oc, _FLOOR), "s--", label="OC_log")
    ax1.set_yscale("log")
    ax1.set_xticks(x)
    ax1.set_xticklabels(stage_names, rotation=30, ha="right", fontsize=8)
    ax1.legend()
    ax2.plot(refine_costs, "-", color="tab:green")
    ax2.set_xlabel("refine step")
    ax2.set_ylabel("orientation cost")
    _save(fig, path)


def refine_figure(path, costs):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(costs, "-", color="tab:green")
    ax.set_xlabel("step")
    ax.set_ylabel("orientation cost")
    _save(fig, path)


def eval_figure(path, ate_errors, pair_table):
    """Per-frame absolute error and per-pair relative errors."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    ax1.plot(ate_errors, "-", color="tab:blue")
    ax1.set_xlabel("frame")
    ax1.set_ylabel("position error [m]")
    pair_table = np.asarray(pair_table)
    ax2.plot(pair_table[:, 0], "-", color="tab:orange", label="trans [m]")
    ax2.plot(pair_table[:, 1], "--", color="tab:red", label="rot [deg]")
    ax2.set_xlabel("pair")
    ax2.legend()
    _save(fig, path)


def training_figure(path, trace):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(trace, "o-", markersize=3)
    ax.set_xlabel("iteration")
    ax.set_ylabel("mean return")
    _save(fig, path)
