"""Delimited report tables and the figures rendered next to them.

Every figure has a TSV/CSV sibling carrying the same numbers, so plots can
always be regenerated by other tooling.  Rendering uses the Agg backend and
writes PNG files without volatile metadata.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from .evaluate import StudyReport

_PNG_META = {"Software": None}


def write_fdr_power_table(study: StudyReport, path) -> pd.DataFrame:
    """Write the alpha-grid sweep of empirical FDR and power as TSV."""
    rows = study.grid_summary()
    if rows is None:
        raise ValueError("study carries no alpha grid")
    frame = pd.DataFrame(rows)
    frame.to_csv(path, sep="\t", index=False)
    return frame


def render_fdr_power_figure(study: StudyReport, path) -> None:
    """Empirical FDR and power against the target level, with 2-se bands."""
    rows = study.grid_summary()
    if rows is None:
        raise ValueError("study carries no alpha grid")
    frame = pd.DataFrame(rows)
    fig, (ax_fdr, ax_pow) = plt.subplots(1, 2, figsize=(9, 3.6))
    ax_fdr.plot(frame["alpha"], frame["fdr"], marker="o", ms=3, label="empirical FDR")
    ax_fdr.fill_between(frame["alpha"], frame["fdr"] - 2 * frame["fdr_se"],
                        frame["fdr"] + 2 * frame["fdr_se"], alpha=0.25)
    ax_fdr.plot(frame["alpha"], frame["alpha"], ls="--", c="gray", label="target")
    ax_fdr.set_xlabel("target level")
    ax_fdr.set_ylabel("empirical FDR")
    ax_fdr.legend(frameon=False, fontsize=8)
    ax_pow.plot(frame["alpha"], frame["power"], marker="o", ms=3, c="tab:green")
    ax_pow.fill_between(frame["alpha"], frame["power"] - 2 * frame["power_se"],
                        frame["power"] + 2 * frame["power_se"],
                        alpha=0.25, color="tab:green")
    ax_pow.set_xlabel("target level")
    ax_pow.set_ylabel("empirical power")
    fig.suptitle(f"{study.scenario.kind}, tau={study.scenario.tau:g}, "
                 f"n={study.scenario.n}, m={study.scenario.m}, "
                 f"reps={len(study.adaptive)}", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata=_PNG_META)
    plt.close(fig)


def render_analysis_figure(table: pd.DataFrame, cutoff: float, path) -> None:
    """Diagnostics for one analysis: (a, b) scatter and the score histogram."""
    fig, (ax_sc, ax_hist) = plt.subplots(1, 2, figsize=(9, 3.6))
    rej = table["rejected"].astype(bool).to_numpy()
    ok = np.isfinite(table["lfdr"].to_numpy())
    ax_sc.scatter(table.loc[ok & ~rej, "a"], table.loc[ok & ~rej, "b"],
                  s=6, c="lightgray", label="kept")
    ax_sc.scatter(table.loc[rej, "a"], table.loc[rej, "b"],
                  s=8, c="tab:red", label="rejected")
    ax_sc.set_xlabel("scaled exposure-mediator estimate")
    ax_sc.set_ylabel("scaled mediator-outcome estimate")
    ax_sc.legend(frameon=False, fontsize=8)
    ax_hist.hist(table.loc[ok, "lfdr"], bins=40, color="tab:blue", alpha=0.8)
    if cutoff > 0:
        ax_hist.axvline(cutoff, c="tab:red", ls="--", label=f"cutoff={cutoff:.3g}")
        ax_hist.legend(frameon=False, fontsize=8)
    ax_hist.set_xlabel("local FDR")
    ax_hist.set_ylabel("count")
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata=_PNG_META)
    plt.close(fig)
