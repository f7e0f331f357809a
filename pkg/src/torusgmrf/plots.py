"""SVG line charts for the CLI reports.

Output is byte-stable for identical inputs: the SVG hash salt is fixed and
the creation date is omitted from the metadata.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

plt.rcParams["svg.hashsalt"] = "torusgmrf"


def line_plot(path, x, series, xlabel="", ylabel="", title="", logx=False, logy=False, styles=None):
    """Write one SVG with a line per entry of ``series`` ({label: y-values})."""
    styles = styles or {}
    fig, ax = plt.subplots(figsize=(6, 4))
    try:
        for label, y in series.items():
            ax.plot(x, y, styles.get(label, "-o"), label=label, markersize=3)
        if logx:
            ax.set_xscale("log")
        if logy:
            ax.set_yscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        if len(series) > 1:
            ax.legend()
        ax.grid(alpha=0.3)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)
    return path
