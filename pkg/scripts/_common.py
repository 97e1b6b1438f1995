"""Shared helpers for the experiment scripts."""
from pathlib import Path


def save_plot(fig_fn, path: Path) -> None:
    """Render with matplotlib when it is installed; CSV output never depends on it."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print(f"matplotlib not installed, skipping {path.name}")
        return
    fig = fig_fn(plt)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    print(f"wrote {path}")
