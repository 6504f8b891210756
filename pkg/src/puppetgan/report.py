"""Image mosaics and the model-comparison report."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .domains import to_bytes
from .metrics.evaluate import CSV_COLUMNS, read_csv
from .metrics.stats import spearman_r

PAD = 2


def grid_png(path, cells: np.ndarray, row_heads: Optional[np.ndarray] = None,
             col_heads: Optional[np.ndarray] = None) -> Path:
    """Write an 8-bit mosaic; ``cells`` is (rows, cols, H, W) in [-1, 1].

    With heads, the top row shows column inputs and the left column row
    inputs, leaving the corner blank.
    """
    from PIL import Image

    rows, cols, h, w = cells.shape
    r0 = 1 if col_heads is not None else 0
    c0 = 1 if row_heads is not None else 0
    canvas = np.full(((rows + r0) * (h + PAD) + PAD, (cols + c0) * (w + PAD) + PAD), 255, np.uint8)

    def put(r, c, img):
        y, x = PAD + r * (h + PAD), PAD + c * (w + PAD)
        canvas[y:y + h, x:x + w] = to_bytes(img)

    for j in range(cols):
        if col_heads is not None:
            put(0, j + c0, col_heads[j])
    for i in range(rows):
        if row_heads is not None:
            put(i + r0, 0, row_heads[i])
        for j in range(cols):
            put(i + r0, j + c0, cells[i, j])
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(canvas, mode="L").save(path)
    return Path(path)


def binned_trend(x: np.ndarray, y: np.ndarray, bins: int = 10) -> Dict[str, list]:
    """Median of y in equal-count bins of x, and the Spearman r of those medians."""
    ok = np.isfinite(x) & np.isfinite(y)
    x, y = x[ok], y[ok]
    order = np.argsort(x)
    chunks = np.array_split(order, bins)
    cx = [float(np.median(x[c])) for c in chunks if len(c)]
    cy = [float(np.median(y[c])) for c in chunks if len(c)]
    return {"x": cx, "y": cy, "spearman": spearman_r(cx, cy) if len(cx) >= 3 else float("nan")}


def comparison_table(rows: List[Dict[str, object]]) -> str:
    head = "| " + " | ".join(CSV_COLUMNS) + " |"
    sep = "|" + "---|" * len(CSV_COLUMNS)
    lines = [head, sep]
    for r in rows:
        vals = [r[c] if isinstance(r[c], str) else f"{r[c]:.3f}" for c in CSV_COLUMNS]
        lines.append("| " + " | ".join(vals) + " |")
    return "\n".join(lines)


def scatter_png(path, series: dict, aoi: str, title: str) -> dict:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    keep = series["keep"].astype(bool)
    syn, gen, real = (series[f"{s}_{aoi}"][keep] for s in ("syn", "gen", "real"))
    trend = binned_trend(syn, gen)
    fig, axes = plt.subplots(1, 2, figsize=(8, 4))
    axes[0].scatter(syn, gen, s=3, alpha=0.4)
    axes[0].plot(trend["x"], trend["y"], "r-o", ms=3)
    axes[0].set_xlabel(f"synthetic input {aoi}")
    axes[0].set_ylabel(f"output {aoi}")
    axes[1].hist([real, syn, gen], bins=40, histtype="step", label=["real", "synthetic", "output"])
    axes[1].set_xlabel(aoi)
    axes[1].legend()
    fig.suptitle(f"{title} (binned Spearman {trend['spearman']:.2f})")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return trend


def build_report(csv_paths: Sequence, out_dir) -> Dict[str, object]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows, trends = [], {}
    for p in csv_paths:
        p = Path(p)
        file_rows = read_csv(p)
        rows += file_rows
        for r in file_rows:
            series_path = Path(f"{p.with_suffix('')}-{r['model']}-{r['attribute']}-series.npz")
            if series_path.exists():
                with np.load(series_path) as z:
                    series = {k: z[k] for k in z.files}
                name = f"{p.stem}-{r['model']}-{r['attribute']}"
                trends[name] = scatter_png(out / f"{name}-scatter.png", series, r["attribute"], name)
    table = comparison_table(rows)
    (out / "report.md").write_text(table + "\n")
    summary = {"rows": rows, "trends": trends}
    (out / "report.json").write_text(json.dumps(summary, indent=2, default=float))
    return summary
