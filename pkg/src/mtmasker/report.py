"""Static HTML heat-map reports: per-word aspect shading plus metric tables.

Output is fully self-contained markup (inline CSS, no external resources).
Each word gets the color of its winning aspect with opacity equal to the
model's confidence; words won by the irrelevant dimension stay unshaded.
"""

from __future__ import annotations

import html
import warnings

import numpy as np

from .evaluation import aspect_switch_count, mask_to_labels
from .fileio import atomic_write_text

# red, blue, purple, green, then extras; extended deterministically past 8.
ASPECT_PALETTE = [
    (214, 39, 40),    # red
    (31, 119, 180),   # blue
    (148, 103, 189),  # purple
    (44, 160, 44),    # green
    (255, 127, 14),   # orange
    (23, 190, 207),   # teal
    (140, 86, 75),    # brown
    (227, 119, 194),  # magenta
]


def palette(n_aspects):
    """Fixed palette for up to 8 aspects; deterministic HSV extension beyond."""
    colors = list(ASPECT_PALETTE)
    if n_aspects > len(colors):
        warnings.warn(f"palette extended for {n_aspects} aspects")
        for i in range(len(colors), n_aspects):
            hue = (i * 0.618033988749895) % 1.0
            colors.append(tuple(int(255 * c) for c in _hsv_to_rgb(hue, 0.65, 0.85)))
    return colors[:n_aspects]


def _hsv_to_rgb(h, s, v):
    i = int(h * 6.0)
    f = h * 6.0 - i
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    return [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i % 6]


def _shade(color, confidence):
    alpha = float(np.clip(confidence, 0.0, 1.0))
    r, g, b = color
    return f"background-color: rgba({r},{g},{b},{alpha:.3f});"


def render_tokens(tokens, mask_probs, colors):
    """Span markup for one document; the winning aspect colors each word."""
    probs = np.asarray(mask_probs)
    winners = mask_to_labels(probs)
    parts = []
    for pos, token in enumerate(tokens[:probs.shape[0]]):
        w = int(winners[pos])
        text = html.escape(token)
        if w == 0:
            parts.append(f"<span class='tok'>{text}</span>")
        else:
            style = _shade(colors[w - 1], probs[pos, w])
            parts.append(f"<span class='tok' style='{style}' "
                         f"title='aspect {w - 1}: {probs[pos, w]:.3f}'>{text}</span>")
    return " ".join(parts)


def _legend(aspect_names, colors):
    items = "".join(
        f"<span class='tok' style='{_shade(c, 0.75)}'>{html.escape(name)}</span> "
        for name, c in zip(aspect_names, colors))
    return f"<p class='legend'>Aspect colors: {items}</p>"


def _metric_rows(metrics):
    rows = []
    for key in sorted(metrics):
        value = metrics[key]
        shown = f"{value:.4f}" if isinstance(value, float) else html.escape(str(value))
        rows.append(f"<tr><td>{html.escape(str(key))}</td><td>{shown}</td></tr>")
    return "\n".join(rows)

_STYLE = """
body { font-family: sans-serif; max-width: 72em; margin: 1em auto; color: #222; }
.tok { padding: 0 1px; border-radius: 2px; }
.doc { border: 1px solid #ccc; border-radius: 4px; padding: .6em; margin: .8em 0; }
.doc h3 { margin: 0 0 .4em 0; font-size: .95em; }
table { border-collapse: collapse; margin: .6em 0; }
td, th { border: 1px solid #bbb; padding: .2em .6em; text-align: left; }
.legend { margin: .4em 0; }
"""


def render_report(documents, masks, aspect_names, metrics=None, title="Rationale report"):
    """Build the full self-contained HTML page as a string.

    `masks` maps doc id -> (L, T+1) mask probabilities.  Metric tables are
    optional flat {name: value} dicts.
    """
    colors = palette(len(aspect_names))
    blocks = []
    for doc in documents:
        if doc.id not in masks:
            continue
        probs = masks[doc.id]
        switches = aspect_switch_count(mask_to_labels(probs))
        blocks.append(
            "<div class='doc'>"
            f"<h3>{html.escape(doc.id)} &mdash; aspect changes &#9733;: {switches}</h3>"
            f"<p>{render_tokens(doc.tokens, probs, colors)}</p>"
            "</div>")
    metric_table = ""
    if metrics:
        metric_table = (f"<h2>Metrics</h2><table><tr><th>metric</th><th>value</th></tr>"
                        f"{_metric_rows(metrics)}</table>")
    return (
        "<!DOCTYPE html>\n<html><head><meta charset='utf-8'>"
        f"<title>{html.escape(title)}</title>"
        f"<style>{_STYLE}</style></head><body>"
        f"<h1>{html.escape(title)}</h1>"
        f"{_legend(aspect_names, colors)}"
        f"{metric_table}"
        f"<h2>Documents</h2>{''.join(blocks)}"
        "</body></html>\n")


def write_report(path, documents, masks, aspect_names, metrics=None,
                 title="Rationale report"):
    atomic_write_text(path, render_report(documents, masks, aspect_names,
                                          metrics, title))
