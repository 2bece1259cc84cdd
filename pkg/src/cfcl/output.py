"""CSV logs and minimal SVG line charts for finished runs."""
import csv
import os

import numpy as np

EVAL_COLUMNS = ["gamma", "t", "accuracy", "label_variance_mean", "cumulative_delay_s"]


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write(path, header, rows):
    """``path`` may also be an open text stream."""
    if hasattr(path, "write"):
        _write_rows(path, header, rows)
        return
    with open(path, "w", newline="") as f:
        _write_rows(f, header, rows)


def _write_rows(f, header, rows):
    w = csv.writer(f, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])


def write_run_log(history, path):
    _write(path, ["t", "device", "loss"], history.loss_log)


def write_eval_log(history, path):
    _write(path, EVAL_COLUMNS, ([r[c] for c in EVAL_COLUMNS] for r in history.eval_log))


def write_exchange_log(history, path):
    """One row per candidate of every pull: (t, i, j, candidate_id, probability, chosen)."""
    def rows():
        for r in history.pull_log:
            if "candidate_ids" not in r:
                continue
            chosen = np.zeros(len(r["candidate_ids"]), dtype=int)
            chosen[r["chosen"]] = 1
            for cid, p, c in zip(r["candidate_ids"], r["probabilities"], chosen):
                yield r["t"], r["i"], r["j"], int(cid), float(p), int(c)
    _write(path, ["t", "i", "j", "candidate_id", "probability", "chosen"], rows())


def write_pull_log(history, path, n_clusters=None):
    """One row per pull event with per-cluster macro probabilities and the
    entropy of the composed distribution."""
    k = n_clusters or max((len(r["macro"]) for r in history.pull_log), default=0)
    header = ["t", "i", "j", "n"] + [f"macro_{c}" for c in range(k)] + ["entropy"]

    def rows():
        for r in history.pull_log:
            macro = list(r["macro"]) + [None] * (k - len(r["macro"]))
            yield [r["t"], r["i"], r["j"], r["n"]] + macro + [r["entropy"]]
    _write(path, header, rows())


def write_aggregation_log(history, path):
    _write(path, ["gamma", "t", "global_loss"], ((g, t, loss) for g, t, loss, _ in history.aggregation_log))


def write_timing(history, path):
    """Wall-clock cost of exchange computation; kept apart so other logs stay deterministic."""
    _write(path, ["exchange_events", "compute_seconds"], [(history.exchange_events, history.compute_seconds)])


def write_embeddings(path, embeddings, labels):
    E = np.asarray(embeddings)
    header = [f"e{k}" for k in range(E.shape[1])] + ["label"]
    _write(path, header, (list(map(float, e)) + [int(y)] for e, y in zip(E, labels)))


def write_run(history, out_dir, topology=None):
    os.makedirs(out_dir, exist_ok=True)
    write_run_log(history, os.path.join(out_dir, "run_log.csv"))
    write_eval_log(history, os.path.join(out_dir, "eval_log.csv"))
    write_exchange_log(history, os.path.join(out_dir, "exchange_log.csv"))
    write_pull_log(history, os.path.join(out_dir, "pull_log.csv"))
    write_aggregation_log(history, os.path.join(out_dir, "aggregations.csv"))
    write_timing(history, os.path.join(out_dir, "timing.csv"))
    if topology is not None:
        topology.write_edges_csv(os.path.join(out_dir, "edges.csv"))


def read_eval_log(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return [{k: (float(v) if v != "" else None) for k, v in r.items()} for r in rows]


def svg_line_chart(series, xlabel, ylabel, width=480, height=320):
    """``series`` maps a name to (xs, ys). Returns SVG markup."""
    colors = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e"]
    pad = 48
    pts = [(np.asarray(x, float), np.asarray(y, float)) for x, y in series.values()]
    allx = np.concatenate([p[0] for p in pts]) if pts else np.array([0.0, 1.0])
    ally = np.concatenate([p[1] for p in pts]) if pts else np.array([0.0, 1.0])
    x0, x1 = float(allx.min()), float(allx.max()) or 1.0
    y0, y1 = float(ally.min()), float(ally.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0

    def sx(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def sy(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
           f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
           f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle" font-size="12">{xlabel}</text>',
           f'<text x="14" y="{height / 2}" text-anchor="middle" font-size="12" '
           f'transform="rotate(-90 14 {height / 2})">{ylabel}</text>',
           f'<text x="{pad}" y="{height - pad + 14}" font-size="10">{x0:g}</text>',
           f'<text x="{width - pad}" y="{height - pad + 14}" font-size="10" text-anchor="end">{x1:g}</text>',
           f'<text x="{pad - 4}" y="{height - pad}" font-size="10" text-anchor="end">{y0:.3g}</text>',
           f'<text x="{pad - 4}" y="{pad + 4}" font-size="10" text-anchor="end">{y1:.3g}</text>']
    for k, (name, (xs, ys)) in enumerate(series.items()):
        c = colors[k % len(colors)]
        path = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in zip(xs, ys))
        out.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{path}"/>')
        out.append(f'<text x="{width - pad + 4}" y="{pad + 14 * k}" font-size="10" fill="{c}">{name}</text>')
    out.append("</svg>")
    return "\n".join(out)


def write_charts(history, out_dir, name="run"):
    rows = [r for r in history.eval_log if r["accuracy"] is not None]
    t = [r["t"] for r in rows]
    acc = [r["accuracy"] for r in rows]
    delay = [r["cumulative_delay_s"] for r in rows]
    with open(os.path.join(out_dir, "accuracy_vs_iteration.svg"), "w") as f:
        f.write(svg_line_chart({name: (t, acc)}, "iteration", "probe accuracy"))
    with open(os.path.join(out_dir, "accuracy_vs_delay.svg"), "w") as f:
        f.write(svg_line_chart({name: (delay, acc)}, "delay (s)", "probe accuracy"))
