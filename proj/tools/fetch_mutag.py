#!/usr/bin/env python3
"""Fetch the MUTAG benchmark and materialize it in TU plain-text format.

Tries the canonical TU archive first, then falls back to the copy bundled
with the GIN reference implementation (adjacency-list format) and converts
it. Either way the output is the standard 188-graph dataset written as

    MUTAG_A.txt               "u, v" directed edge lines, 1-based
    MUTAG_graph_indicator.txt graph id per node, 1-based
    MUTAG_graph_labels.txt    one label per graph (1 / -1)
    MUTAG_node_labels.txt     atom-type label per node (0..6)

Usage: fetch_mutag.py [output_dir]   (default: data/MUTAG)
"""

import io
import sys
import urllib.request
import zipfile
from pathlib import Path

TU_URL = "https://www.chrsmrrs.com/graphkerneldatasets/MUTAG.zip"
GIN_URL = (
    "https://github.com/weihua916/powerful-gnns/raw/master/dataset.zip"
)

EXPECTED = dict(graphs=188, nodes=3371, directed_edges=7442, node_label_kinds=7)


def fetch(url: str) -> bytes:
    print(f"fetching {url}")
    with urllib.request.urlopen(url, timeout=120) as r:
        return r.read()


def write_tu(out_dir: Path, graphs):
    """graphs: list of (node_tags, neighbor_lists, graph_label)."""
    out_dir.mkdir(parents=True, exist_ok=True)
    a, ind, nl, gl = [], [], [], []
    offset = 0
    for gid, (tags, nbrs, label) in enumerate(graphs, start=1):
        for v, tag in enumerate(tags):
            ind.append(str(gid))
            nl.append(str(tag))
            for w in nbrs[v]:
                a.append(f"{offset + v + 1}, {offset + w + 1}")
        gl.append(str(label))
        offset += len(tags)
    (out_dir / "MUTAG_A.txt").write_text("\n".join(a) + "\n")
    (out_dir / "MUTAG_graph_indicator.txt").write_text("\n".join(ind) + "\n")
    (out_dir / "MUTAG_graph_labels.txt").write_text("\n".join(gl) + "\n")
    (out_dir / "MUTAG_node_labels.txt").write_text("\n".join(nl) + "\n")


def parse_gin(text: str):
    lines = text.split("\n")
    n_graphs = int(lines[0])
    idx = 1
    graphs = []
    for _ in range(n_graphs):
        n, label = map(int, lines[idx].split())
        idx += 1
        tags, nbrs = [], []
        for _ in range(n):
            parts = list(map(int, lines[idx].split()))
            idx += 1
            tags.append(parts[0])
            nbrs.append(parts[2 : 2 + parts[1]])
        # GIN stores labels {0, 2}; canonical TU labels are {-1, 1} with the
        # mutagenic majority class mapped to 1.
        graphs.append((tags, nbrs, 1 if label == 2 else -1))
    return graphs


def validate(out_dir: Path):
    ind = (out_dir / "MUTAG_graph_indicator.txt").read_text().split()
    nl = (out_dir / "MUTAG_node_labels.txt").read_text().split()
    gl = (out_dir / "MUTAG_graph_labels.txt").read_text().split()
    a = [l for l in (out_dir / "MUTAG_A.txt").read_text().splitlines() if l.strip()]
    got = dict(
        graphs=len(gl),
        nodes=len(ind),
        directed_edges=len(a),
        node_label_kinds=len(set(nl)),
    )
    if got != EXPECTED:
        raise SystemExit(f"validation failed: {got} != {EXPECTED}")
    print(f"ok: {got}")


def main():
    out_dir = Path(sys.argv[1] if len(sys.argv) > 1 else "data/MUTAG")
    try:
        blob = fetch(TU_URL)
        with zipfile.ZipFile(io.BytesIO(blob)) as z:
            for name in z.namelist():
                base = Path(name).name
                if base.startswith("MUTAG_") and base.endswith(".txt"):
                    out_dir.mkdir(parents=True, exist_ok=True)
                    (out_dir / base).write_bytes(z.read(name))
    except Exception as e:
        print(f"canonical source unavailable ({e}); trying fallback mirror")
        blob = fetch(GIN_URL)
        with zipfile.ZipFile(io.BytesIO(blob)) as z:
            text = z.read("dataset/MUTAG/MUTAG.txt").decode()
        write_tu(out_dir, parse_gin(text))
    validate(out_dir)


if __name__ == "__main__":
    main()
