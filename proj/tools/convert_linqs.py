#!/usr/bin/env python3
"""Convert a LINQS-style citation dataset (<name>.content + <name>.cites) into
the graph bundle directory layout read by the igcn toolkit.

    python3 tools/convert_linqs.py /path/to/cora cora data/cora

Nodes keep the order of the .content file, classes are numbered in sorted
label order, citations become undirected edges (self-citations and
duplicates dropped). The output is the raw graph; `igcn prepare` extracts the
largest connected component.
"""

import argparse
import json
import pathlib


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("raw_dir")
    ap.add_argument("name")
    ap.add_argument("out_dir")
    args = ap.parse_args()

    raw = pathlib.Path(args.raw_dir)
    out = pathlib.Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    ids, rows, names = [], [], []
    with open(raw / f"{args.name}.content") as f:
        for line in f:
            parts = line.split()
            ids.append(parts[0])
            rows.append([i for i, v in enumerate(parts[1:-1]) if float(v) != 0.0])
            names.append(parts[-1])
    feature_dim = len(line.split()) - 2
    index = {pid: i for i, pid in enumerate(ids)}
    classes = sorted(set(names))

    edges = set()
    dangling = 0
    with open(raw / f"{args.name}.cites") as f:
        for line in f:
            a, b = line.split()
            if a not in index or b not in index:
                dangling += 1
                continue
            u, v = index[a], index[b]
            if u != v:
                edges.add((min(u, v), max(u, v)))

    with open(out / "edges.tsv", "w") as f:
        for u, v in sorted(edges):
            f.write(f"{u}\t{v}\n")
    with open(out / "labels.tsv", "w") as f:
        for i, name in enumerate(names):
            f.write(f"{i}\t{classes.index(name)}\n")
    with open(out / "features.tsv", "w") as f:
        for i, cols in enumerate(rows):
            for c in cols:
                f.write(f"{i}\t{c}\t1\n")
    meta = {
        "name": args.name,
        "num_nodes": len(ids),
        "num_classes": len(classes),
        "feature_dim": feature_dim,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    print(f"{args.name}: {len(ids)} nodes, {len(edges)} undirected edges, "
          f"{len(classes)} classes, {feature_dim} features, {dangling} dangling citations")


if __name__ == "__main__":
    main()
