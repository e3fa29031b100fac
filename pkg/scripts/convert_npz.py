"""Convert a citation-graph .npz release into glace edge/attribute/label files.

Expects the compressed-sparse layout used by the public Cora-ML and Citeseer
releases: adj_{data,indices,indptr,shape}, attr_{data,indices,indptr,shape}
and labels.

    python scripts/convert_npz.py cora_ml.npz data/cora_ml

writes data/cora_ml.edges, .attrs, .labels, .meta and .sha256.
A symmetric adjacency is written as an undirected edge list (each pair once).
"""

import argparse
import hashlib
from pathlib import Path

import numpy as np
import scipy.sparse as sp


def load_npz(path):
    with np.load(path, allow_pickle=True) as z:
        adj = sp.csr_matrix((z["adj_data"], z["adj_indices"], z["adj_indptr"]), shape=tuple(z["adj_shape"]))
        attr = sp.csr_matrix((z["attr_data"], z["attr_indices"], z["attr_indptr"]), shape=tuple(z["attr_shape"]))
        labels = z["labels"] if "labels" in z else None
    return adj, attr, labels


def convert(npz, prefix):
    adj, attr, labels = load_npz(npz)
    adj.setdiag(0)
    adj.eliminate_zeros()
    directed = (adj != adj.T).nnz > 0
    coo = sp.triu(adj).tocoo() if not directed else adj.tocoo()
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    outputs = []

    path = prefix.with_suffix(".edges")
    with open(path, "w") as fh:
        for a, b, w in zip(coo.row, coo.col, coo.data):
            fh.write(f"{a} {b} {float(w)!r}\n" if w != 1 else f"{a} {b}\n")
    outputs.append(path)

    path = prefix.with_suffix(".attrs")
    attr = attr.tocoo()
    with open(path, "w") as fh:
        fh.write(f"{attr.shape[0]} {attr.shape[1]}\n")
        for r, c, v in zip(attr.row, attr.col, attr.data):
            fh.write(f"{r} {c} {float(v)!r}\n")
    outputs.append(path)

    if labels is not None:
        path = prefix.with_suffix(".labels")
        with open(path, "w") as fh:
            for i, y in enumerate(np.asarray(labels).tolist()):
                fh.write(f"{i} {y}\n")
        outputs.append(path)

    path = prefix.with_suffix(".meta")
    path.write_text(
        f"directed = {int(directed)}\nnum_nodes = {adj.shape[0]}\nnum_edges = {coo.nnz}\n"
        f"num_attributes = {attr.shape[1]}\n"
    )
    outputs.append(path)

    lines = [f"{hashlib.sha256(p.read_bytes()).hexdigest()}  {p.name}\n" for p in outputs]
    prefix.with_suffix(".sha256").write_text("".join(lines))
    print(f"{prefix.name}: {adj.shape[0]} nodes, {coo.nnz} {'directed' if directed else 'undirected'} edges, "
          f"D={attr.shape[1]}")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("npz")
    ap.add_argument("prefix")
    args = ap.parse_args()
    convert(args.npz, args.prefix)


if __name__ == "__main__":
    main()
