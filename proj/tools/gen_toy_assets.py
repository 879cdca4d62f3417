#!/usr/bin/env python3
"""Generates the pinned toy-transformer weight bundle and corpus.

Run once; the outputs under assets/toy/ are checked in and their SHA-256 is
pinned, so rerunning is only needed to deliberately replace the model.
"""
import argparse
import hashlib
import json
import pathlib

import numpy as np

CONFIG = {"layers": 2, "heads": 4, "width": 32, "vocab": 64, "seq_len": 32, "ff_width": 64}
SEED = 20210601


def tensors(rng):
    d, v, n, ff = CONFIG["width"], CONFIG["vocab"], CONFIG["seq_len"], CONFIG["ff_width"]
    out = [("tok_emb", rng.normal(0.0, 1.0, (v, d))), ("pos_emb", rng.normal(0.0, 0.5, (n, d)))]
    for layer in range(CONFIG["layers"]):
        p = f"layer{layer}."
        out += [
            (p + "ln1.gamma", 1.0 + rng.normal(0.0, 0.1, d)),
            (p + "ln1.beta", rng.normal(0.0, 0.1, d)),
            # Large query/key scale gives peaky softmax rows spanning many decades.
            (p + "wq", rng.normal(0.0, 0.4, (d, d))),
            (p + "wk", rng.normal(0.0, 0.4, (d, d))),
            (p + "wv", rng.normal(0.0, d ** -0.5, (d, d))),
            (p + "wo", rng.normal(0.0, d ** -0.5, (d, d))),
            (p + "ln2.gamma", 1.0 + rng.normal(0.0, 0.1, d)),
            (p + "ln2.beta", rng.normal(0.0, 0.1, d)),
            (p + "ff1.w", rng.normal(0.0, d ** -0.5, (d, ff))),
            (p + "ff1.b", rng.normal(0.0, 0.1, ff)),
            (p + "ff2.w", rng.normal(0.0, ff ** -0.5, (ff, d))),
            (p + "ff2.b", rng.normal(0.0, 0.1, d)),
        ]
    out += [
        ("lnf.gamma", 1.0 + rng.normal(0.0, 0.1, d)),
        ("lnf.beta", rng.normal(0.0, 0.1, d)),
        ("out.w", rng.normal(0.0, d ** -0.5, (d, v))),
    ]
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(pathlib.Path(__file__).resolve().parent.parent / "assets" / "toy"))
    args = ap.parse_args()
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(SEED)

    blob = bytearray()
    entries = []
    for name, arr in tensors(rng):
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": len(blob)})
        blob += data
    (out / "toy_weights.bin").write_bytes(bytes(blob))
    manifest = {
        "format": "attnsqueeze-toy-weights",
        "version": 1,
        "config": CONFIG,
        "data_file": "toy_weights.bin",
        "sha256": hashlib.sha256(blob).hexdigest(),
        "tensors": entries,
    }
    (out / "toy_weights.json").write_text(json.dumps(manifest, indent=2) + "\n")

    lines = []
    for _ in range(48):
        length = int(rng.integers(12, CONFIG["seq_len"] + 1))
        lines.append(" ".join(str(int(t)) for t in rng.integers(0, CONFIG["vocab"], length)))
    (out / "corpus.txt").write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
