#!/usr/bin/env python3
"""Convert exported per-conversation EgoCom feature tables into a turnformer dataset directory.

Expected input, one subdirectory per conversation:

    <in>/<conv_id>/video.npy    float array, num_windows x 2048
    <in>/<conv_id>/audio.npy    float array, num_windows x 64
    <in>/<conv_id>/text.npy     float array, num_windows x 300
    <in>/<conv_id>/speaker.npy  int array, num_windows   (0 = no one, 1 = host, 2.. = participants)

Rows are windows in time order at --windows-per-second (12 for EgoCom).
Any modality file may be missing from every conversation; it is then omitted
from the manifest. Trailing windows that do not fill a whole second are dropped.

This is a stub: feature extraction itself (R(2+1)D video, speaker-embedding
audio, FastText text) happens upstream and is not part of this tool.
"""

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

MODALITIES = ("text", "audio", "video")


def convert(src: Path, dst: Path, wps: int, n_classes: int) -> None:
    convs = sorted(p for p in src.iterdir() if p.is_dir())
    if not convs:
        sys.exit(f"no conversation directories under {src}")
    present = [m for m in MODALITIES if (convs[0] / f"{m}.npy").exists()]
    dims = {}
    entries = []
    dst.mkdir(parents=True, exist_ok=True)
    for conv in convs:
        labels = np.load(conv / "speaker.npy").astype(np.int64).reshape(-1)
        rows = (len(labels) // wps) * wps
        if rows == 0:
            sys.exit(f"{conv.name}: shorter than one second")
        if labels[:rows].min() < 0 or labels[:rows].max() >= n_classes:
            sys.exit(f"{conv.name}: speaker labels outside [0, {n_classes})")
        out = dst / conv.name
        out.mkdir(exist_ok=True)
        for m in present:
            feats = np.load(conv / f"{m}.npy")
            if feats.ndim != 2 or feats.shape[0] < rows:
                sys.exit(f"{conv.name}/{m}.npy: expected at least {rows} rows, got shape {feats.shape}")
            if dims.setdefault(m, feats.shape[1]) != feats.shape[1]:
                sys.exit(f"{conv.name}/{m}.npy: dim {feats.shape[1]} differs from {dims[m]}")
            np.ascontiguousarray(feats[:rows], dtype="<f4").tofile(out / f"{m}.f32")
        with open(out / "labels.csv", "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["window_index", "speaker"])
            w.writerows(enumerate(labels[:rows].tolist()))
        entries.append({"id": conv.name, "duration_s": rows // wps, "num_windows": rows})
    manifest = {
        "format_version": 1,
        "windows_per_second": wps,
        "n_classes": n_classes,
        "modality_dims": dims,
        "conversations": entries,
    }
    (dst / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--in", dest="src", type=Path, required=True)
    ap.add_argument("--out", dest="dst", type=Path, required=True)
    ap.add_argument("--windows-per-second", type=int, default=12)
    ap.add_argument("--n-classes", type=int, default=4)
    a = ap.parse_args()
    convert(a.src, a.dst, a.windows_per_second, a.n_classes)


if __name__ == "__main__":
    main()
