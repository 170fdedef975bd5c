"""RECNET01 checkpoint container.

Layout: 8-byte magic `RECNET01`, a little-endian uint32 header length, a JSON
header (sorted keys) describing the arch and the array directory, then the
arrays as raw little-endian float64 in directory order. Full byte layout in
docs/formats.md.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .netcore import Arch, DenseNet, Layer, IDENTITY, RELU
from .regularize import Anchor, FisherDiag

MAGIC = b"RECNET01"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, net: DenseNet, anchor: Anchor | None = None,
                    fisher: FisherDiag | None = None) -> None:
    arrays: list[tuple[str, np.ndarray]] = []
    for i, l in enumerate(net.layers):
        arrays.append((f"w{i}", l.weight))
        arrays.append((f"b{i}", l.bias))
    if anchor is not None:
        arrays.append(("anchor", anchor.params))
    if fisher is not None:
        arrays.append(("fisher", fisher.values))
    header = {
        "arch": {
            "input_dim": net.arch.input_dim,
            "hidden_widths": list(net.arch.hidden_widths),
            "output_dim": net.arch.output_dim,
        },
        "fisher_samples": fisher.sample_count if fisher is not None else None,
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path
                    ) -> tuple[DenseNet, Anchor | None, FisherDiag | None]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"bad magic {raw[:8]!r}, expected {MAGIC!r}")
    if len(raw) < 12:
        raise CheckpointError("truncated checkpoint header")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    arch = Arch(header["arch"]["input_dim"], tuple(header["arch"]["hidden_widths"]),
                header["arch"]["output_dim"])

    off = 12 + hlen
    loaded: dict[str, np.ndarray] = {}
    for spec in header["arrays"]:
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        nbytes = count * 8
        if off + nbytes > len(raw):
            raise CheckpointError(f"truncated array {spec['name']!r}")
        loaded[spec["name"]] = np.frombuffer(raw, dtype="<f8", count=count,
                                             offset=off).reshape(spec["shape"]).copy()
        off += nbytes

    layers = []
    for i in range(arch.num_layers):
        act = IDENTITY if i == arch.num_layers - 1 else RELU
        layers.append(Layer(loaded[f"w{i}"], loaded[f"b{i}"], act))
    net = DenseNet(arch, layers)
    anchor = Anchor(loaded["anchor"]) if "anchor" in loaded else None
    fisher = (FisherDiag(loaded["fisher"], int(header["fisher_samples"] or 0))
              if "fisher" in loaded else None)
    return net, anchor, fisher
