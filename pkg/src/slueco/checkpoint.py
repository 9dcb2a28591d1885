"""Checkpoint container: magic line, then an ``.npz`` payload with a JSON metadata entry."""

import io
import json
import zipfile
from dataclasses import dataclass, field

import numpy as np

from slueco.exceptions import CheckpointError

MAGIC = b"SLUECO-CKPT"
VERSION = 1


@dataclass
class Checkpoint:
    params: dict
    config: dict
    classes: list
    provenance: dict = field(default_factory=dict)

    def copy(self):
        return Checkpoint(
            {k: v.copy() for k, v in self.params.items()},
            dict(self.config),
            list(self.classes),
            dict(self.provenance),
        )

    def __eq__(self, other):
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return (
            self.config == other.config
            and self.classes == other.classes
            and self.provenance == other.provenance
            and self.params.keys() == other.params.keys()
            and all(np.array_equal(v, other.params[k]) for k, v in self.params.items())
        )


def save_checkpoint(ckpt, path):
    meta = {
        "version": VERSION,
        "config": ckpt.config,
        "classes": ckpt.classes,
        "provenance": ckpt.provenance,
    }
    buf = io.BytesIO()
    np.savez(buf, __meta__=np.array(json.dumps(meta, sort_keys=True)), **ckpt.params)
    with open(path, "wb") as fh:
        fh.write(MAGIC + b" %d\n" % VERSION)
        fh.write(buf.getvalue())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        head = fh.readline()
        payload = fh.read()
    parts = head.split()
    if len(parts) != 2 or parts[0] != MAGIC or not parts[1].isdigit():
        raise CheckpointError(f"{path}: not a checkpoint (bad magic header)")
    if int(parts[1]) != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {int(parts[1])}")
    try:
        with np.load(io.BytesIO(payload), allow_pickle=False) as z:
            meta = json.loads(str(z["__meta__"]))
            params = {k: z[k].astype(np.float64) for k in z.files if k != "__meta__"}
    except (ValueError, OSError, KeyError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint payload ({exc})") from None
    return Checkpoint(params, meta["config"], meta["classes"], meta["provenance"])
