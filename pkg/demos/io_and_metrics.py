# coding: utf-8

# # Files and scores
#
# Scans are float32 x, y, z, intensity records; labels are uint32 with the
# instance id in the upper 16 bits. We write a synthetic dataset, read it
# back, export a coloured PLY and score a checkpoint with the command line tool.

# In[1]:

import struct
import tempfile
from pathlib import Path

import numpy as np

from unimix.cli import run
from unimix.dataio import RemapTable, read_labels, read_raw_labels, read_scan

root = Path(tempfile.mkdtemp())
run(["synth", "--out-dir", str(root), "--count", "6", "--points", "1500", "--seed", "3"])
scan = root / "source" / "velodyne" / "000000.bin"
print(scan.stat().st_size // 16, "points in", scan.name)


# The lower 16 bits carry the semantic id.

# In[2]:

(root / "one.label").write_bytes(struct.pack("<I", 0x0001_0028))
print(read_raw_labels(root / "one.label"), read_labels(root / "one.label", RemapTable.builtin("semantickitti")).labels)


# In[3]:

run(["export-ply", "--in", str(scan), "--labels", str(root / "source" / "labels" / "000000.label"),
     "--out", str(root / "scan.ply")])
print((root / "scan.ply").read_text().splitlines()[:10])


# Short training run, then the IoU table on the target split.

# In[4]:

run(["train-dg", "--preset", "desk", "--source", str(root / "source"), "--out-dir", str(root / "out")])
run(["eval", "--model", str(root / "out" / "student1.ckpt"), "--data", str(root / "target")])
