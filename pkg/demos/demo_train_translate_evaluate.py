"""
Train, translate and evaluate
=============================

A short run of the toy configuration. The same steps are available from the
command line as ``roma make-toy``, ``roma train``, ``roma translate`` and
``roma evaluate``.
"""

import tempfile
from pathlib import Path

import numpy as np
import torch

from roma import toy_config, train
from roma.data import load_frame, make_toy_dataset, save_frame, scan_dataset
from roma.metrics import _load_generator, evaluate, fid

work = Path(tempfile.mkdtemp())
make_toy_dataset(work / "toy", seed=0, clips=2, frames_per_clip=8, size=64)

# a handful of steps; the full toy schedule is 2000
config = toy_config(steps=20, num_areas=16, checkpoint_every=10)
trainer = train(config, work / "toy", work / "run")
print("finished at step", trainer.step)
print("log lines:", len((work / "run" / "log.jsonl").read_text().splitlines()))

# translate one clip frame by frame
net, cfg = _load_generator(work / "run" / "latest.ckpt")
source, _ = scan_dataset(work / "toy")
with torch.no_grad():
    for path in source.clips[0].paths[:3]:
        x = load_frame(path, cfg.in_channels, cfg.resolution)
        save_frame(net(x.unsqueeze(0))[0], work / "out" / path.name)
print("translated:", sorted(p.name for p in (work / "out").iterdir()))

report = evaluate(work / "run" / "latest.ckpt", work / "toy", out_path=work / "report.tsv")
print({k: report[k] for k in ("fid", "structure_score", "backend", "n_translated")})
print((work / "report.tsv").read_text())

# the Frechet distance itself: two 1-D sets with means 0 and 3
print("fid([-1, 1], [2, 4]) =", fid(np.array([-1.0, 1.0]), np.array([2.0, 4.0])))
