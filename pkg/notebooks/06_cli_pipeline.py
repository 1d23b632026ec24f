"""
End-to-end command chain
========================

Synthesize scenes, train briefly, predict and evaluate through the CLI entry
point, all inside a temporary directory.
"""

import tempfile
from pathlib import Path

from dcenet.cli import main

tmp = Path(tempfile.mkdtemp())
main(["synth", "--kind", "crossing", "--agents", "2", "--seed", "0", "--scenes", "4", "--out", str(tmp / "train")])
main(["synth", "--kind", "crossing", "--agents", "2", "--seed", "50", "--scenes", "2", "--out", str(tmp / "test")])

small = ["d_embed=8", "d_k=8", "lstm_hidden=8", "fusion_dim=8", "z_dim=4", "recog_hidden=8", "decoder_hidden=8"]
args = ["train"]
for kv in small + ["epochs=40", f"train_data={tmp / 'train'}", f"checkpoint={tmp / 'm.ckpt'}", f"loss_log={tmp / 'loss.csv'}"]:
    args += ["--set", kv]
main(args)
print((tmp / "loss.csv").read_text())

main(["predict", "--data", str(tmp / "test"), "--checkpoint", str(tmp / "m.ckpt"), "--out", str(tmp / "p.csv")])
main(["evaluate", "--predictions", str(tmp / "p.csv"), "--ground-truth", str(tmp / "test")])

# the constant-velocity baseline on the same windows
main(["predict", "--data", str(tmp / "test"), "--model", "cv", "--out", str(tmp / "cv.csv")])
main(["evaluate", "--predictions", str(tmp / "cv.csv"), "--ground-truth", str(tmp / "test")])
