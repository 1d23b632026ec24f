"""
Training the CVAE and sampling futures
======================================

A short run on synthetic crossing scenes, then ten sampled futures for one
window ranked by density.
"""

import numpy as np

from dcenet import cvae, data, ranking
from dcenet.encoder import EncoderConfig

windows = []
for seed in range(8):
    windows += data.extract_windows(data.synth_scene("crossing", 2, seed), scene=f"demo{seed}")
print(len(windows), "training windows")

# a reduced model keeps the demo quick
enc = EncoderConfig(d_embed=16, d_k=16, lstm_hidden=16, fusion_dim=16)
model = cvae.DcenetModel(cvae.ModelConfig(encoder=enc, z_dim=8, recog_hidden=16, decoder_hidden=16))
history = cvae.fit(model, windows, cvae.TrainConfig(iterations=300, batch_size=16))
print("recon / kl at start:", np.round(history[0][:2], 3), "at end:", np.round(history[-1][:2], 3))

w = windows[0]
pset = cvae.predict(model, w, n=10, seed=0)
print("scores:", np.round(pset.scores, 3))
print("most likely sample:", pset.most_likely_index)
print("ADE / FDE of most likely:", ranking.ade(pset.most_likely, w.future), ranking.fde(pset.most_likely, w.future))
print("best of 10 (ADE, FDE):", ranking.top_n(pset, w.future))
