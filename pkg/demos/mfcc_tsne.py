"""Embed utterances from three simulated recording sites and project them with t-SNE.

Each site applies its own spectral tilt and noise level, which the
utterance-level MFCC statistics pick up.

Run: python3 demos/mfcc_tsne.py
"""

import numpy as np
from scipy.signal import lfilter

from clinasr.audio import Waveform
from clinasr.corpus import derive_seed
from clinasr.features import compute_mfcc, tsne_project, utterance_embedding
from clinasr.snr import gamma_speech

sites = {"C1": (0.0, 0.002), "C2": (0.9, 0.01), "C3": (-0.6, 0.03)}
vectors, labels = [], []
for site, (tilt, noise) in sites.items():
    for i in range(20):
        seed = derive_seed(0, f"{site}:{i}")
        x = lfilter([1.0], [1.0, -tilt], gamma_speech(16000, seed))
        x = x + noise * np.random.default_rng(seed + 1).standard_normal(x.size)
        vectors.append(utterance_embedding(compute_mfcc(Waveform(x.astype(np.float32)))))
        labels.append(site)

emb = tsne_project(np.array(vectors), perplexity=10, iterations=500, seed=0, labels=labels)
print(f"embedding dim {len(vectors[0])}, final KL {emb.kl_history[-1]:.3f}")
for site in sites:
    pts = emb.points[[lab == site for lab in labels]]
    print(f"{site}: centroid ({pts[:, 0].mean():7.2f}, {pts[:, 1].mean():7.2f}), spread {pts.std():.2f}")
