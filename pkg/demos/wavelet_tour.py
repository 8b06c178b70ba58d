"""
A tour of the Haar front-end
============================

Decompose one synthetic image, check that nothing is lost, and look at how
the gated AMFF stem turns the subbands into a low/high channel pair.
"""

import numpy as np
import torch

from amsfnet import wavelet
from amsfnet.amff import AMFF
from amsfnet.datasets import SyntheticRecipe, render_synthetic

manifest, images = render_synthetic(SyntheticRecipe(patients_per_class=1, images_per_patient=1))
for it in manifest.items:
    x = images[it.item_id] / 255.0
    pyr = wavelet.dwt_cascade(x, 3)
    energies = {f"{d}{l}": float((pyr.band(d, l) ** 2).sum()) for l in (1, 2, 3) for d in wavelet.DIRECTIONS}
    strongest = max(energies, key=energies.get)
    # orthonormal Haar: subband energies add up to the image energy
    total = sum(energies.values()) + float((pyr.ll[-1] ** 2).sum())
    print(f"{it.label:10s} strongest band {strongest:4s}  energy {total:.4f} vs {float((x ** 2).sum()):.4f}")
    print("  max reconstruction error", np.abs(wavelet.reconstruct(pyr) - x).max())

# the stem at initialization: gates are softmax outputs, so they sum to one
amff = AMFF(levels=3)
batch = torch.tensor(np.stack([images[it.item_id] / 255.0 for it in manifest.items])[:, None], dtype=torch.float32)
out = amff(batch)
print("stem output", tuple(out.x.shape))
print("directional gates of the first image\n", out.gates.directional[0].detach().numpy().round(3))
print("scale gates", out.gates.scale[0].detach().numpy().round(3))
