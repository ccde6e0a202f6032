"""
Superpixels and colour-profile ROI selection
============================================

SLIC clusters pixels by colour similarity and spatial proximity; the region
of interest is then the union of clusters whose mean colour matches the
expected profile.  This is the segmentation route the screening pipeline
uses by default.
"""

from pathlib import Path

import numpy as np

from hemascreen import dataset, imgio, segment
from hemascreen.imaging import rgb_to_lab
from hemascreen.segment import ColorProfile

out_dir = Path(__file__).parent / "output"
out_dir.mkdir(exist_ok=True)

# one synthetic conjunctiva photo: skin background, pink ROI, white sclera
patient = dataset.synth_corpus(1, seed=5)[0]
img = patient.images["conjunctiva"]
imgio.save_image(out_dir / "conjunctiva.png", img)

L, a, b = rgb_to_lab(img)
labels = segment.slic(L, a, b, k=48, compactness=10.0)
print(f"{labels.max() + 1} superpixels over a {img.shape[1]}x{img.shape[0]} image")

# paint superpixel boundaries for inspection
edges = np.zeros(labels.shape, dtype=bool)
edges[:, 1:] |= labels[:, 1:] != labels[:, :-1]
edges[1:, :] |= labels[1:, :] != labels[:-1, :]
overlay = img.copy()
overlay[edges] = (255, 255, 0)
imgio.save_image(out_dir / "superpixels.png", overlay)

# select the conjunctival tissue by its expected colour, then the sclera
tissue = segment.select_roi(labels, L, a, b,
                            ColorProfile((55.0, 26.5, 12.0), 14.0, 0.02))
sclera = segment.select_roi(labels, L, a, b,
                            ColorProfile((96.0, 0.0, 4.0), 12.0, 0.005))
print(f"tissue: {len(tissue.labels)} clusters, {tissue.mask.mean():.1%} of image, "
      f"confident={tissue.confident}")
print(f"sclera: {len(sclera.labels)} clusters, {sclera.mask.mean():.1%} of image, "
      f"confident={sclera.confident}")

painted = img.copy()
painted[tissue.mask] = (255, 0, 0)
painted[sclera.mask] = (0, 0, 255)
imgio.save_image(out_dir / "roi_selection.png", painted)
print(f"wrote conjunctiva.png, superpixels.png, roi_selection.png to {out_dir}")

# how well did we recover the planted ellipse?
planted = patient.roi_masks["conjunctiva"]
iou = (tissue.mask & planted).sum() / (tissue.mask | planted).sum()
print(f"IoU against the planted ROI: {iou:.3f}")
