"""
Colour spaces and geometric transforms
=======================================

Every pipeline stage speaks one of four colour spaces.  This script walks
through the conversions, checks the round trip, and shows the lossless
geometric ops used for augmentation.
"""

import numpy as np

from hemascreen import imaging

# a tiny swatch: pure red, mid gray, skin-ish tone
swatch = np.array([[[255, 0, 0], [128, 128, 128], [224, 172, 150]]], dtype=np.uint8)

for space in ("RGB", "CIELab", "YCbCr", "HSV"):
    p0, p1, p2 = imaging.convert_color(swatch, space)
    print(f"{space:7s}", np.round(np.stack([p0[0], p1[0], p2[0]], axis=1), 2).tolist())

# the round trip is lossless to within one 8-bit step
rng = np.random.default_rng(0)
colors = rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
for space in ("CIELab", "YCbCr", "HSV"):
    back = imaging.convert_back(imaging.convert_color(colors, space), space)
    err = np.abs(back.astype(int) - colors.astype(int)).max()
    print(f"{space} round-trip max error: {err}/255")

# flips and rotations reorder pixels without touching their values,
# which is why they are safe augmentation ops for colour analysis
img = rng.integers(0, 256, size=(5, 7, 3), dtype=np.uint8)
flipped = imaging.flip_h(img)
print("flip_h is an involution:", np.array_equal(imaging.flip_h(flipped), img))

quarter = img
for _ in range(4):
    quarter = imaging.rot90(quarter)
print("rot90 has order four:", np.array_equal(quarter, img))

# affine warps resample bilinearly; the identity matrix is bit-exact
identity = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
print("identity affine is exact:", np.array_equal(imaging.affine(img, identity), img))
