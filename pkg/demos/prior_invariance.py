"""Show that the structure prior ignores a global brightness change.

    python demos/prior_invariance.py [image.png] [--out DIR]

Without an image a smooth random texture is used.  Writes the prior of the
image and of two darkened copies as 8-bit PNGs and prints their differences.
"""
import argparse
from pathlib import Path

import numpy as np

from splatlight.imagecore import convolve_separable, gaussian_kernel, load_image, save_image
from splatlight.prior import extract_prior


def texture(seed=0, size=96):
    rng = np.random.default_rng(seed)
    k = gaussian_kernel(2.0)
    img = convolve_separable(rng.random((size, size, 3)), k, k)
    img = (img - img.min()) / (img.max() - img.min())
    return 0.05 + 0.9 * img


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("image", nargs="?")
    ap.add_argument("--out", default="prior_demo")
    args = ap.parse_args()
    img = load_image(args.image) if args.image else texture()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    base = extract_prior(img)
    save_image(base, out / "prior_1.00.png", bits=8)
    for c in (0.5, 0.2):
        P = extract_prior(c * img)
        save_image(c * img, out / f"input_{c:.2f}.png", bits=8)
        save_image(P, out / f"prior_{c:.2f}.png", bits=8)
        print(f"brightness x{c:.2f}: mean |P(cI) - P(I)| = {np.abs(P - base).mean():.2e}")
    print(f"wrote images to {out}/")


if __name__ == "__main__":
    main()
