"""
Relighting through a decomposition
===================================

Once an image is split into reflectance and shading, the illumination
can be edited independently of the paint: tint it toward a colour, or
brighten the under-lit areas using the detail the two solver stages
disagree about.
"""

from pathlib import Path

import numpy as np

from intrinsics import (
    ImageBuffer,
    IterationParams,
    recolor_illumination,
    relight_intensity,
    run_decomposition,
    save_image,
)

OUT = Path(__file__).parent / "output" / "relight"
OUT.mkdir(parents=True, exist_ok=True)

# --- 1. a simple room-like scene ----------------------------------------
reflectance = np.full((80, 80, 3), 0.65)
reflectance[40:, :] = [0.55, 0.35, 0.25]        # wooden floor
reflectance[10:32, 14:34] = [0.30, 0.45, 0.75]  # a picture on the wall

yy, xx = np.mgrid[0:80, 0:80]
shading = 0.2 + 0.8 * np.exp(-((yy - 8) ** 2 + (xx - 64) ** 2) / (2 * 30.0**2))
image = ImageBuffer(reflectance * shading[:, :, None])
save_image(OUT / "input.png", image)

result = run_decomposition(image, IterationParams())
last = result.history[-1]

# --- 2. tint the light warm, then cold ----------------------------------
# the chroma shift is strongest near the bright source and decays with
# distance; the paint colours underneath are untouched
for name, ab in (("warm", (18.0, 28.0)), ("cold", (-6.0, -30.0))):
    tinted = recolor_illumination(
        result.merged_reflectance, result.merged_shading, ab
    )
    save_image(OUT / f"tinted_{name}.png", tinted)
    print(f"tinted_{name}.png: illumination shifted by ab={ab}")

# --- 3. re-inject illumination detail -------------------------------------
# the additive and multiplicative residues between the two stages carry
# the illumination detail each stage explained away; blurred and fed
# back, they lift regions where the first stage saw more reflectance
# than the second kept.  On a synthetic scene the stages agree almost
# everywhere, so the output stays close to the rescaled input — the
# residues only become substantial on real photographs.
rho = np.exp(last.log_reflectance)
agreement = np.abs(rho - last.reflectance).max()
print(f"stage disagreement on this synthetic scene: {agreement:.4f} (max abs)")

for scale in (0.25, 0.5):
    lifted = relight_intensity(
        last.reflectance,
        last.shading,
        rho,
        np.exp(last.log_shading),
        image,
        scale=scale,
    )
    save_image(OUT / f"relit_{scale}.png", lifted)
    rescaled = (image.data - image.data.min()) / (image.data.max() - image.data.min())
    print(f"relit_{scale}.png: differs from the plain rescaled input by "
          f"{np.abs(lifted.data - rescaled).max():.4f} (max abs)")

print(f"\nall outputs in {OUT}")
