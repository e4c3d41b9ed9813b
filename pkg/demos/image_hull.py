"""
Projecting an image onto a handful of shapes
============================================

Grayscale images are measures on the pixel grid.  A ring-shaped target is
projected onto a disc, a smaller ring, a square and a bar; the weights show
which shapes the transport geometry finds useful.
"""

# %%
import numpy as np

from wproj.measures import image_to_measure, render_image
from wproj.projection import project

shape = (28, 28)
rr, cc = np.mgrid[: shape[0], : shape[1]]
r = np.hypot(rr - 13.5, cc - 13.5)

target = ((r > 6) & (r <= 10)).astype(float)
shapes = {
    "disc": (r <= 8).astype(float),
    "small ring": ((r > 3) & (r <= 6)).astype(float),
    "square": ((abs(rr - 13.5) < 7) & (abs(cc - 13.5) < 7)).astype(float),
    "bar": ((abs(rr - 13.5) < 2) & (cc > 2) & (cc < 25)).astype(float),
}

# %%
p0 = image_to_measure(target)
res = project(p0, [image_to_measure(g) for g in shapes.values()])
for name, w in zip(shapes, res.display_weights()):
    print(f"{name:>10}: {w:.4f}")
print(f"residual {res.objective:.3f} pixels, W2 to each shape", res.per_control_w2.round(2))


# %%
def show(grid):
    ramp = " .:-=+*#%@"
    g = grid / grid.max()
    for row in g[::2]:
        print("".join(ramp[int(v * (len(ramp) - 1))] for v in row[::1]))


print("target")
show(target)
print("projection")
show(render_image(res.projected, shape))
