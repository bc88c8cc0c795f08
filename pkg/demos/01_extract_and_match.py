"""From raw image to template to score.

Synthesises two "impressions" (one rotated copy of the other), aligns both
with their poses, runs the descriptor network with seeded random weights and
compares the templates.  Random weights carry no identity information, so the
point here is the data flow and the shapes, not the score.
"""

import numpy as np

from fdd import align, net
from fdd.core import FingerprintImage, PoseTransform
from fdd.matchkit import match

rng = np.random.default_rng(0)
yy, xx = np.mgrid[0:600, 0:600].astype(float)
ridges = 127.5 + 120 * np.sin((xx * np.cos(0.5) + yy * np.sin(0.5)) / 4.0)
img = FingerprintImage(np.clip(ridges + rng.normal(0, 5, ridges.shape), 0, 255))

pose = PoseTransform.from_degrees(299.5, 299.5, 20)
aligned = align.align_and_crop(img, pose)
print("aligned input", aligned.shape, f"range [{aligned.min():.2f}, {aligned.max():.2f}]")

ws = net.WeightStore.random(c=6, seed=1)
trace = {}
out = net.forward(aligned, ws, 6, trace=trace)
for name in ("encoder", "texture.layer3", "texture.layer4", "minutia.map_decoder"):
    print(f"  {name:22s} {trace[name]}")

t1 = net.template_from_output(out, meta={"subject": "demo"})
print("template", t1.descriptor.shape, "foreground cells", int(t1.mask.sum()))

# second impression: same pattern, different pose
t2 = net.extract_template(align.align_and_crop(img, PoseTransform.from_degrees(305, 290, 25)), ws, 6)
print("self score", match(t1, t1).score, " cross-pose score", round(match(t1, t2).score, 6))
