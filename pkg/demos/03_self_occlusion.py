"""Self-occlusion analysis with hidden-point removal.

V(P) is the fraction of sphere-sampled viewpoints from which a point
survives the HPR visibility test; points with V in [0.2, 0.4) count as
easily self-occluded, and when at least half of a textureless object sits
in that band, the pipeline switches on visible-mask correspondence
filtering at inference time.
"""

import numpy as np

from gridpose.harness import make_toy_object
from gridpose.visibility import filter_decision, sample_viewpoints, visibility_profile


def tray(n=11, half=1.0, wall=0.3):
    """Open shallow tray: the floor sees only a cone of directions."""
    lin = np.linspace(-half, half, n)
    g1, g2 = np.meshgrid(lin, lin, indexing="ij")
    parts = [np.stack([g1.ravel(), g2.ravel(), np.zeros(n * n)], axis=1),
             np.stack([g1.ravel(), g2.ravel(), np.full(n * n, -0.2)], axis=1)]
    for s in (-half, half):
        for axis in (0, 1):
            gg, zz = np.meshgrid(lin, np.linspace(0, wall, 4), indexing="ij")
            p = np.zeros((gg.size, 3))
            p[:, 1 - axis] = gg.ravel()
            p[:, axis] = s
            p[:, 2] = zz.ravel()
            parts.append(p)
    return np.unique(np.vstack(parts), axis=0)


views = sample_viewpoints(level=3)  # 642 viewpoints keeps this demo quick
print(f"viewpoints: {views.count} directions at {views.radius_factor}x diameter\n")

for name, cloud in [
    ("sphere (convex)", None),
    ("bumpy toy object", make_toy_object(subdiv=3).vertices),
    ("open tray (cavity)", tray()),
]:
    if cloud is None:
        from gridpose.visibility import icosphere
        cloud = icosphere(3)
    prof = visibility_profile(cloud, views)
    band = ((prof.v >= 0.2) & (prof.v < 0.4)).mean()
    print(f"{name:22s} V(P) range [{prof.v.min():.2f}, {prof.v.max():.2f}]  "
          f"r_so = {prof.r_so:.3f}  "
          f"filter(textureless): {filter_decision(prof, textureless=True)}")

print("\nthe decision needs both conditions: a textured object never filters")
prof = visibility_profile(make_toy_object(subdiv=3).vertices, views)
print(f"  bumpy object, textured    : {filter_decision(prof, textureless=False)}")
print(f"  bumpy object, textureless : {filter_decision(prof, textureless=True)}")
