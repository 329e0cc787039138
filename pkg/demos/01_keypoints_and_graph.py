"""Keypoint sampling and the k-NN graph.

Builds a procedural test object, samples keypoints by farthest point
sampling, and wires the k-nearest-neighbor graph the localization network
operates on. Prints the quantities a pose pipeline actually cares about:
how well the keypoints cover the surface and how local the graph is.
"""

import numpy as np

from gridpose.geometry import build_knn_graph, farthest_point_sample
from gridpose.harness import make_toy_object

model = make_toy_object(kind="bumpy", subdiv=4, diameter=0.2)
print(f"object: {model.vertex_count} vertices, diameter {model.diameter:.3f} m")

for n in (8, 64, 512):
    kp = farthest_point_sample(model, n)
    # coverage = how far any vertex is from its nearest keypoint
    d = np.linalg.norm(model.vertices[:, None, :] - kp.points[None], axis=2)
    print(f"  N={n:4d}: worst vertex-to-keypoint distance "
          f"{d.min(axis=1).max() * 1000:.1f} mm")

kp = farthest_point_sample(model, 64)
graph = build_knn_graph(kp, k=20)
edge_len = np.linalg.norm(kp.points[graph.edges()[:, 0]]
                          - kp.points[graph.edges()[:, 1]], axis=1)
print(f"graph: {graph.node_count} nodes, out-degree {graph.out_degree}, "
      f"median edge {np.median(edge_len) * 1000:.1f} mm "
      f"(object diameter {model.diameter * 1000:.0f} mm)")

# FPS picks spread-out points: the min pairwise gap shrinks slowly with N
for n in (16, 32, 64):
    pts = farthest_point_sample(model, n).points
    gap = min(np.linalg.norm(pts[i] - pts[j])
              for i in range(n) for j in range(i + 1, n))
    print(f"  N={n}: min keypoint separation {gap * 1000:.1f} mm")
