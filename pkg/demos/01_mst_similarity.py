"""Neighbourhood structure from a minimum spanning tree.

Each point keeps only its tree neighbours, weighted by inverse edge length.
The resulting similarity is sparse (n - 1 edges) and symmetric.
"""

import numpy as np

from nsnmf import build_complete_graph, minimum_spanning_tree, mst_from_points, mst_similarity

rng = np.random.default_rng(1)
X = rng.random((8, 2))

tree = mst_from_points(X)
print("tree edges:", len(tree.edges.weight), " total length:", round(tree.total_weight, 4))

# The explicit edge-list route gives the same tree.
same = minimum_spanning_tree(build_complete_graph(X), len(X))
print("edge-list Prim agrees:", np.isclose(same.total_weight, tree.total_weight))

S = mst_similarity(X)
dense = S.S.toarray()
print("symmetric:", np.allclose(dense, dense.T), " nonzeros:", S.S.nnz)
print(np.round(dense, 2))
