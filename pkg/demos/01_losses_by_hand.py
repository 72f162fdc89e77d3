"""
Neighborhood contrast on a toy queue
====================================

A query, a queue of twelve momentum features, its top-3 neighbors and the
two contrastive losses. Run with ``python3 demos/01_losses_by_hand.py``.
"""

import numpy as np

from starfcdc.neighborhood import MomentumQueue, rank_weights, retrieve_neighbors
from starfcdc.objective import down_loss_l1, expanded_l22, star_loss_l2
from starfcdc.vecmath import bidirectional_kl, normalize

rng = np.random.default_rng(3)

# three tight groups on the 8-d unit sphere, four queue entries each
centers = normalize(rng.normal(size=(3, 8)))
feats = normalize(np.repeat(centers, 4, axis=0) + 0.15 * rng.normal(size=(12, 8)))
queue = MomentumQueue(capacity=12).push(np.arange(12), feats, np.zeros(12, dtype=int))
snap = queue.snapshot()

q = normalize(centers[0] + 0.15 * rng.normal(size=8))
nb = retrieve_neighbors(q, query_id=-1, snapshot=snap, k=3, alpha=150.0)
print("neighbors (queue ids):", nb.ids, "cosine:", np.round(nb.similarity, 3))
print("rank weights, alpha=150:", np.round(nb.weights, 3))
print("rank weights, alpha=2:  ", np.round(rank_weights(nb.ranks, 2.0, 3), 3))

# KL between the query and every queue entry: small inside its group
print("d_KL to queue:", np.round([bidirectional_kl(q, h) for h in snap.embeddings], 4))

tau = 0.07
print(f"\nDOWN loss            {down_loss_l1(q, nb, snap, tau):.4f}")
for B in (1.0, np.e, 10.0, 16.0):
    kl, eu = star_loss_l2(q, nb, snap, tau, gamma=1.0, B=B)
    print(f"STAR B={B:5.2f}  kl {kl:.4f}  euclid {eu:.4f}  expanded {expanded_l22(q, nb, snap, tau, B):.4f}")

# gamma=0 and B=1 strip STAR down to DOWN
kl, eu = star_loss_l2(q, nb, snap, tau, gamma=0.0, B=1.0)
print(f"\nSTAR(gamma=0, B=1) = {kl + eu:.10f}")
print(f"DOWN               = {down_loss_l1(q, nb, snap, tau):.10f}")
