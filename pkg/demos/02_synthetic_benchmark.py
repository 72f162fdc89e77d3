"""
CE pretraining vs DOWN vs STAR on one benchmark seed
====================================================

Trains the three variants on the standard synthetic benchmark and scores
both inference mechanisms. Takes about a minute on one core.

    python3 demos/02_synthetic_benchmark.py [seed]
"""

import sys
import time

from starfcdc.experiment import benchmark_config, benchmark_data, run_single

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
train, test, manifest = benchmark_data(seed)
print(f"{manifest.n_train} train / {manifest.n_test} test, "
      f"{manifest.M} coarse classes, {manifest.K} fine classes\n")

print(f"{'variant':8s} {'ACC':>6s} {'ARI':>6s} {'NMI':>6s} {'cACC':>6s} {'epoch':>5s} {'B':>6s} {'time':>5s}")
for variant in ("ce", "down", "star"):
    config = benchmark_config(variant, seed)
    t0 = time.time()
    result, reports = run_single(train, test, config, ("clustering", "centroid"))
    rep, cen = reports["clustering"], reports["centroid"]
    base = result.history[-1].get("base", float("nan"))
    print(f"{variant:8s} {rep.acc:6.3f} {rep.ari:6.3f} {rep.nmi:6.3f} {cen.acc:6.3f} "
          f"{result.best_epoch:5d} {base:6.2f} {time.time() - t0:4.0f}s")

# cACC is centroid inference: one query at a time against centroids from the
# training clusters, so it needs no test batch
