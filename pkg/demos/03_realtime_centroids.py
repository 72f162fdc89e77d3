"""
Centroid inference, one query at a time
=======================================

Fit once, freeze K centroids to a JSON bank, then label single samples the
way a request handler would.
"""

import os
import tempfile

import numpy as np

from starfcdc.experiment import benchmark_config, benchmark_data
from starfcdc.inference import CentroidBank, build_centroids, centroid_inference
from starfcdc.training import embed_dataset, fit
from starfcdc.encoder import encode

train, test, _ = benchmark_data(seed=0)
config = benchmark_config("star", seed=0, train_epochs=6)
params = fit(train, config).params

bank = build_centroids(embed_dataset(params, train), train.coarse, config.K, seed=0)
path = os.path.join(tempfile.mkdtemp(), "centroids.json")
bank.save(path)
print("saved bank:", path)
print("coarse label behind each centroid:", bank.coarse_labels)

# a fresh process would only need the encoder weights and this file
bank = CentroidBank.load(path)
for i in range(5):
    q = encode(params, test.features[i])
    label = centroid_inference(q, bank)
    print(f"sample {test.ids[i]}: centroid {label} (coarse {bank.coarse_labels[label]}), "
          f"true fine class {test.fine[i]}")

# the same answers come back however the queries are batched
labels = [centroid_inference(encode(params, x), bank) for x in test.features[:50]]
print("\nfirst 50 labels:", np.array(labels))
