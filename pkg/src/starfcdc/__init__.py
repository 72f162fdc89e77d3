"""Fine-grained category discovery from coarse labels with KL-weighted neighborhood contrast."""

from .config import ConfigError, StarConfig, rng_stream
from .data import Dataset, DatasetManifest, generate_synthetic, load_dataset, save_dataset
from .encoder import EncoderParams, encode, init_encoder, load_checkpoint, save_checkpoint
from .inference import (CentroidBank, build_centroids, centroid_inference, centroid_predict,
                        clustering_inference, kmeans)
from .metrics import EvalReport, ari, evaluate_labels, hungarian_accuracy, nmi, silhouette
from .neighborhood import MomentumQueue, alpha_for_epoch, rank_weights, retrieve_neighbors
from .objective import LossBreakdown, batch_objective, compute_gradients, star_loss_l2
from .training import fit, pretrain

__version__ = "0.1.0"
