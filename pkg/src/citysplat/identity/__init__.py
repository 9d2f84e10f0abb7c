from citysplat.identity.compositing import CompositeWeights, precompute_weights, project_covariances
from citysplat.identity.knn import knn_graph
from citysplat.identity.losses import Grads, loss_2d, loss_3d
from citysplat.identity.scene import GaussianScene, load_identity, save_identity
from citysplat.identity.train import (
    TrainConfig,
    TrainingDiverged,
    TrainResult,
    TrainView,
    assign_labels,
    build_vocab,
    encode_labels,
    mean_neighbor_kl,
    predict_pixels,
    rho,
    substream,
    total_loss,
    train,
)

__all__ = [
    "CompositeWeights", "precompute_weights", "project_covariances", "knn_graph", "Grads",
    "loss_2d", "loss_3d", "GaussianScene", "load_identity", "save_identity", "TrainConfig",
    "TrainingDiverged", "TrainResult", "TrainView", "assign_labels", "build_vocab",
    "encode_labels", "mean_neighbor_kl", "predict_pixels", "rho", "substream", "total_loss",
    "train",
]
