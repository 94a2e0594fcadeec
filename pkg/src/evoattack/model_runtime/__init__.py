from .architecture import (
    BatchNorm,
    Conv,
    Dense,
    Dropout,
    MaxPool,
    ModelSpec,
    ReLU,
    SpecError,
    dense_net,
    table2_cnn,
)
from .dataset import Dataset
from .model import MalformedWeightsError, Model, check_weights, forward, init_weights
from .oracle import QueryOracle, predict_label
from .train import TrainConfig, TrainingDivergedError, loss_and_grads, train_fixture
from .weights_io import (
    BadMagicError,
    TruncatedWeightsError,
    WeightFileError,
    WeightShapeError,
    load_weights,
    save_weights,
)
