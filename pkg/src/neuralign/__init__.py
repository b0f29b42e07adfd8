"""Cross-modal alignment engine for neural-signal decoding.

Trains neural-signal encoders against layer-wise visual embedding banks
with a symmetric contrastive objective, then evaluates zero-shot
retrieval, concept accuracy, layer sweeps, and the accuracy-vs-scale
regression.
"""

__version__ = "0.1.0"

from .alignment import (
    AdamWState,
    EpochLog,
    ModelCheckpoint,
    NonFiniteLossError,
    ProjectorParams,
    TrainConfig,
    adamw_step,
    contrastive_loss,
    fit,
    init_projector,
    load_checkpoint,
    project,
    resume,
    save_checkpoint,
)
from .data import (
    EmbeddingBank,
    NeuralDataset,
    PairManifest,
    SynthSpec,
    read_bank,
    read_neural,
    synth_generate,
    write_bank,
    write_neural,
)
from .encoders import (
    EEGProjectParams,
    TSConvParams,
    eegproject_backward,
    eegproject_forward,
    init_params,
    tsconv_backward,
    tsconv_forward,
)
from .evaluation import (
    RegressionResult,
    RetrievalReport,
    SweepResult,
    concept_accuracy,
    evaluate_checkpoint,
    export_embeddings,
    layer_sweep,
    relative_depth,
    retrieve_topk,
    scaling_regression,
    topk_accuracy,
)
from .rng import Rng
