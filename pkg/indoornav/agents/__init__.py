from .model import UNIFIED_HEAD, ModelPolicy, PolicyModel, select_action, stack_frames
from .train import (
    DenseTargetSampler,
    LogRow,
    SparseTargetSampler,
    TrainLog,
    dense_pool,
    finetune,
    sparse_assignments,
    train,
    unified_eval,
)
