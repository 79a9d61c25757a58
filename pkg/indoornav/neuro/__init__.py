from .checkpoint import CHECKPOINT_VERSION, load_checkpoint, save_checkpoint
from .gradcheck import numeric_gradient, relative_error
from .layers import (
    AvgPool2D,
    Concat,
    Conv2D,
    Dense,
    LSTMCell,
    LSTMState,
    ReLU,
    check_finite,
    log_softmax,
    softmax,
)
from .loss import A3CLoss, a3c_loss, discounted_returns
from .network import (
    NUM_ACTIONS,
    ForwardCache,
    LayerSpec,
    NetworkOutput,
    SiameseActorCritic,
)
from .optim import ParameterStore, RMSProp, global_norm
