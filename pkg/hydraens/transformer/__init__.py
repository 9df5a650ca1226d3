from .config import TransformerConfig  # NOQA
from .layers import (attention_heads, check_tokens, forward_layer,  # NOQA
                     forward_model, head_outputs, mha, predict_proba)
from .model import (HeadMask, LayerWeights, Model, apply_mask,  # NOQA
                    init_model, slice_layer)
from .train import loss_and_grads, train_steps  # NOQA
