from .cost import (CostReport, cost_report, hydra_layer_weights,  # NOQA
                   standard_layer_weights)
from .gfc import gfc, pack_bias, pack_block_diag  # NOQA
from .hydra import (HydraLayer, HydraModel, MemberAttention,  # NOQA
                    ensemble_predict, fuse, fused_forward_layer, fused_mha,
                    hydra_predict, member_model, member_probs, merge_mlp)
