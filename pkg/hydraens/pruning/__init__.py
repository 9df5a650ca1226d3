from .ablation import (SCORE_KINDS, ablate_perm, ablate_temp,  # NOQA
                       ablated, eval_score, output_block)
from .analysis import layer_divergence, pruned_overlap, pruning_delta  # NOQA
from .budget import PruneBudget, max_removable  # NOQA
from .circuit import CircuitRanking, eval_threads, extract_circuit  # NOQA
from .members import make_members, pool_depth, sample_from_ranking  # NOQA
from .report import ScoreReport, ranking_from_text, ranking_to_text  # NOQA
from .taylor import (HeadScore, mean_gradients, taylor_prune,  # NOQA
                     taylor_scores, tie_order)
