from .probe import ProbeReport, assumption_probe  # NOQA
from .quadratic import (REGIMES, GapReport, QuadraticLossPair,  # NOQA
                        gap_table, gap_table_from_text, make_pair,
                        proposition1_trial, sweep, taylor_gap_predictor)
