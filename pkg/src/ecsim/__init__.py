"""ecsim: a deterministic simulator and analysis toolkit for tipset-based
heaviest-chain consensus, its equivocation attacks, and their mitigations."""

from .analysis import (LedgerCheck, LedgerChecker, NakamotoReport, SeriesBundle,
                       check_ledger, check_lemma1, check_min_growth,
                       check_weight_bounds, derive_series, detect_nakamoto,
                       run_checked_trial, solve_threshold, sweep, wilson_ci)
from .chain import (Block, BlockDag, ChainView, EMPTY_KEY, TieBreak, TipsetKey,
                    chain_of, fork_choice, genesis_block, tipset_key,
                    validate_block, weight)
from .config import ExperimentConfig, load_config, load_grid
from .election import (ElectionProof, RandomnessOracle, RngStream, beacon,
                       draw_leaders, flat_election, vrf_prove, vrf_verify)
from .netsim import (Delivery, DeliveryPlan, EpochRecord, NodeView, Phase,
                     StrategyDecision, Trace, World, run_epoch, run_trial,
                     snapshot_bounds)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
