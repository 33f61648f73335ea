"""Protocol countermeasures: consistent broadcast and the longest-chain variant.

Consistent broadcast splits each epoch into three periods with two cutoffs:
blocks arriving before the first cutoff are *pending*, blocks arriving between
the cutoffs are *rejected*, and after the second cutoff any election proof
seen with two or more distinct block ids across pending and rejected is
expunged from pending. Only the surviving pending blocks feed tipset
formation. Detection is purely local to the node and the epoch; there is no
global equivocation registry. Because honest nodes relay what they receive,
a block delivered to one node before the first cutoff reaches the others
between the cutoffs, which is what makes the filter bite. The residual
channel remains: a block delivered to only some nodes in the first period
still splits views for one epoch.

The longest-chain variant removes tipsets entirely: one parent per block,
one block per leader, weight equals chain length.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from .chain import Block


@dataclass
class CbNodeState:
    """Per-epoch pending/rejected/accepted sets of one consistent-broadcast node."""

    pending: list[Block] = field(default_factory=list)
    rejected: list[Block] = field(default_factory=list)
    accepted: list[Block] = field(default_factory=list)


# phase names for cb_epoch_step arrivals
BEFORE_FIRST_CUTOFF = "before-first-cutoff"
BETWEEN_CUTOFFS = "between-cutoffs"


def cb_filter_pending(pending: Iterable[Block], rejected: Iterable[Block]) -> list[Block]:
    """Drop every pending block whose proof appears with >= 2 distinct ids."""
    ids_by_proof: dict[tuple, set[bytes]] = {}
    pending = list(pending)
    for block in list(pending) + list(rejected):
        ids_by_proof.setdefault(block.proof.proof_key(), set()).add(block.id)
    return [b for b in pending if len(ids_by_proof[b.proof.proof_key()]) == 1]


def cb_epoch_step(node: CbNodeState, arrivals: Iterable[tuple[Block, str]]) -> list[Block]:
    """One node's epoch under consistent broadcast.

    Arrivals are (block, phase) pairs; the returned blocks are the node's
    tipset inputs for next epoch's parent selection.
    """
    for block, phase in arrivals:
        if phase == BEFORE_FIRST_CUTOFF:
            node.pending.append(block)
        elif phase == BETWEEN_CUTOFFS:
            node.rejected.append(block)
        else:
            raise ValueError(f"unknown phase {phase!r}")
    node.accepted = cb_filter_pending(node.pending, node.rejected)
    return node.accepted


def run_with_mitigation(config, mitigation: str = "none", trial: int = 0,
                        stop_check=None):
    """Same simulation loop with the node step and fork choice swapped."""
    from .config import with_updates
    from .netsim import run_trial

    return run_trial(with_updates(config, mitigation=mitigation), trial,
                     stop_check=stop_check)
