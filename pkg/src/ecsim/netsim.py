"""Lock-step synchronous world: epochs, honest mining, adversarial delivery.

Each epoch runs: beacon -> leader draw -> honest leaders mine on their views'
heaviest tips -> the rushing adversary observes everything and emits blocks
plus a delivery plan -> deliveries are applied -> views re-run fork choice ->
the epoch is traced. Messages delivered to a subset of views reach everyone
else by the end of the next epoch through re-broadcast.

View semantics: a view accepts a block into its tipset formation for epoch e
only if the block arrives during epoch e (the cutoff rule); blocks arriving
later still enter the view's DAG, resolve ancestry and weigh chains, but do
not retroactively join that epoch's tipsets. Honest blocks are always
broadcast to every view within their epoch, so honest-mined weight is never
view-split; only targeted adversarial deliveries create (one-epoch) divergent
views, which is exactly the power the model grants the adversary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Optional

import numpy as np

from .chain import (Block, BlockDag, EMPTY_KEY, TieBreak, TipsetKey, fork_choice,
                    tipset_key, validate_block)
from .config import ExperimentConfig
from .election import (ElectionProof, RandomnessOracle, RngStream,
                       draw_leader_series, trial_seed)
from .mitigations import cb_filter_pending

TRACE_SCHEMA = "ecsim.trace.v1"
TRACE_COLUMNS = ("epoch", "H", "Z", "X", "Y", "W_min", "W_max",
                 "n_views_distinct_tips", "adversary_lead", "released_flag",
                 "equivocations_emitted")

# synthesized miner identities, statistical mode: one fresh id per election right
_EPOCH_STRIDE = 1 << 20
_ADV_OFFSET = 1 << 19


def honest_miner_id(epoch: int, k: int) -> int:
    return epoch * _EPOCH_STRIDE + k


def adversary_miner_id(epoch: int, k: int) -> int:
    return epoch * _EPOCH_STRIDE + _ADV_OFFSET + k


class Phase(IntEnum):
    EARLY = 0   # before the (first) cutoff
    LATE = 1    # between cutoffs; the base protocol still accepts it this epoch


class PlanViolatesSynchrony(RuntimeError):
    """An honest-origin block was withheld from some view past its epoch."""


class InternalInvariantError(AssertionError):
    """A model invariant broke mid-run; the trial is aborted."""


@dataclass
class Delivery:
    block: Block
    recipients: Optional[tuple[int, ...]]  # None = all views
    phase: Phase = Phase.EARLY


@dataclass
class DeliveryPlan:
    deliveries: list[Delivery] = field(default_factory=list)


@dataclass
class StrategyDecision:
    new_blocks: list[Block] = field(default_factory=list)
    plan: DeliveryPlan = field(default_factory=DeliveryPlan)
    release: bool = False
    note: str = ""


class NodeView:
    """One honest node's knowledge and its current heaviest tip.

    Views share everything that was broadcast (the world's public_known set);
    a view's own state is only what was delivered to it selectively, plus its
    per-epoch tipset cohorts and fork-choice result.
    """

    __slots__ = ("node_id", "honest", "extra_known", "cohorts", "heaviest",
                 "heaviest_weight", "_touched", "pending", "rejected", "_world")

    def __init__(self, node_id: int, genesis_key: TipsetKey, world: "World"):
        self.node_id = node_id
        self.honest = True
        self.extra_known: set[bytes] = set()   # targeted deliveries not yet public
        # (epoch, parents) -> on-time block ids; longest-chain mode keys per block
        self.cohorts: dict[tuple, set[bytes]] = {}
        self.heaviest = genesis_key
        self.heaviest_weight = 1
        self._touched: set[tuple] = set()
        self.pending: list[Block] = []    # consistent-broadcast phase-1 arrivals
        self.rejected: list[Block] = []   # consistent-broadcast phase-2 arrivals
        self._world = world

    def knows(self, block_id: bytes) -> bool:
        return block_id in self._world.public_known or block_id in self.extra_known

    def check_parents(self, block: Block) -> None:
        if block.parents.block_ids:
            public = self._world.public_known
            for pid in block.parents.block_ids:
                if pid not in public and pid not in self.extra_known:
                    raise InternalInvariantError(
                        f"view {self.node_id}: parent of {block.id.hex()[:12]} unknown")

    def accept_cohort(self, block: Block, lc_mode: bool) -> None:
        """Admit an on-time targeted block into this epoch's tipset formation."""
        cid = (block.epoch, block.parents, block.id) if lc_mode else (block.epoch, block.parents)
        self.cohorts.setdefault(cid, set()).add(block.id)
        self._touched.add(cid)


@dataclass
class EpochRecord:
    epoch: int
    H: int
    Z: int
    X: int
    Y: int
    W_min: int
    W_max: int
    n_views_distinct_tips: int
    adversary_lead: int
    released_flag: int
    equivocations_emitted: int

    def row(self) -> tuple:
        return (self.epoch, self.H, self.Z, self.X, self.Y, self.W_min, self.W_max,
                self.n_views_distinct_tips, self.adversary_lead, self.released_flag,
                self.equivocations_emitted)


@dataclass
class Trace:
    """Full per-run record: epoch rows plus the structures analysis needs."""

    config: ExperimentConfig
    seed: int
    records: list[EpochRecord] = field(default_factory=list)
    view_tips: list[tuple[TipsetKey, ...]] = field(default_factory=list)
    honest_ids: list[tuple[bytes, ...]] = field(default_factory=list)
    events: list[tuple[int, str, str]] = field(default_factory=list)
    dag: Optional[BlockDag] = None

    def array(self, name: str) -> np.ndarray:
        return np.array([getattr(rec, name) for rec in self.records], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.records)

    def csv_lines(self):
        yield f"# schema: {TRACE_SCHEMA}"
        yield ",".join(TRACE_COLUMNS)
        for rec in self.records:
            yield ",".join(str(v) for v in rec.row())


@dataclass
class StepContext:
    """What the rushing adversary sees when it acts inside an epoch."""

    world: "World"
    epoch: int
    proofs: list[ElectionProof]
    honest_blocks: list[Block]
    honest_by_view: dict[int, list[Block]]
    mint_extra: Callable[[int], list[ElectionProof]]

    @property
    def views(self):
        return self.world.views

    @property
    def dag(self) -> BlockDag:
        return self.world.dag


class World:
    """Ground-truth DAG, per-node views, and the epoch loop."""

    def __init__(self, config: ExperimentConfig, trial: int = 0, strategy=None):
        from .adversary import make_strategy  # local import to avoid a cycle

        config.validate()
        self.config = config
        self.trial = trial
        self.seed = trial_seed(config.seed, trial)
        self.oracle = RandomnessOracle(self.seed)
        self.dag = BlockDag()
        self.epoch = 0
        self.cb = config.mitigation == "consistent-broadcast"
        self.lc = config.mitigation == "longest-chain"
        self.policy = TieBreak.ADVERSARY_FAVORING if config.tiebreak == "adversary" else TieBreak.MIN_PROOF

        if config.mode == "statistical":
            self.n_corrupt = 0
            self.target = None
            n_views = config.views
            rng = RngStream(self.seed, "leaders")
            self._series_h, self._series_z = draw_leader_series(
                rng, config.m, config.beta, config.epochs)
        else:
            n = config.participants
            self.n_corrupt = int(config.beta * n)
            self.target = config.m / n
            n_views = n - self.n_corrupt
        self.public_known: set[bytes] = set(self.dag.genesis_key.block_ids)
        self.views = [NodeView(i, self.dag.genesis_key, self) for i in range(n_views)]
        # tipsets formed from broadcast arrivals are identical in every view;
        # they are grouped once here and merged with per-view overlays
        self.shared_cohorts: dict[tuple, set[bytes]] = {}
        self._shared_touched: set[tuple] = set()

        self.strategy = strategy if strategy is not None else make_strategy(config)
        self.rebroadcast_next: list[Block] = []
        self.trace = Trace(config=config, seed=self.seed, dag=self.dag)
        self._prev_w_max = 1
        self._extra_minted = 0

    # -- leader draws ------------------------------------------------------

    def _draw(self, epoch: int):
        if self.config.mode == "statistical":
            h = int(self._series_h[epoch])
            z = int(self._series_z[epoch])
            honest = [(k % len(self.views), honest_miner_id(epoch, k)) for k in range(h)]
            proofs = [self.oracle.prove(adversary_miner_id(epoch, k), epoch) for k in range(z)]
            return honest, proofs
        honest = []
        proofs = []
        for p in range(self.config.participants):
            proof = self.oracle.prove(p, epoch)
            if proof.y <= self.target:
                if p < self.n_corrupt:
                    proofs.append(proof)
                else:
                    honest.append((p - self.n_corrupt, p))
        return honest, proofs

    def _mint_extra(self, count: int) -> list[ElectionProof]:
        """Held-split support: extra adversarial election rights beyond the draw."""
        epoch = self.epoch
        start = _ADV_OFFSET // 2 + self._extra_minted
        out = [self.oracle.prove(adversary_miner_id(epoch, start + i), epoch)
               for i in range(count)]
        self._extra_minted += count
        return out

    # -- delivery ----------------------------------------------------------

    def _accept(self, view: NodeView, block: Block, phase: Phase) -> None:
        """Admit an on-time arrival into the view's epoch processing."""
        if self.cb:
            if phase == Phase.EARLY:
                view.pending.append(block)
            else:
                view.rejected.append(block)
        else:
            view.accept_cohort(block, self.lc)

    def _accept_broadcast(self, block: Block) -> None:
        """On-time broadcast arrival: one shared cohort entry for all views."""
        cid = (block.epoch, block.parents, block.id) if self.lc else (block.epoch, block.parents)
        self.shared_cohorts.setdefault(cid, set()).add(block.id)
        self._shared_touched.add(cid)

    def apply_deliveries(self, deliveries: list[Delivery]) -> None:
        """Apply a batch of deliveries for the current epoch.

        Honest-origin blocks must reach every view within their mint epoch;
        a plan that withholds one raises PlanViolatesSynchrony. Unknown blocks
        are validated on insertion and dropped (with a trace note) if invalid.
        """
        epoch = self.epoch
        n = len(self.views)
        all_ids = tuple(range(n))
        relays: list[tuple[Block, tuple[int, ...]]] = []
        ordered = sorted(deliveries, key=lambda d: (d.block.epoch, d.block.id))
        for d in ordered:
            block = d.block
            if not block.adversarial and block.epoch == epoch and d.recipients is not None:
                if set(d.recipients) != set(all_ids):
                    raise PlanViolatesSynchrony(
                        f"honest block {block.id.hex()[:12]} withheld from some view")
            if block.id not in self.dag.blocks:
                verdict = validate_block(block, self.dag, self.oracle, self.target)
                if not verdict:
                    self.trace.events.append((epoch, "invalid-dropped", verdict.reason or ""))
                    continue
                self.dag.add(block)
            on_time = block.epoch == epoch
            if d.recipients is None:
                # broadcast: known to every view at once
                if block.id not in self.public_known:
                    self.views[0].check_parents(block)
                    self.public_known.add(block.id)
                if on_time:
                    if self.cb:
                        for view in self.views:
                            self._accept(view, block, d.phase)
                    else:
                        self._accept_broadcast(block)
                continue
            recipients = tuple(dict.fromkeys(d.recipients))
            for vid in recipients:
                view = self.views[vid]
                if block.id not in self.public_known and block.id not in view.extra_known:
                    view.check_parents(block)
                    view.extra_known.add(block.id)
                if on_time:
                    self._accept(view, block, d.phase)
            self.rebroadcast_next.append(block)
            if self.cb and on_time and d.phase == Phase.EARLY and len(recipients) < n:
                others = tuple(v for v in all_ids if v not in set(recipients))
                relays.append((block, others))
        for block, others in relays:
            # consistent broadcast: honest re-broadcast lands between the cutoffs
            self.public_known.add(block.id)
            for vid in others:
                self._accept(self.views[vid], block, Phase.LATE)

    def apply_delivery(self, plan: DeliveryPlan) -> None:
        self.apply_deliveries(plan.deliveries)

    def _cb_finalize(self) -> None:
        for view in self.views:
            accepted = cb_filter_pending(view.pending, view.rejected)
            for block in accepted:
                view.accept_cohort(block, self.lc)
            view.pending = []
            view.rejected = []

    def _refresh_views(self) -> None:
        """Per-view fork choice over this epoch's tipsets, then reset them.

        Shared (broadcast-only) cohorts become one candidate key computed
        once; a view that also received targeted blocks for the same cohort
        sees the merged tipset instead.
        """
        dag = self.dag
        policy = self.policy
        shared_keys: dict[tuple, TipsetKey] = {}
        for cid in sorted(self._shared_touched, key=lambda c: (c[0], c[1])):
            shared_keys[cid] = TipsetKey(tuple(sorted(self.shared_cohorts[cid])))
        for view in self.views:
            touched = view._touched
            if not touched and not shared_keys:
                continue
            candidates = [view.heaviest]
            for cid, key in shared_keys.items():
                if cid not in touched:
                    candidates.append(key)
            for cid in sorted(touched, key=lambda c: (c[0], c[1])):
                members = set(view.cohorts[cid])
                shared = self.shared_cohorts.get(cid)
                if shared:
                    members |= shared
                candidates.append(TipsetKey(tuple(sorted(members))))
            touched.clear()
            view.cohorts.clear()
            best = fork_choice(dag, candidates, policy)
            view.heaviest = best
            view.heaviest_weight = dag.weight(best)
        self._shared_touched.clear()
        self.shared_cohorts.clear()

    def snapshot_bounds(self) -> tuple[int, int]:
        weights = [v.heaviest_weight for v in self.views]
        return min(weights), max(weights)

    # -- the epoch loop ----------------------------------------------------

    def run_epoch(self) -> EpochRecord:
        self.epoch += 1
        epoch = self.epoch
        self._extra_minted = 0

        # re-broadcast: everything partially delivered last epoch reaches all
        if self.rebroadcast_next:
            for block in self.rebroadcast_next:
                self.public_known.add(block.id)
            self.rebroadcast_next = []
            for view in self.views:
                view.extra_known.clear()

        honest_assign, proofs = self._draw(epoch)
        honest_blocks: list[Block] = []
        honest_by_view: dict[int, list[Block]] = {}
        for view_id, miner in honest_assign:
            view = self.views[view_id]
            proof = self.oracle.prove(miner, epoch)
            block = Block(epoch=epoch, miner=miner, parents=view.heaviest,
                          proof=proof, adversarial=False, equivocation_tag=0)
            verdict = validate_block(block, self.dag, self.oracle, self.target)
            if not verdict:
                raise InternalInvariantError(f"honest block failed validation: {verdict.reason}")
            self.dag.add(block)
            honest_blocks.append(block)
            honest_by_view.setdefault(view_id, []).append(block)

        ctx = StepContext(world=self, epoch=epoch, proofs=proofs,
                          honest_blocks=honest_blocks, honest_by_view=honest_by_view,
                          mint_extra=self._mint_extra)
        decision = self.strategy.step(ctx)
        for block in decision.new_blocks:
            verdict = validate_block(block, self.dag, self.oracle, self.target)
            if not verdict:
                raise InternalInvariantError(f"adversarial block failed validation: {verdict.reason}")
            self.dag.add(block)
        if decision.note:
            self.trace.events.append((epoch, "strategy", decision.note))

        deliveries = [Delivery(b, None, Phase.EARLY) for b in honest_blocks]
        deliveries.extend(decision.plan.deliveries)
        self.apply_deliveries(deliveries)
        if self.cb:
            self._cb_finalize()
        self._refresh_views()
        if decision.release:
            self.trace.events.append((epoch, "release", decision.note))

        w_min, w_max = self.snapshot_bounds()
        if not (w_min <= w_max):
            raise InternalInvariantError("weight bounds out of order")
        if w_min < self._prev_w_max:
            raise InternalInvariantError(
                f"epoch {epoch}: W_min {w_min} dropped below last W_max {self._prev_w_max}")
        self._prev_w_max = w_max

        h = len(honest_blocks)
        z_eff = len(proofs) + self._extra_minted
        delivered_ids = {d.block.id for d in deliveries}
        equivocations = sum(
            1 for b in decision.new_blocks
            if b.equivocation_tag > 0 and b.id in delivered_ids)
        lead = self.strategy.update_lead(self)
        record = EpochRecord(
            epoch=epoch, H=h, Z=z_eff,
            X=1 if h >= 1 else 0, Y=1 if h == 1 else 0,
            W_min=w_min, W_max=w_max,
            n_views_distinct_tips=len({v.heaviest for v in self.views}),
            adversary_lead=lead,
            released_flag=1 if decision.release else 0,
            equivocations_emitted=equivocations,
        )
        self.trace.records.append(record)
        self.trace.view_tips.append(tuple(v.heaviest for v in self.views))
        self.trace.honest_ids.append(tuple(b.id for b in honest_blocks))
        return record


def run_epoch(world: World) -> EpochRecord:
    return world.run_epoch()


def snapshot_bounds(world: World) -> tuple[int, int]:
    return world.snapshot_bounds()


def run_trial(config: ExperimentConfig, trial: int = 0,
              stop_check: Optional[Callable[[World], bool]] = None) -> Trace:
    """Run one seeded trial for config.epochs epochs (or until stop_check)."""
    world = World(config, trial)
    for _ in range(config.epochs):
        world.run_epoch()
        if stop_check is not None and stop_check(world):
            break
    return world.trace
