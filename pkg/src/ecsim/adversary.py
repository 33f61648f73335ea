"""Adversary strategies: honest baseline, private attack, and the n-split attack.

The n-split adversary equivocates: it copies one of its elected blocks once
per view (same election proof, distinct equivocation tags) and delivers copy
j to view j only, so that next epoch's honest blocks sit on pairwise
different parent tipsets. Two maintenance variants:

* tie-break variant: the copies form standalone tipsets on a reserved
  honest-free parent key of matching weight, tie the honest singletons, and
  win the adversary-favoring tie-break, so each public chain grows by one
  block per successful epoch (all of them adversarial copies);
* no-tie-break variant: the copies join each view's honest tipset (and
  leaderless views get tipsets of two copies with distinct proofs), so each
  public chain grows by two per successful epoch and no tie-break power is
  needed.

When the adversary has no elected leader in an epoch with honest blocks the
split degrades (the views re-merge through the deterministic tie-breaker) and
is re-established at the next opportunity by joining per-view copies to the
heaviest honest tipset. In parallel, every elected proof also extends a
private chain that contains no honest block; it is re-forked from the public
tip whenever it falls behind, and released to every view once the attack is
committed (the wave's lead reached L0), the lead is positive, and the fork
point is more than tau epochs old. Released tips are always minted in the
release epoch so they arrive in time to be mined on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .chain import Block, BlockDag, TipsetKey, tipset_key
from .config import ExperimentConfig
from .election import ElectionProof
from .netsim import Delivery, DeliveryPlan, Phase, StepContext, StrategyDecision


@dataclass
class AdversaryState:
    strategy: str
    private_tip: Optional[TipsetKey] = None
    private_weight: int = 0
    unreleased: list[Block] = field(default_factory=list)
    lead: int = 0
    peak_lead: int = 0               # best lead of the current wave
    attack_epoch: Optional[int] = None   # first epoch the wave's lead reached L0
    fork_epoch: int = 0              # private chain fork point (wave origin)
    released: bool = False
    last_private_epoch: int = -1
    equivocations: int = 0           # cumulative copies emitted
    degraded_epochs: int = 0         # splits lost to an empty proof budget


class NullStrategy:
    """Honest baseline: mine every elected block on the public tip, broadcast."""

    name = "null"

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.state = AdversaryState(strategy=self.name)

    def step(self, ctx: StepContext) -> StrategyDecision:
        if not ctx.proofs:
            return StrategyDecision()
        parent = max(ctx.views, key=lambda v: (v.heaviest_weight, v.heaviest)).heaviest
        blocks = [Block(ctx.epoch, p.miner, parent, p, adversarial=True) for p in ctx.proofs]
        plan = DeliveryPlan([Delivery(b, None, Phase.EARLY) for b in blocks])
        return StrategyDecision(new_blocks=blocks, plan=plan)

    def update_lead(self, world) -> int:
        return 0


class _PrivateChainStrategy:
    """Shared private-chain bookkeeping: extension, re-fork, lead, release."""

    name = "private"

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.state = AdversaryState(strategy=self.name)

    # -- private chain -----------------------------------------------------

    def _ensure_fork(self, dag: BlockDag) -> None:
        if self.state.private_tip is None:
            self.state.private_tip = dag.genesis_key
            self.state.private_weight = 1
            self.state.fork_epoch = 0

    def _extend_private(self, ctx: StepContext, proofs: list[ElectionProof]) -> list[Block]:
        st = self.state
        if not proofs:
            return []
        if ctx.world.lc:
            proofs = proofs[:1]  # single-parent chains grow one block per epoch
        blocks = [Block(ctx.epoch, p.miner, st.private_tip, p, adversarial=True,
                        equivocation_tag=0) for p in proofs]
        st.private_tip = tipset_key(blocks)
        st.private_weight += len(blocks)
        st.unreleased.extend(blocks)
        st.last_private_epoch = ctx.epoch
        return blocks

    def _reachable(self, ctx: StepContext) -> dict[int, int]:
        """Weight each view's own tipsets can reach this epoch (honest only)."""
        reach = {}
        for view in ctx.views:
            k = len(ctx.honest_by_view.get(view.node_id, ()))
            if ctx.world.lc:
                k = min(k, 1)
            reach[view.node_id] = view.heaviest_weight + k
        return reach

    def _try_release(self, ctx: StepContext, prospective_public: int) -> Optional[StrategyDecision]:
        st = self.state
        cfg = self.config
        lead_now = st.private_weight - prospective_public
        if (st.attack_epoch is not None and lead_now > 0 and not st.released
                and ctx.epoch - st.fork_epoch > cfg.tau
                and st.last_private_epoch == ctx.epoch and st.unreleased):
            plan = DeliveryPlan([Delivery(b, None, Phase.EARLY) for b in st.unreleased])
            st.unreleased = []
            st.released = True
            return StrategyDecision(new_blocks=[], plan=plan, release=True,
                                    note=f"release lead={lead_now}")
        return None

    def update_lead(self, world) -> int:
        st = self.state
        if st.private_tip is None:
            return 0
        w_min, w_max = world.snapshot_bounds()
        st.lead = st.private_weight - w_max
        st.peak_lead = max(st.peak_lead, st.lead)
        if st.attack_epoch is None and st.lead >= self.config.lead_bootstrap:
            st.attack_epoch = world.epoch
        if st.lead < 0 and not st.released:
            # wave over: re-fork the private chain from the public tip
            best = max(world.views, key=lambda v: (v.heaviest_weight, v.heaviest))
            st.private_tip = best.heaviest
            st.private_weight = best.heaviest_weight
            st.fork_epoch = world.epoch
            st.unreleased = []
            st.peak_lead = 0
            st.attack_epoch = None
            st.lead = 0
        return st.lead

    # -- default step: pure private attack ---------------------------------

    def step(self, ctx: StepContext) -> StrategyDecision:
        st = self.state
        self._ensure_fork(ctx.dag)
        if st.released:
            return StrategyDecision()
        blocks = self._extend_private(ctx, list(ctx.proofs))
        reach = self._reachable(ctx)
        released = self._try_release(ctx, max(reach.values()))
        if released is not None:
            released.new_blocks = blocks + released.new_blocks
            return released
        return StrategyDecision(new_blocks=blocks)


class PrivateStrategy(_PrivateChainStrategy):
    name = "private"


class NSplitStrategy(_PrivateChainStrategy):
    """The n-split attack; `tie_break` picks the Fig. 4c vs Fig. 4b variant."""

    def __init__(self, config: ExperimentConfig, tie_break: bool):
        super().__init__(config)
        self.tie_break = tie_break
        self.name = "nsplit-tiebreak" if tie_break else "nsplit-notiebreak"
        self.state.strategy = self.name
        # honest-free parent keys usable for standalone copy tipsets
        self._pool: dict[TipsetKey, int] = {}

    # -- copy construction helpers ------------------------------------------

    def _copies(self, epoch: int, proofs: list[ElectionProof], parents: TipsetKey,
                view_id: int, count: int) -> list[Block]:
        tag = view_id + 1
        return [Block(epoch, proofs[i].miner, parents, proofs[i], adversarial=True,
                      equivocation_tag=tag) for i in range(count)]

    def _held_topup(self, ctx: StepContext, proofs: list[ElectionProof],
                    needed: int) -> list[ElectionProof]:
        if self.config.held_split and len(proofs) < needed:
            proofs = proofs + ctx.mint_extra(needed - len(proofs))
        return proofs

    def _prune_pool(self, floor: int) -> None:
        self._pool = {k: w for k, w in self._pool.items() if w >= floor}

    # -- the per-epoch decision ----------------------------------------------

    def step(self, ctx: StepContext) -> StrategyDecision:
        st = self.state
        cfg = self.config
        self._ensure_fork(ctx.dag)
        if st.released:
            return StrategyDecision()

        epoch = ctx.epoch
        views = ctx.views
        lc = ctx.world.lc
        reach = self._reachable(ctx)
        need = max(reach.values())
        h = len(ctx.honest_blocks)
        leader_views = sorted(ctx.honest_by_view)
        k_max = max((len(ctx.honest_by_view[v]) for v in leader_views), default=0)

        proofs = list(ctx.proofs)
        if h >= 1:
            budget_wanted = 1 if (self.tie_break or lc) else k_max + 1
            proofs = self._held_topup(ctx, proofs, budget_wanted)
        z = len(proofs)

        private_blocks = self._extend_private(ctx, proofs)

        # releasing supersedes splitting: the fresh private tip must stay the
        # only use of this epoch's proofs so it survives equivocation filters
        released = self._try_release(ctx, need if h >= 1 else max(
            v.heaviest_weight for v in views))
        if released is not None:
            released.new_blocks = private_blocks + released.new_blocks
            return released

        if h == 0 or z == 0:
            if h >= 1 and z == 0:
                st.degraded_epochs += 1
                return StrategyDecision(new_blocks=private_blocks,
                                        note="InsufficientLeaders: split degrades")
            return StrategyDecision(new_blocks=private_blocks)

        blocks: list[Block] = list(private_blocks)
        deliveries: list[Delivery] = []

        if self.tie_break or lc:
            decision_note = self._step_tiebreak(ctx, proofs, reach, need, blocks, deliveries)
        else:
            decision_note = self._step_join(ctx, proofs, reach, need, blocks, deliveries)

        st.equivocations += sum(1 for b in blocks if b.equivocation_tag > 0)
        return StrategyDecision(new_blocks=blocks, plan=DeliveryPlan(deliveries),
                                note=decision_note)

    def _step_tiebreak(self, ctx, proofs, reach, need, blocks, deliveries) -> str:
        """Standalone copy tipsets on a reserved parent key (growth +1)."""
        epoch = ctx.epoch
        z = len(proofs)
        today_parents = {b.parents for b in ctx.honest_blocks}
        usable = [(w, k) for k, w in self._pool.items()
                  if k not in today_parents and 1 <= need - w <= z]
        new_pool: dict[TipsetKey, int] = {}
        if usable:
            w_f, f_key = sorted(usable, key=lambda t: (-t[0], t[1]))[0]
            size = need - w_f
            del self._pool[f_key]
            for view in ctx.views:
                rail = self._copies(epoch, proofs, f_key, view.node_id, size)
                blocks.extend(rail)
                for b in rail:
                    deliveries.append(Delivery(b, (view.node_id,), Phase.EARLY))
                new_pool[tipset_key(rail)] = need
            # orphaned honest tipsets of matching weight also serve as parents
            for vid, hb in ctx.honest_by_view.items():
                if reach[vid] == need:
                    new_pool[tipset_key(hb)] = need
            note = f"solo-rails size={size}"
        else:
            # join the heaviest honest tipset with one copy per view (re-init)
            x = self._heaviest_leader(ctx, reach)
            base = ctx.views[x].heaviest
            hx = ctx.honest_by_view[x]
            for view in ctx.views:
                copy = self._copies(epoch, proofs, base, view.node_id, 1)[0]
                blocks.append(copy)
                deliveries.append(Delivery(copy, (view.node_id,), Phase.EARLY))
                if ctx.world.lc:
                    new_pool[copy.key()] = ctx.dag.weight(base) + 1
                else:
                    new_pool[tipset_key(hx + [copy])] = reach[x] + 1
            note = "join-split"
        self._pool.update(new_pool)
        self._prune_pool(need - 2)
        return note

    def _step_join(self, ctx, proofs, reach, need, blocks, deliveries) -> str:
        """Copies join honest tipsets; every view ends one above `need` (+2)."""
        epoch = ctx.epoch
        z = len(proofs)
        target = need + 1
        topups = {view.node_id: target - reach[view.node_id] for view in ctx.views}
        if z >= max(topups.values()):
            for view in ctx.views:
                count = topups[view.node_id]
                if count == 0:
                    continue
                copies = self._copies(epoch, proofs, view.heaviest, view.node_id, count)
                blocks.extend(copies)
                for b in copies:
                    deliveries.append(Delivery(b, (view.node_id,), Phase.EARLY))
            return "full-split"
        # not enough distinct proofs: fold every view onto one joined rail
        x = self._heaviest_leader(ctx, reach)
        copy = self._copies(epoch, proofs, ctx.views[x].heaviest, x, 1)[0]
        blocks.append(copy)
        deliveries.append(Delivery(copy, None, Phase.EARLY))
        return "merge-join"

    @staticmethod
    def _heaviest_leader(ctx: StepContext, reach: dict[int, int]) -> int:
        leaders = sorted(ctx.honest_by_view)
        return max(leaders, key=lambda v: (reach[v], -v))


class CbTargetedStrategy(_PrivateChainStrategy):
    """Best response under consistent broadcast: no equivocation, first-period
    delivery of real blocks to half the views, plus the private chain."""

    name = "cb-targeted"

    def step(self, ctx: StepContext) -> StrategyDecision:
        st = self.state
        self._ensure_fork(ctx.dag)
        if st.released:
            return StrategyDecision()
        proofs = list(ctx.proofs)
        private_blocks = self._extend_private(ctx, proofs)
        reach = self._reachable(ctx)
        released = self._try_release(ctx, max(reach.values()))
        if released is not None:
            released.new_blocks = private_blocks + released.new_blocks
            return released
        blocks = list(private_blocks)
        deliveries: list[Delivery] = []
        if proofs:
            half = tuple(range(len(ctx.views) // 2 or 1))
            parent = ctx.views[half[0]].heaviest
            probe = Block(ctx.epoch, proofs[0].miner, parent, proofs[0],
                          adversarial=True, equivocation_tag=1)
            blocks.append(probe)
            deliveries.append(Delivery(probe, half, Phase.EARLY))
        return StrategyDecision(new_blocks=blocks, plan=DeliveryPlan(deliveries))


def make_strategy(config: ExperimentConfig):
    if config.strategy == "null":
        return NullStrategy(config)
    if config.strategy == "private":
        return PrivateStrategy(config)
    if config.strategy == "nsplit-tiebreak":
        return NSplitStrategy(config, tie_break=True)
    if config.strategy == "nsplit-notiebreak":
        return NSplitStrategy(config, tie_break=False)
    if config.strategy == "cb-targeted":
        return CbTargetedStrategy(config)
    raise ValueError(f"unknown strategy {config.strategy!r}")


# spec-shaped functional entry points over the strategy objects

def step_null(strategy: NullStrategy, ctx: StepContext) -> StrategyDecision:
    return strategy.step(ctx)


def step_private(strategy: PrivateStrategy, ctx: StepContext) -> StrategyDecision:
    return strategy.step(ctx)


def step_nsplit(strategy: NSplitStrategy, ctx: StepContext) -> StrategyDecision:
    return strategy.step(ctx)


def update_lead(strategy, world) -> int:
    return strategy.update_lead(world)
