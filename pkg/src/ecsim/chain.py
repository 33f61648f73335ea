"""Tipset chain data model: blocks, tipsets, the block DAG, weight and fork choice.

The chain unit is a *tipset*: a non-empty set of blocks that share one epoch and
one parent tipset. A chain is the lineage of tipsets from genesis to a tip, and
its weight is the total number of blocks along that lineage (genesis counts 1).
Ties between equal-weight tips are broken by a pluggable deterministic policy.

Canonical block serialization (used for content ids, all integers big-endian):

    epoch            u64
    miner            u64
    equivocation_tag u64
    parent ids       concatenation of the parent key's 32-byte ids, ascending
    proof            miner u64 | epoch u64 | y_bits u64 | token (16 bytes)

The 32-byte block id is BLAKE2b over b"ec/block/v1" plus that layout, so traces
are reproducible bit-exactly across implementations.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Optional

from .election import ElectionProof

ID_BYTES = 32
_BLOCK_DOMAIN = b"ec/block/v1"


class TipsetError(ValueError):
    """A set of blocks violates one of the tipset formation rules."""


class EmptyTipset(TipsetError):
    pass


class MixedEpoch(TipsetError):
    pass


class MixedParents(TipsetError):
    pass


class DuplicateMiner(TipsetError):
    pass


class UnknownTipset(KeyError):
    """A tipset key references blocks that are not in the DAG."""


class EmptyViews(ValueError):
    """fork_choice was called with no candidate tips."""


class TipsetKey:
    """Canonical identifier of a tipset: its block ids in ascending order.

    Construction through tipset_key() enforces the tipset rules; the raw
    constructor is reserved for keys whose blocks are known to be coherent
    (and for the empty genesis-parent sentinel). Keys are immutable, ordered
    lexicographically, and hash-cached (they index every hot dictionary).
    """

    __slots__ = ("block_ids", "_hash")

    def __init__(self, block_ids: tuple[bytes, ...]):
        object.__setattr__(self, "block_ids", tuple(block_ids))
        object.__setattr__(self, "_hash", hash(self.block_ids))

    def __setattr__(self, name, value):
        raise AttributeError("TipsetKey is immutable")

    def __hash__(self) -> int:
        return self._hash

    def __eq__(self, other) -> bool:
        return isinstance(other, TipsetKey) and self.block_ids == other.block_ids

    def __lt__(self, other) -> bool:
        return self.block_ids < other.block_ids

    def __le__(self, other) -> bool:
        return self.block_ids <= other.block_ids

    def __gt__(self, other) -> bool:
        return self.block_ids > other.block_ids

    def __ge__(self, other) -> bool:
        return self.block_ids >= other.block_ids

    def __len__(self) -> int:
        return len(self.block_ids)

    def __iter__(self) -> Iterator[bytes]:
        return iter(self.block_ids)

    def __repr__(self) -> str:
        return f"TipsetKey({self.hex()})"

    def hex(self) -> str:
        return "+".join(b.hex()[:12] for b in self.block_ids)


EMPTY_KEY = TipsetKey(())


def _serialize_block(epoch: int, miner: int, parents: TipsetKey,
                     proof: ElectionProof, equivocation_tag: int) -> bytes:
    head = epoch.to_bytes(8, "big") + miner.to_bytes(8, "big") + equivocation_tag.to_bytes(8, "big")
    return _BLOCK_DOMAIN + head + b"".join(parents.block_ids) + proof.to_bytes()


@dataclass(frozen=True)
class Block:
    """One mined block. Identity is a digest of the canonical serialization,
    so equivocating copies (same proof, different equivocation_tag) get
    distinct ids. Honest blocks always carry equivocation_tag 0.
    """

    epoch: int
    miner: int
    parents: TipsetKey
    proof: ElectionProof
    adversarial: bool = False
    equivocation_tag: int = 0
    id: bytes = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.epoch > 0 and len(self.parents) == 0:
            raise ValueError("non-genesis block needs a non-empty parent key")
        digest = hashlib.blake2b(
            _serialize_block(self.epoch, self.miner, self.parents,
                             self.proof, self.equivocation_tag),
            digest_size=ID_BYTES,
        ).digest()
        object.__setattr__(self, "id", digest)

    def key(self) -> TipsetKey:
        """Key of the singleton tipset holding just this block."""
        return TipsetKey((self.id,))


def genesis_block() -> Block:
    """The protocol constant: epoch 0, empty parents, null proof."""
    return Block(epoch=0, miner=0, parents=EMPTY_KEY, proof=ElectionProof(0, 0, 0, b"\x00" * 16))


def tipset_key(blocks: Iterable[Block]) -> TipsetKey:
    """Canonical key for a set of blocks, checking the tipset rules.

    Raises EmptyTipset / MixedEpoch / MixedParents / DuplicateMiner; the result
    is invariant under any permutation of the input.
    """
    blocks = list(blocks)
    if not blocks:
        raise EmptyTipset("a tipset must contain at least one block")
    epoch = blocks[0].epoch
    parents = blocks[0].parents
    miners = set()
    for b in blocks:
        if b.epoch != epoch:
            raise MixedEpoch(f"blocks at epochs {epoch} and {b.epoch} cannot share a tipset")
        if b.parents != parents:
            raise MixedParents("blocks with different parent keys cannot share a tipset")
        if b.miner in miners:
            raise DuplicateMiner(f"two blocks by miner {b.miner} in one tipset")
        miners.add(b.miner)
    return TipsetKey(tuple(sorted(b.id for b in blocks)))


@dataclass(frozen=True)
class ChainEntry:
    epoch: int
    key: TipsetKey
    size: int


@dataclass
class ChainView:
    """A chain from genesis to a tip as the ordered list of its tipsets.

    Empty epochs are represented implicitly (skipped); weight is the sum of
    the listed tipset sizes.
    """

    tipsets: list[ChainEntry]

    @property
    def weight(self) -> int:
        return sum(t.size for t in self.tipsets)

    @property
    def last(self) -> ChainEntry:
        return self.tipsets[-1]

    def __len__(self) -> int:
        return len(self.tipsets)


# validate_block outcomes; Invalid(reason) is a value, not an exception.
BAD_ELECTION = "BadElection"
MISSING_PARENT = "MissingParent"
PARENTS_NOT_TIPSET = "ParentsNotTipset"


@dataclass(frozen=True)
class Validity:
    ok: bool
    reason: Optional[str] = None

    def __bool__(self) -> bool:
        return self.ok


VALID = Validity(True)


def winning_post_valid(block: Block) -> bool:
    """Storage-proof stub: the simulated miners always maintain their pledge."""
    return True


class BlockDag:
    """Append-only store of validated blocks with parent edges.

    Parents are always stored before children, so every stored block's full
    ancestry resolves and validation never recurses into unknown territory.
    Weights of tipset keys are memoized; the DAG is effectively immutable
    between epochs and safe to share read-only.
    """

    def __init__(self, genesis: Optional[Block] = None):
        self.genesis = genesis if genesis is not None else genesis_block()
        if self.genesis.epoch != 0 or len(self.genesis.parents) != 0:
            raise ValueError("genesis must have epoch 0 and empty parents")
        self.blocks: dict[bytes, Block] = {self.genesis.id: self.genesis}
        self.children: dict[TipsetKey, set[bytes]] = {}
        self.genesis_key = TipsetKey((self.genesis.id,))
        self._weights: dict[TipsetKey, int] = {EMPTY_KEY: 0, self.genesis_key: 1}
        self._entries: dict[TipsetKey, tuple[int, TipsetKey]] = {self.genesis_key: (0, EMPTY_KEY)}
        self._adversarial: dict[TipsetKey, bool] = {}

    def __contains__(self, block_id: bytes) -> bool:
        return block_id in self.blocks

    def __len__(self) -> int:
        return len(self.blocks)

    def get(self, block_id: bytes) -> Block:
        return self.blocks[block_id]

    def add(self, block: Block) -> None:
        """Store a block whose validation already passed. Parents must be present."""
        if block.id in self.blocks:
            return
        for pid in block.parents:
            if pid not in self.blocks:
                raise UnknownTipset(f"parent {pid.hex()[:12]} not stored")
        self.blocks[block.id] = block
        self.children.setdefault(block.parents, set()).add(block.id)

    def resolves(self, key: TipsetKey) -> bool:
        return all(bid in self.blocks for bid in key)

    def entry(self, key: TipsetKey) -> tuple[int, TipsetKey]:
        """(epoch, parent key) of a tipset key, cached."""
        got = self._entries.get(key)
        if got is None:
            try:
                block = self.blocks[key.block_ids[0]]
            except (KeyError, IndexError):
                raise UnknownTipset(key.hex()) from None
            got = (block.epoch, block.parents)
            self._entries[key] = got
        return got

    def parent_key_of(self, key: TipsetKey) -> TipsetKey:
        """Shared parent key of a tipset key's blocks (EMPTY_KEY above genesis)."""
        return self.entry(key)[1]

    def epoch_of(self, key: TipsetKey) -> int:
        return self.entry(key)[0]

    def weight(self, key: TipsetKey) -> int:
        """Chain weight of a tip: total block count from genesis through key."""
        w = self._weights.get(key)
        if w is not None:
            return w
        path = []
        k = key
        while k not in self._weights:
            path.append(k)
            k = self.parent_key_of(k)
        w = self._weights[k]
        for k in reversed(path):
            w += len(k)
            self._weights[k] = w
        return w

    def has_adversarial(self, key: TipsetKey) -> bool:
        cached = self._adversarial.get(key)
        if cached is None:
            cached = any(self.blocks[bid].adversarial for bid in key.block_ids)
            self._adversarial[key] = cached
        return cached

    def min_proof_bits(self, key: TipsetKey) -> int:
        return min(self.blocks[bid].proof.y_bits for bid in key)


def weight(key: TipsetKey, dag: BlockDag) -> int:
    if not dag.resolves(key):
        raise UnknownTipset(key.hex())
    return dag.weight(key)


def chain_of(key: TipsetKey, dag: BlockDag) -> ChainView:
    """Ordered tipset lineage genesis -> key (inclusive)."""
    if not dag.resolves(key):
        raise UnknownTipset(key.hex())
    entries = []
    k = key
    while k != EMPTY_KEY:
        entries.append(ChainEntry(dag.epoch_of(k), k, len(k)))
        k = dag.parent_key_of(k)
    entries.reverse()
    return ChainView(entries)


def validate_block(block: Block, dag: BlockDag, drand, target: Optional[float] = None) -> Validity:
    """Block validity: election proof, storage stub, and parent tipset coherence.

    `drand` is the randomness oracle the proof is verified against. `target`
    is the election threshold on y; None means the statistical mode where
    eligibility is decided by the leader draw and only proof integrity is
    checked. Parents already stored in the DAG are valid by the append-only
    invariant, so the recursive clause reduces to membership plus coherence.
    """
    if block.epoch == 0:
        return VALID if block.id == dag.genesis.id else Validity(False, PARENTS_NOT_TIPSET)
    proof = block.proof
    if proof.miner != block.miner or proof.epoch != block.epoch or not drand.verify(proof):
        return Validity(False, BAD_ELECTION)
    if target is not None and proof.y > target:
        return Validity(False, BAD_ELECTION)
    if not winning_post_valid(block):  # pragma: no cover - stub always passes
        return Validity(False, BAD_ELECTION)
    if len(block.parents) == 0:
        return Validity(False, PARENTS_NOT_TIPSET)
    first = None
    miners = set()
    for pid in block.parents.block_ids:
        pb = dag.blocks.get(pid)
        if pb is None:
            return Validity(False, MISSING_PARENT)
        if first is None:
            first = pb
        elif pb.epoch != first.epoch or pb.parents != first.parents:
            return Validity(False, PARENTS_NOT_TIPSET)
        if pb.miner in miners:
            return Validity(False, PARENTS_NOT_TIPSET)
        miners.add(pb.miner)
    if first.epoch >= block.epoch:
        return Validity(False, PARENTS_NOT_TIPSET)
    return VALID


class TieBreak(Enum):
    """Tie policies for equal-weight tips.

    ADVERSARY_FAVORING: a tip containing any adversarial block beats honest-only
    tips; among several such (or none), the lowest key wins. MIN_PROOF: the tip
    whose smallest contained proof value is lowest wins (the protocol's own
    deterministic rule), lowest key as the final fallback.
    """

    ADVERSARY_FAVORING = "adversary"
    MIN_PROOF = "min-proof"


def fork_choice(dag: BlockDag, views: Iterable[TipsetKey],
                tiebreak: TieBreak = TieBreak.ADVERSARY_FAVORING) -> TipsetKey:
    """Heaviest tip among the candidates, ties resolved by policy."""
    candidates = list(views)
    if not candidates:
        raise EmptyViews("fork_choice needs at least one candidate tip")
    best_w = None
    tied: list[TipsetKey] = []
    memo = dag._weights
    for key in candidates:
        w = memo.get(key)
        if w is None:
            w = dag.weight(key)
        if best_w is None or w > best_w:
            best_w, tied = w, [key]
        elif w == best_w:
            tied.append(key)
    if len(tied) == 1:
        return tied[0]
    if tiebreak is TieBreak.ADVERSARY_FAVORING:
        adv = [k for k in tied if dag.has_adversarial(k)]
        pool = adv if adv else tied
        return min(pool)
    return min(tied, key=lambda k: (dag.min_proof_bits(k), k))
