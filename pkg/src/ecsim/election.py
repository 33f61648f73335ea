"""Leader election and randomness.

The drand beacon is modeled as keyed pseudorandomness: unbiasable and
unpredictable by fiat, deterministic per (epoch, seed). The VRF is a mock
built from the same construction - prove/verify round-trip exactly, and any
tampered field fails verification - with y uniform on [0,1) via a 64-bit
digest. Leader counts come either from the statistical model (independent
Poisson draws for honest and adversarial leaders) or from the flat
identity-level model (each of n participants elected with probability m/n).

All randomness flows through RngStream, a counter-based Philox generator
keyed by (seed, label), so any draw is reproducible from (seed, label,
counter) alone and parallel trials can own disjoint streams.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

_BEACON_DOMAIN = b"ec/beacon/v1"
_VRF_Y_DOMAIN = b"ec/vrf/y/v1"
_VRF_P_DOMAIN = b"ec/vrf/p/v1"
_STREAM_DOMAIN = b"ec/stream/v1"
_TWO64 = float(2**64)


class BadParameters(ValueError):
    pass


@dataclass(frozen=True)
class ElectionProof:
    """Mock VRF output: y (as raw 64-bit value) plus an opaque token."""

    miner: int
    epoch: int
    y_bits: int
    token: bytes

    @property
    def y(self) -> float:
        return self.y_bits / _TWO64

    def to_bytes(self) -> bytes:
        return (self.miner.to_bytes(8, "big") + self.epoch.to_bytes(8, "big")
                + self.y_bits.to_bytes(8, "big") + self.token)

    def proof_key(self) -> tuple:
        """Identity of the underlying election right; equivocating copies share it."""
        return (self.miner, self.epoch, self.y_bits, self.token)


def beacon(epoch: int, seed: int) -> bytes:
    """32 bytes of epoch randomness; distinct across epochs and seeds."""
    if epoch < 0:
        raise BadParameters("epoch must be non-negative")
    data = _BEACON_DOMAIN + seed.to_bytes(8, "big", signed=False) + epoch.to_bytes(8, "big")
    return hashlib.blake2b(data, digest_size=32).digest()


def vrf_prove(miner: int, epoch: int, seed: int) -> ElectionProof:
    rand = beacon(epoch, seed)
    m8 = miner.to_bytes(8, "big")
    y_bits = int.from_bytes(
        hashlib.blake2b(_VRF_Y_DOMAIN + m8 + rand, digest_size=8).digest(), "big")
    token = hashlib.blake2b(
        _VRF_P_DOMAIN + m8 + epoch.to_bytes(8, "big") + y_bits.to_bytes(8, "big") + rand,
        digest_size=16).digest()
    return ElectionProof(miner, epoch, y_bits, token)


def vrf_verify(proof: ElectionProof, seed: int) -> bool:
    """True exactly for proofs produced by vrf_prove under this seed."""
    try:
        expected = vrf_prove(proof.miner, proof.epoch, seed)
    except (BadParameters, OverflowError):
        return False
    return expected == proof


class RandomnessOracle:
    """drand stand-in bound to one run seed: epoch randomness plus VRF prove/verify.

    Proofs are cached per (miner, epoch); verification compares against the
    recomputed proof, so tampering with any field still fails.
    """

    def __init__(self, seed: int):
        self.seed = seed
        self._proofs: dict[tuple[int, int], ElectionProof] = {}

    def randomness(self, epoch: int) -> bytes:
        return beacon(epoch, self.seed)

    def prove(self, miner: int, epoch: int) -> ElectionProof:
        key = (miner, epoch)
        proof = self._proofs.get(key)
        if proof is None:
            proof = vrf_prove(miner, epoch, self.seed)
            self._proofs[key] = proof
        return proof

    def verify(self, proof: ElectionProof) -> bool:
        try:
            return self.prove(proof.miner, proof.epoch) == proof
        except (BadParameters, OverflowError):
            return False


class RngStream:
    """Counter-based random stream: Philox keyed by (seed, label).

    The same (seed, label, counter) triple yields the same value on every
    platform; a stream is single-consumer and `counter` records how many
    variates it has emitted. Child streams for independent purposes derive
    via a new label.
    """

    def __init__(self, seed: int, label: str):
        self.seed = seed
        self.label = label
        digest = hashlib.blake2b(
            _STREAM_DOMAIN + seed.to_bytes(8, "big", signed=False) + label.encode(),
            digest_size=16).digest()
        key = np.frombuffer(digest, dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))
        self.counter = 0

    def spawn(self, label: str) -> "RngStream":
        return RngStream(self.seed, f"{self.label}/{label}")

    def uniform(self, size: Optional[int] = None):
        self.counter += 1 if size is None else int(size)
        return self._gen.random(size)

    def poisson(self, lam: float, size: Optional[int] = None):
        self.counter += 1 if size is None else int(size)
        out = self._gen.poisson(lam, size)
        return int(out) if size is None else out

    def integers(self, low: int, high: int, size: Optional[int] = None):
        self.counter += 1 if size is None else int(size)
        out = self._gen.integers(low, high, size=size)
        return int(out) if size is None else out


def trial_seed(master_seed: int, trial: int) -> int:
    """Disjoint per-trial seed derived from the master seed."""
    digest = hashlib.blake2b(
        b"ec/trial/v1" + master_seed.to_bytes(8, "big", signed=False) + trial.to_bytes(8, "big"),
        digest_size=8).digest()
    return int.from_bytes(digest, "big")


@dataclass
class LeaderDraw:
    """Per-epoch leader counts; identity lists are synthesized by the world."""

    honest_count: int
    adversary_count: int
    honest_leader_ids: list[int] | None = None


def draw_leaders(rng: RngStream, m: float, beta: float) -> LeaderDraw:
    """Statistical model: H ~ Poisson((1-beta) m), Z ~ Poisson(beta m), independent."""
    if not (m > 0):
        raise BadParameters("m must be positive")
    if not (0 <= beta < 1):
        raise BadParameters("beta must lie in [0, 1)")
    h = rng.poisson((1.0 - beta) * m)
    z = rng.poisson(beta * m) if beta > 0 else 0
    return LeaderDraw(honest_count=h, adversary_count=z)


def draw_leader_series(rng: RngStream, m: float, beta: float, epochs: int):
    """Vectorized leader draws for epochs 1..epochs (index 0 unused, genesis)."""
    if not (m > 0):
        raise BadParameters("m must be positive")
    if not (0 <= beta < 1):
        raise BadParameters("beta must lie in [0, 1)")
    h = rng.poisson((1.0 - beta) * m, size=epochs + 1)
    z = rng.poisson(beta * m, size=epochs + 1) if beta > 0 else np.zeros(epochs + 1, dtype=np.int64)
    h[0] = 0
    z[0] = 0
    return h.astype(np.int64), z.astype(np.int64)


def flat_election(rng: RngStream, n: int, m: float) -> np.ndarray:
    """Identity-level model: each of n participants elected with probability m/n.

    Returns the sorted indices of the elected participants.
    """
    if n < 1:
        raise BadParameters("need at least one participant")
    if not (0 < m <= n):
        raise BadParameters("m must lie in (0, n]")
    draws = rng.uniform(size=n)
    return np.nonzero(draws < m / n)[0]
