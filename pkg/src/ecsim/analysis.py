"""Everything measured over traces.

Per-epoch series (H, Z, X, Y, W_min, W_max) with interval accessors, detection
of isolated-successful and finite-horizon Nakamoto epochs, the convergence
check that a Nakamoto epoch's honest block stays in every future chain, the
persistence/liveness ledger checker, the security-threshold solver, and Monte
Carlo sweep aggregation with Wilson confidence intervals.

A Nakamoto epoch s is an isolated successful epoch (H[s-1]=0, H[s]=1) such
that Z[r-1,t] < X[r+1,t] for all 0 <= r <= s-2 and all t >= s up to the
horizon; the horizon restriction over-approximates the infinite-time event
set, and convergence checks are asserted within the same horizon, so they
remain sound.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .chain import BlockDag, TipsetKey

SUMMARY_SCHEMA = "ecsim.summary.v1"
SUMMARY_COLUMNS = ("m", "beta", "strategy", "mitigation", "trials", "successes",
                   "success_rate", "ci_low", "ci_high", "mean_final_lead",
                   "nakamoto_rate", "persistence_violations", "liveness_violations",
                   "seed")


class HorizonTooShort(ValueError):
    pass


class NoRoot(ValueError):
    pass


# ---------------------------------------------------------------------------
# series


@dataclass
class SeriesBundle:
    """Epoch-indexed arrays (index == epoch; epoch 0 is the genesis row)."""

    H: np.ndarray
    Z: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    W_min: np.ndarray
    W_max: np.ndarray

    def __post_init__(self):
        self._cx = np.concatenate(([0], np.cumsum(self.X)))  # _cx[e+1] = sum X[0..e]
        self._cz = np.concatenate(([0], np.cumsum(self.Z)))

    def __len__(self) -> int:
        return len(self.H)

    @property
    def last_epoch(self) -> int:
        return len(self.H) - 1

    def X_int(self, r1: int, r2: int) -> int:
        """Number of successful epochs in (r1, r2]."""
        return int(self._cx[r2 + 1] - self._cx[r1 + 1])

    def Z_int(self, r1: int, r2: int) -> int:
        return int(self._cz[r2 + 1] - self._cz[r1 + 1])

    def H_int(self, r1: int, r2: int) -> int:
        return int(np.sum(self.H[r1 + 1:r2 + 1]))

    def isolated_successful(self) -> np.ndarray:
        """Epochs s with H[s-1] = 0 and exactly one honest block at s."""
        prev_h = np.concatenate(([0], self.H[:-1]))
        return np.nonzero((prev_h == 0) & (self.Y == 1))[0]


def series_from_counts(h: np.ndarray, z: np.ndarray,
                       w_min: Optional[np.ndarray] = None,
                       w_max: Optional[np.ndarray] = None) -> SeriesBundle:
    h = np.asarray(h, dtype=np.int64)
    z = np.asarray(z, dtype=np.int64)
    x = (h >= 1).astype(np.int64)
    y = (h == 1).astype(np.int64)
    if w_min is None:
        w_min = np.zeros_like(h)
    if w_max is None:
        w_max = np.zeros_like(h)
    return SeriesBundle(h, z, x, y, np.asarray(w_min), np.asarray(w_max))


def derive_series(trace) -> SeriesBundle:
    """SeriesBundle from a Trace; epoch 0 becomes the genesis row."""
    def col(name, lead):
        return np.concatenate(([lead], trace.array(name)))

    return SeriesBundle(
        H=col("H", 0), Z=col("Z", 0),
        X=col("X", 0), Y=col("Y", 0),
        W_min=col("W_min", 1), W_max=col("W_max", 1),
    )


# ---------------------------------------------------------------------------
# Nakamoto epochs


@dataclass
class NakamotoReport:
    horizon: int
    epochs: list[int]
    witnesses: dict[int, Optional[int]]  # min over (r,t) of X[r+1,t] - Z[r-1,t]


def detect_nakamoto(series: SeriesBundle, horizon: Optional[int] = None) -> NakamotoReport:
    """Flag every isolated successful epoch s whose adversary counts stay
    strictly below the honest successful-epoch counts over the horizon.

    O(T) for all s via suffix minima of CX-CZ and prefix maxima of the
    per-r bound CX[r+1] - CZ[r-1].
    """
    T = series.last_epoch if horizon is None else int(horizon)
    if T > series.last_epoch:
        raise HorizonTooShort(f"horizon {T} exceeds trace length {series.last_epoch}")
    cx, cz = series._cx, series._cz
    # D[t] = CX[t] - CZ[t]; minimal over t in [s, T]
    d = cx[1:T + 2] - cz[1:T + 2]
    suffix_min = np.minimum.accumulate(d[::-1])[::-1]
    # E[r] = CX[r+1] - CZ[r-1]; maximal over r in [0, s-2]
    r_idx = np.arange(0, T + 1)
    e_vals = cx[np.minimum(r_idx + 2, T + 1)] - cz[r_idx]
    prefix_max = np.maximum.accumulate(e_vals)
    flagged: list[int] = []
    witnesses: dict[int, Optional[int]] = {}
    for s in series.isolated_successful():
        s = int(s)
        if s > T:
            continue
        lo = suffix_min[s]
        if s >= 2:
            hi = prefix_max[s - 2]
            margin = int(lo - hi)
            ok = margin > 0
        else:
            margin = None
            ok = True
        if ok:
            flagged.append(s)
            witnesses[s] = margin
    return NakamotoReport(horizon=T, epochs=flagged, witnesses=witnesses)


def detect_nakamoto_bruteforce(series: SeriesBundle, horizon: Optional[int] = None) -> list[int]:
    """Direct O(T^2)-per-epoch evaluation of the defining events (test oracle)."""
    T = series.last_epoch if horizon is None else int(horizon)
    out = []
    for s in series.isolated_successful():
        s = int(s)
        if s > T:
            continue
        ok = True
        for r in range(0, s - 1):
            for t in range(s, T + 1):
                if series.Z_int(r - 1, t) >= series.X_int(r + 1, t):
                    ok = False
                    break
            if not ok:
                break
        if ok:
            out.append(s)
    return out


def check_lemma1(trace, report: NakamotoReport) -> list[tuple[int, int, int]]:
    """For each flagged epoch s, assert its unique honest block is an ancestor
    of every view's heaviest tip at every epoch in [s, horizon].

    Returns violations as (s, epoch, view) triples; expected empty.
    """
    dag: BlockDag = trace.dag
    violations = []
    for s in report.epochs:
        if s < 1 or s > len(trace.view_tips):
            continue
        honest = trace.honest_ids[s - 1]
        if len(honest) != 1:
            violations.append((s, s, -1))
            continue
        b_s = honest[0]
        memo: dict[TipsetKey, Optional[TipsetKey]] = {}

        def ancestor_at(key: TipsetKey) -> Optional[TipsetKey]:
            path = []
            k = key
            while True:
                if k in memo:
                    found = memo[k]
                    break
                e = dag.epoch_of(k)
                if e == s:
                    found = k
                    break
                if e < s:
                    found = None
                    break
                path.append(k)
                k = dag.parent_key_of(k)
            for p in path:
                memo[p] = found
            return found

        for epoch in range(s, min(report.horizon, len(trace.view_tips)) + 1):
            for vid, tip in enumerate(trace.view_tips[epoch - 1]):
                anc = ancestor_at(tip)
                if anc is None or b_s not in anc.block_ids:
                    violations.append((s, epoch, vid))
    return violations


# ---------------------------------------------------------------------------
# persistence / liveness


@dataclass(frozen=True)
class Violation:
    epoch: int
    node: int
    block_id: bytes
    kind: str  # "persistence" | "liveness"


@dataclass
class LedgerCheck:
    tau: int
    liveness_u: int
    violations: list[Violation] = field(default_factory=list)
    committed_epochs: int = 0

    @property
    def persistence_violations(self) -> int:
        return sum(1 for v in self.violations if v.kind == "persistence")

    @property
    def liveness_violations(self) -> int:
        return sum(1 for v in self.violations if v.kind == "liveness")


class LedgerChecker:
    """Incremental persistence/liveness verdicts over per-epoch view tips.

    Persistence: the tau-confirmed prefixes of all views, across all epochs,
    must form one growing chain; any view whose chain does not pass through
    the committed boundary, or whose confirmed extension disagrees with
    another view's, is a violation. Liveness: the abstract marker injected at
    epoch i (carried by every honest block from i on) must have one agreed,
    permanent carrier in every view's ledger by epoch i+u.
    """

    def __init__(self, dag: BlockDag, tau: int, liveness_u: int):
        self.dag = dag
        self.tau = tau
        self.u = liveness_u
        self.committed: list[tuple[int, TipsetKey]] = [(0, dag.genesis_key)]
        self.committed_by_epoch: dict[int, TipsetKey] = {0: dag.genesis_key}
        self.violations: list[Violation] = []
        self._watch: list[tuple[int, int, bytes]] = []  # (marker, carrier_epoch, carrier)
        # ascending (epoch, lowest honest id) for committed honest-bearing tipsets
        self._committed_honest: list[tuple[int, bytes]] = []
        self._honest_in_key: dict[TipsetKey, Optional[bytes]] = {}

    # -- helpers -------------------------------------------------------------

    def _chain_suffix(self, tip: TipsetKey, above_epoch: int) -> list[tuple[int, TipsetKey]]:
        """Chain entries with epoch > above_epoch, ascending, plus the boundary entry."""
        entry = self.dag.entry
        entries = []
        k = tip
        while True:
            e, parent = entry(k)
            entries.append((e, k))
            if e <= above_epoch:
                break
            k = parent
        entries.reverse()
        return entries

    def _honest_in(self, key: TipsetKey) -> Optional[bytes]:
        got = self._honest_in_key.get(key)
        if got is None and key not in self._honest_in_key:
            dag = self.dag
            honest = sorted(bid for bid in key.block_ids if not dag.get(bid).adversarial)
            got = honest[0] if honest else None
            self._honest_in_key[key] = got
        return got

    def _commit(self, entries: list[tuple[int, TipsetKey]]) -> None:
        for e, k in entries:
            if e > self.committed[-1][0]:
                self.committed.append((e, k))
                self.committed_by_epoch[e] = k
                honest = self._honest_in(k)
                if honest is not None:
                    self._committed_honest.append((e, honest))

    # -- the per-epoch observation -------------------------------------------

    def observe(self, epoch: int, tips: Iterable[TipsetKey]) -> None:
        tips = list(tips)
        c_epoch, c_key = self.committed[-1]
        suffix_by_tip = {tip: self._chain_suffix(tip, c_epoch) for tip in set(tips)}
        self._check_persistence(epoch, tips, suffix_by_tip, c_epoch, c_key)
        self._check_liveness(epoch, tips, suffix_by_tip, c_epoch)

    def _check_persistence(self, epoch, tips, suffix_by_tip, c_epoch, c_key) -> None:
        boundary = epoch - self.tau
        extensions: list[tuple[int, list[tuple[int, TipsetKey]]]] = []
        for vid, tip in enumerate(tips):
            entries = suffix_by_tip[tip]
            base_epoch, base_key = entries[0]
            if base_epoch != c_epoch or base_key != c_key:
                self.violations.append(Violation(epoch, vid, c_key.block_ids[0], "persistence"))
                continue
            ext = [(e, k) for e, k in entries[1:] if e <= boundary]
            extensions.append((vid, ext))
        extensions.sort(key=lambda t: len(t[1]))
        for (vid_a, ext_a), (vid_b, ext_b) in zip(extensions, extensions[1:]):
            for (ea, ka), (eb, kb) in zip(ext_a, ext_b):
                if ea != eb or ka != kb:
                    self.violations.append(Violation(epoch, vid_b, kb.block_ids[0], "persistence"))
                    break
        if extensions:
            # extend the committed chain with the deepest agreed confirmed part
            self._commit(extensions[-1][1])

    def _committed_carrier(self, marker: int) -> Optional[tuple[int, bytes]]:
        """First committed honest block at epoch >= marker (bisect)."""
        idx = bisect.bisect_left(self._committed_honest, (marker, b""))
        if idx < len(self._committed_honest):
            return self._committed_honest[idx]
        return None

    def _check_liveness(self, epoch, tips, suffix_by_tip, c_epoch) -> None:
        marker = epoch - self.u
        if marker >= 1:
            committed_carrier = self._committed_carrier(marker)
            if committed_carrier is None:
                # not settled below the committed boundary; search each view's
                # live suffix (already walked) above max(marker-1, boundary)
                carriers = []
                for vid, tip in enumerate(tips):
                    found = None
                    for e, k in suffix_by_tip[tip][1:]:
                        if e < marker:
                            continue
                        honest = self._honest_in(k)
                        if honest is not None:
                            found = (e, honest)
                            break
                    if found is None:
                        self.violations.append(Violation(epoch, vid, b"", "liveness"))
                    carriers.append(found)
                present = [c for c in carriers if c is not None]
                if present and any(c != present[0] for c in present[1:]):
                    mismatch = next(i for i, c in enumerate(carriers) if c != present[0])
                    self.violations.append(
                        Violation(epoch, mismatch, carriers[mismatch][1]
                                  if carriers[mismatch] else b"", "liveness"))
                elif present:
                    self._watch.append((marker, present[0][0], present[0][1]))
            # committed carriers are guarded by the persistence machinery
        still = []
        for marker_epoch, carrier_epoch, carrier in self._watch:
            if self.committed[-1][0] >= carrier_epoch:
                key = self.committed_by_epoch.get(carrier_epoch)
                if key is None or carrier not in key.block_ids:
                    self.violations.append(Violation(epoch, -1, carrier, "liveness"))
            else:
                still.append((marker_epoch, carrier_epoch, carrier))
        self._watch = still

    def result(self) -> LedgerCheck:
        out = LedgerCheck(self.tau, self.u)
        out.violations = list(self.violations)
        out.committed_epochs = self.committed[-1][0]
        return out


def check_ledger(trace, tau: int, liveness_u: int) -> LedgerCheck:
    """Replay a trace through the incremental checker."""
    checker = LedgerChecker(trace.dag, tau, liveness_u)
    for i, tips in enumerate(trace.view_tips, start=1):
        checker.observe(i, tips)
    return checker.result()


# ---------------------------------------------------------------------------
# weight-bound invariants


def check_weight_bounds(series: SeriesBundle) -> list[int]:
    """Epochs violating W_min[r] <= W_max[r] <= W_min[r+1]."""
    bad = np.nonzero(series.W_min > series.W_max)[0].tolist()
    bad += np.nonzero(series.W_max[:-1] > series.W_min[1:])[0].tolist()
    return sorted(set(int(b) for b in bad))


def check_min_growth(series: SeriesBundle) -> list[int]:
    """Epochs t violating W_min[t] >= W_max[r] + X[r+1, t] for some r < t."""
    cx = series._cx
    # condition: W_min[t] - CX[t] >= max_{r < t} (W_max[r] - CX[r+1])
    lhs = series.W_min - cx[1:]
    rhs_terms = series.W_max[:-1] - cx[2:]
    run_max = np.maximum.accumulate(rhs_terms)
    bad = np.nonzero(lhs[1:] < run_max)[0] + 1
    return [int(b) for b in bad]


# ---------------------------------------------------------------------------
# threshold solver


def threshold_equation(beta: float, m: float, factor: int) -> float:
    return beta * m - factor * (1.0 - math.exp(-(1.0 - beta) * m))


def solve_threshold(m: float, variant: str = "tiebreak", tol: float = 1e-6) -> float:
    """Unique beta* in (0,1) with beta m = c (1 - e^{-(1-beta)m}), c=1 or 2.

    Bisection to absolute tolerance; the left side grows strictly in beta, so
    the bracket [0,1] always isolates a single root.
    """
    if not (m > 0):
        raise ValueError("m must be positive")
    variant = variant.replace("-", "").replace("_", "").lower()
    if variant in ("tiebreak", "tie"):
        factor = 1
    elif variant in ("notiebreak", "no"):
        factor = 2
    else:
        raise ValueError(f"unknown variant {variant!r}")
    lo, hi = 0.0, 1.0
    f_lo = threshold_equation(lo, m, factor)
    f_hi = threshold_equation(hi, m, factor)
    if not (f_lo < 0 < f_hi):
        raise NoRoot(f"no bracketed root for m={m}, factor={factor}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if threshold_equation(mid, m, factor) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Monte Carlo aggregation


def wilson_ci(successes: int, trials: int, z: float = 1.959964) -> tuple[float, float]:
    """Wilson score interval at 95% by default; (0,1) bounds for zero trials."""
    if trials == 0:
        return (0.0, 1.0)
    p = successes / trials
    denom = 1.0 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = (z / denom) * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials))
    return (max(0.0, center - half), min(1.0, center + half))


@dataclass
class TrialResult:
    success: bool
    released: bool
    final_lead: int
    epochs_run: int
    persistence_violations: int
    liveness_violations: int
    nakamoto_count: int


@dataclass
class SummaryRow:
    m: float
    beta: float
    strategy: str
    mitigation: str
    trials: int
    successes: int
    success_rate: float
    ci_low: float
    ci_high: float
    mean_final_lead: float
    nakamoto_rate: float
    persistence_violations: int
    liveness_violations: int
    seed: int

    def row(self) -> tuple:
        return (self.m, self.beta, self.strategy, self.mitigation, self.trials,
                self.successes, f"{self.success_rate:.6f}", f"{self.ci_low:.6f}",
                f"{self.ci_high:.6f}", f"{self.mean_final_lead:.3f}",
                f"{self.nakamoto_rate:.6f}", self.persistence_violations,
                self.liveness_violations, self.seed)


def run_checked_trial(config, trial: int = 0, keep_trace: bool = False):
    """One trial with the incremental ledger checker attached.

    Returns (TrialResult, trace-or-None). Honors config.stop_on_violation.
    """
    from .netsim import World

    world = World(config, trial)
    checker = LedgerChecker(world.dag, config.tau, config.liveness_u)
    for _ in range(config.epochs):
        world.run_epoch()
        checker.observe(world.epoch, [v.heaviest for v in world.views])
        if config.stop_on_violation and any(
                v.kind == "persistence" for v in checker.violations):
            break
    check = checker.result()
    series = derive_series(world.trace)
    report = detect_nakamoto(series)
    result = TrialResult(
        success=check.persistence_violations > 0,
        released=bool(getattr(world.strategy.state, "released", False))
        if hasattr(world.strategy, "state") else False,
        final_lead=world.trace.records[-1].adversary_lead if world.trace.records else 0,
        epochs_run=world.epoch,
        persistence_violations=check.persistence_violations,
        liveness_violations=check.liveness_violations,
        nakamoto_count=len(report.epochs),
    )
    return result, (world.trace if keep_trace else None)


def _trial_job(args):
    config, trial = args
    result, _ = run_checked_trial(config, trial)
    return trial, result


def summarize_cell(config, results: list[TrialResult]) -> SummaryRow:
    n = len(results)
    successes = sum(1 for r in results if r.success)
    rate = successes / n if n else 0.0
    lo, hi = wilson_ci(successes, n)
    total_epochs = sum(r.epochs_run for r in results)
    return SummaryRow(
        m=config.m, beta=config.beta, strategy=config.strategy,
        mitigation=config.mitigation, trials=n, successes=successes,
        success_rate=rate, ci_low=lo, ci_high=hi,
        mean_final_lead=(sum(r.final_lead for r in results) / n) if n else 0.0,
        nakamoto_rate=(sum(r.nakamoto_count for r in results) / total_epochs)
        if total_epochs else 0.0,
        persistence_violations=sum(r.persistence_violations for r in results),
        liveness_violations=sum(r.liveness_violations for r in results),
        seed=config.seed,
    )


def sweep(configs, jobs: int = 1) -> list[SummaryRow]:
    """Run every (config x trial) cell and aggregate one summary row per cell.

    Trials are share-nothing; rows come out sorted by (m, beta, strategy,
    mitigation) and results are identical whatever the parallelism.
    """
    rows = []
    for config in configs:
        jobs_list = [(config, t) for t in range(config.trials)]
        results: list[Optional[TrialResult]] = [None] * config.trials
        if jobs > 1 and config.trials > 1:
            from concurrent.futures import ProcessPoolExecutor

            with ProcessPoolExecutor(max_workers=jobs) as pool:
                for trial, result in pool.map(_trial_job, jobs_list):
                    results[trial] = result
        else:
            for args in jobs_list:
                trial, result = _trial_job(args)
                results[trial] = result
        rows.append(summarize_cell(config, [r for r in results if r is not None]))
    rows.sort(key=lambda r: (r.m, r.beta, r.strategy, r.mitigation))
    return rows


def summary_csv_lines(rows: Iterable[SummaryRow]):
    yield f"# schema: {SUMMARY_SCHEMA}"
    yield ",".join(SUMMARY_COLUMNS)
    for row in rows:
        yield ",".join(str(v) for v in row.row())
