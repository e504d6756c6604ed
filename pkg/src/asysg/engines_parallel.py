"""Real multithreaded engines with staleness instrumentation.

con-threads is a parameter-server layout: the master (calling thread) is the
only writer, owns the version counter, and publishes immutable snapshot pairs
that workers read whole, so a pull can never observe a torn vector.  Workers
compute one M-sample gradient per push and hold at most one unapplied push at
a time, which keeps single-worker staleness inside {0, 1}.

incon-threads is the lock-free layout: the vector lives in one shared array,
workers copy it without any whole-vector guarantee (torn reads are the point),
and write back a single coordinate through an add that CPython's GIL makes
indivisible (one C-level call).  A shared claim counter defines the global
iteration index, so the run applies exactly K coordinate writes no matter how
threads interleave.  Checkpoint snapshots taken while writers run may be torn
as well; rows record the applied-write count current at snapshot time.

Delay accounting: every applied contribution logs (version at pull, version at
apply).  In con-threads versions are master updates; in incon-threads they are
applied-write counts sampled from the shared counter around each worker's
read-compute-write cycle.
"""
from __future__ import annotations

import itertools
import queue
import threading
import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .core import (
    EngineError,
    RunConfig,
    Trace,
    TraceRow,
    derive_stream,
    require_mode,
)
from .engines_sim import resolve_gamma

_POLL = 0.02          # seconds: wait quantum for queue/semaphore/observer loops
_STALL_LIMIT = 120.0  # seconds without progress before the run is declared hung


# ------------------------------------------------------------ delay statistics

@dataclass(frozen=True)
class DelayStats:
    """Observed staleness of applied contributions: max, histogram, per-worker means."""

    max_observed: int
    histogram: dict[int, int] = field(default_factory=dict)
    per_worker_mean: dict[int, float] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.histogram.values())

    def mean(self) -> float:
        if not self.histogram:
            return 0.0
        return sum(d * c for d, c in self.histogram.items()) / self.total

    def to_dict(self) -> dict:
        return {
            "max_observed": self.max_observed,
            "mean": self.mean(),
            "total": self.total,
            "histogram": {str(d): c for d, c in sorted(self.histogram.items())},
            "per_worker_mean": {str(w): m for w, m in sorted(self.per_worker_mean.items())},
        }


def delay_stats(pairs, workers=None) -> DelayStats:
    """Build DelayStats from (pull-version, apply-version) pairs.

    `workers` optionally gives the contributing worker id for each pair, enabling
    the per-worker means.  A pair with apply < pull is a causality violation and
    rejects the whole log.
    """
    pairs = list(pairs)
    if workers is not None:
        workers = list(workers)
        if len(workers) != len(pairs):
            raise ValueError(f"{len(pairs)} pairs but {len(workers)} worker ids")
    hist: Counter[int] = Counter()
    per_worker: dict[int, list[int]] = {}
    for idx, (pull, apply_) in enumerate(pairs):
        if apply_ < pull:
            raise ValueError(f"corrupt delay log: apply version {apply_} < pull version {pull}")
        d = int(apply_ - pull)
        hist[d] += 1
        if workers is not None:
            per_worker.setdefault(int(workers[idx]), []).append(d)
    return DelayStats(
        max_observed=max(hist) if hist else 0,
        histogram=dict(hist),
        per_worker_mean={w: sum(ds) / len(ds) for w, ds in per_worker.items()},
    )


# ------------------------------------------------------------ shared helpers

class _WorkerPool:
    """Start threads, collect first failure, stop and join everyone."""

    def __init__(self):
        self.stop = threading.Event()
        self.errors: list[tuple[int, BaseException]] = []
        self.threads: list[threading.Thread] = []

    def launch(self, target, count):
        for w in range(count):
            t = threading.Thread(target=self._guard, args=(target, w), daemon=True)
            self.threads.append(t)
            t.start()

    def _guard(self, target, w):
        try:
            target(w)
        except BaseException as exc:  # propagate to the master, whatever it is
            self.errors.append((w, exc))
            self.stop.set()

    def failed(self) -> bool:
        return bool(self.errors)

    def shutdown(self, timeout=_STALL_LIMIT):
        self.stop.set()
        deadline = time.perf_counter() + timeout
        for t in self.threads:
            t.join(timeout=max(0.0, deadline - time.perf_counter()))
        return all(not t.is_alive() for t in self.threads)

    def raise_failure(self, trace: Trace):
        w, exc = self.errors[0]
        raise EngineError(f"worker {w} failed: {exc!r}", trace) from exc


def _base_meta(p, cfg: RunConfig, gamma: float) -> dict:
    return {
        "mode": cfg.mode,
        "problem": p.name,
        "seed": cfg.seeds.master_seed,
        "gamma": gamma,
        "workers": cfg.workers,
        "config_fingerprint": f"{p.name}|{cfg.fingerprint()}",
    }


# ------------------------------------------------------------ parameter server

def run_param_server(p, cfg: RunConfig) -> tuple[Trace, DelayStats]:
    """Consistent-read asynchronous SG through a master/worker star.

    The master is the sole writer: it pops one M-sample push per update, steps
    x functionally, and republishes an immutable (version, snapshot) pair, so
    versions form the gapless sequence 0..K and every pull sees one complete
    vector.  A push's delay is (update index at apply) - (version at pull).
    Workers keep at most one unapplied push outstanding, so a single worker can
    only ever be 0 or 1 versions behind.
    """
    require_mode(cfg, "con-threads")
    gamma = resolve_gamma(cfg, p)
    x = p.x1
    published = [(0, x.copy())]  # single-slot publish; item load is one bytecode
    pushes: queue.Queue = queue.Queue(maxsize=max(2, cfg.workers))
    slots = [threading.Semaphore(1) for _ in range(cfg.workers)]
    pool = _WorkerPool()

    def worker(w: int):
        rng = derive_stream(cfg.seeds, w, "sample")
        while not pool.stop.is_set():
            version, snap = published[0]
            xis = rng.integers(1, p.sample_count + 1, size=cfg.M)
            gsum = p.batch_gradient_sum(snap, xis)
            while not slots[w].acquire(timeout=_POLL):  # previous push must land first
                if pool.stop.is_set():
                    return
            while not pool.stop.is_set():
                try:
                    pushes.put((w, version, gsum), timeout=_POLL)
                    break
                except queue.Full:
                    continue

    trace = Trace(meta=_base_meta(p, cfg, gamma))
    t0 = time.perf_counter()

    def record(k: int, vec: np.ndarray, max_delay: int):
        g = p.full_gradient(vec)
        trace.append(TraceRow(k=k, t=time.perf_counter() - t0, f=p.objective(vec),
                              gradsq=float(g @ g), gamma=gamma, max_delay_observed=max_delay))

    pool.launch(worker, cfg.workers)
    log_pairs: list[tuple[int, int]] = []
    log_workers: list[int] = []
    max_delay = 0
    try:
        for k in range(cfg.K):
            if k % cfg.checkpoint_every == 0:
                record(k, x, max_delay)
            waited = 0.0
            while True:
                try:
                    w, version, gsum = pushes.get(timeout=_POLL)
                    break
                except queue.Empty:
                    if pool.failed():
                        pool.shutdown()
                        pool.raise_failure(trace)
                    waited += _POLL
                    if waited > _STALL_LIMIT:
                        pool.shutdown()
                        raise EngineError(f"no worker push within {_STALL_LIMIT}s at update {k}", trace)
            log_pairs.append((version, k))
            log_workers.append(w)
            max_delay = max(max_delay, k - version)
            x = x - gamma * gsum  # fresh array: earlier snapshots stay intact
            published[0] = (k + 1, x)
            slots[w].release()
        record(cfg.K, x, max_delay)
    finally:
        clean = pool.shutdown()
    if pool.failed():
        pool.raise_failure(trace)
    if not clean:
        raise EngineError("workers did not exit after stop", trace)
    trace.validate()
    return trace, delay_stats(log_pairs, workers=log_workers)


# ------------------------------------------------------------ lock-free shared memory

def run_lockfree_shared(p, cfg: RunConfig, collect_entries: bool = False) -> tuple[Trace, DelayStats]:
    """Inconsistent-read asynchronous SG on one shared vector, no locks.

    Workers claim global iteration numbers from a shared counter, copy x with no
    whole-vector guarantee, compute an M-sample gradient, and add -gamma * g[i]
    into one uniformly drawn coordinate as a single indivisible operation.  The
    run ends after exactly K claimed iterations, hence exactly K coordinate
    writes.  The caller acts as observer, checkpointing on cadence from possibly
    torn snapshots; row k is the applied-write count at snapshot time.

    With collect_entries=True and workers=1 the trace meta carries the
    (coordinate, sample indices) sequence for exact replay through the
    simulator's update arithmetic.
    """
    require_mode(cfg, "incon-threads")
    if cfg.K >= 2**62:
        raise ValueError("K too large for the shared iteration counter")
    gamma = resolve_gamma(cfg, p)
    x = p.x1
    claims = itertools.count()          # next() is one atomic fetch-and-add under the GIL
    applied = np.zeros(1, dtype=np.int64)  # count of landed coordinate writes
    pool = _WorkerPool()
    per_worker_pairs: list[list[tuple[int, int]]] = [[] for _ in range(cfg.workers)]
    entries: list[tuple[int, list[int]]] = []

    def worker(w: int):
        rng_s = derive_stream(cfg.seeds, w, "sample")
        rng_c = derive_stream(cfg.seeds, w, "coord")
        pairs = per_worker_pairs[w]
        while not pool.stop.is_set():
            k = next(claims)
            if k >= cfg.K:
                return
            v_read = int(applied[0])
            snap = x.copy()             # torn-capable: writers may land mid-copy
            xis = rng_s.integers(1, p.sample_count + 1, size=cfg.M)
            gsum = p.batch_gradient_sum(snap, xis)
            i = int(rng_c.integers(p.n))
            delta = -(gamma * gsum[i])
            np.add.at(x, i, delta)      # indivisible single-coordinate add
            v_apply = int(applied[0])
            np.add.at(applied, 0, 1)
            pairs.append((v_read, v_apply))
            if collect_entries:
                entries.append((i, [int(v) for v in xis]))

    trace = Trace(meta=_base_meta(p, cfg, gamma))
    trace.meta["snapshots"] = "observer copies are unsynchronized and may be torn"
    t0 = time.perf_counter()
    scan_pos = [0] * cfg.workers
    run_max = 0

    def current_max_delay() -> int:
        # per-worker logs are append-only; scanning the new tail is safe
        nonlocal run_max
        for w, lst in enumerate(per_worker_pairs):
            upto = len(lst)
            for idx in range(scan_pos[w], upto):
                v_read, v_apply = lst[idx]
                if v_apply - v_read > run_max:
                    run_max = v_apply - v_read
            scan_pos[w] = upto
        return run_max

    def record(k: int, vec: np.ndarray):
        g = p.full_gradient(vec)
        trace.append(TraceRow(k=k, t=time.perf_counter() - t0, f=p.objective(vec),
                              gradsq=float(g @ g), gamma=gamma,
                              max_delay_observed=current_max_delay()))

    record(0, x.copy())
    pool.launch(worker, cfg.workers)
    next_mark = cfg.checkpoint_every
    last_seen, last_move = 0, time.perf_counter()
    while any(t.is_alive() for t in pool.threads):
        if pool.failed():
            break
        done = int(applied[0])
        if done != last_seen:
            last_seen, last_move = done, time.perf_counter()
        elif time.perf_counter() - last_move > _STALL_LIMIT:
            pool.shutdown()
            raise EngineError(f"no write applied within {_STALL_LIMIT}s", trace)
        if done >= next_mark and done < cfg.K and done > trace.rows[-1].k:
            record(done, x.copy())
            next_mark = (done // cfg.checkpoint_every + 1) * cfg.checkpoint_every
        time.sleep(_POLL)
    clean = pool.shutdown()
    if pool.failed():
        pool.raise_failure(trace)
    if not clean:
        raise EngineError("workers did not exit after stop", trace)
    if int(applied[0]) != cfg.K:
        raise EngineError(f"applied {int(applied[0])} writes, expected {cfg.K}", trace)
    record(cfg.K, x)  # quiescent: exact final iterate, all delay logs visible
    trace.validate()
    if collect_entries:
        trace.meta["entries"] = entries
    trace.meta["x_final"] = x

    pairs = [pr for worker_pairs in per_worker_pairs for pr in worker_pairs]
    ids = [w for w, worker_pairs in enumerate(per_worker_pairs) for _ in worker_pairs]
    return trace, delay_stats(pairs, workers=ids)
