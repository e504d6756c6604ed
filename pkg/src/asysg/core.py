"""Shared domain types, deterministic stream derivation, and the bounded history buffer.

Parameter vectors are plain 1-D float64 numpy arrays throughout the package.
Coordinate indices are 0-based; sample indices xi are 1-based (xi in {1..N}).
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

MODES = ("serial", "con-sim", "incon-sim", "incon-sparse-sim", "con-threads", "incon-threads")
SIM_MODES = ("serial", "con-sim", "incon-sim", "incon-sparse-sim")
THREAD_MODES = ("con-threads", "incon-threads")

GAMMA_KINDS = ("constant", "corollary2", "corollary4")


@dataclass(frozen=True)
class SeedSpec:
    """Master seed plus the derivation rule (worker id, purpose tag) -> stream."""

    master_seed: int

    def __post_init__(self) -> None:
        if not isinstance(self.master_seed, int):
            raise ValueError(f"master_seed must be an integer, got {type(self.master_seed).__name__}")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError(f"master_seed must fit in 64 unsigned bits, got {self.master_seed}")


def _purpose_tag(purpose: str) -> int:
    # hash() is salted per process; blake2s gives a stable 64-bit tag
    return int.from_bytes(hashlib.blake2s(purpose.encode("utf-8"), digest_size=8).digest(), "big")


def derive_stream(seeds: SeedSpec, worker: int, purpose: str) -> np.random.Generator:
    """Derive the independent random stream for (worker, purpose).

    Counter-based (Philox) so streams are stateless jumps keyed by
    (master_seed, worker, purpose); identical inputs always yield the
    identical stream and distinct (worker, purpose) pairs yield
    independently seeded ones.
    """
    if worker < 0:
        raise ValueError(f"worker must be >= 0, got {worker}")
    ss = np.random.SeedSequence(seeds.master_seed, spawn_key=(worker, _purpose_tag(purpose)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class GammaRule:
    """Steplength rule: a fixed constant or one of the derived constant rules."""

    kind: str
    value: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in GAMMA_KINDS:
            raise ValueError(f"gamma kind must be one of {GAMMA_KINDS}, got {self.kind!r}")
        if self.kind == "constant":
            if self.value is None:
                raise ValueError("constant gamma rule requires a value")
            if not math.isfinite(self.value) or self.value < 0:
                raise ValueError(f"constant gamma must be finite and >= 0, got {self.value}")
        elif self.value is not None:
            raise ValueError(f"gamma rule {self.kind!r} takes no value")

    @classmethod
    def constant(cls, value: float) -> "GammaRule":
        return cls("constant", float(value))

    @classmethod
    def corollary2(cls) -> "GammaRule":
        return cls("corollary2")

    @classmethod
    def corollary4(cls) -> "GammaRule":
        return cls("corollary4")


class HistoryRing:
    """Bounded buffer of the last horizon+1 indexed items.

    Slot j holds whatever the owner stores for iteration j: a full iterate
    snapshot in the consistent-read simulator, a single-coordinate delta
    (i_j, delta_j) in the inconsistent-read one.  At current index k_now,
    every j in [max(0, k_now - horizon), k_now] that has been appended is
    retrievable; anything older has been dropped and is rejected.
    """

    def __init__(self, horizon: int):
        if horizon < 0:
            raise ValueError(f"horizon must be >= 0, got {horizon}")
        self.horizon = horizon
        self._slots: list[Any] = [None] * (horizon + 1)
        self._count = 0  # number of items appended; item i lives at slot i % (horizon+1)

    def __len__(self) -> int:
        return self._count

    @property
    def latest_index(self) -> int:
        return self._count - 1

    def append(self, item: Any) -> int:
        """Store item under the next index and return that index."""
        idx = self._count
        self._slots[idx % len(self._slots)] = item
        self._count = idx + 1
        return idx

    def get(self, j: int, k_now: int):
        lo = max(0, k_now - self.horizon)
        if not lo <= j <= k_now:
            raise IndexError(
                f"history index {j} outside window [{lo}, {k_now}] (horizon {self.horizon})"
            )
        if j >= self._count:
            raise IndexError(f"history index {j} not stored yet (have {self._count} items)")
        if j < self._count - len(self._slots):
            raise IndexError(f"history index {j} already evicted (oldest kept: {self._count - len(self._slots)})")
        return self._slots[j % len(self._slots)]


def history_get(ring: HistoryRing, j: int, k_now: int):
    """Retrieve the stored slot for index j, enforcing the staleness window."""
    return ring.get(j, k_now)


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs besides the problem: mode, budget, schedule, asynchrony knobs."""

    mode: str
    K: int
    M: int = 1
    gamma: GammaRule = GammaRule.constant(0.01)
    T: int = 0
    workers: int = 1
    delay_model: Any = None  # engines_sim.DelayModel, consistent-read sim only
    read_model: Any = None   # engines_sim.ReadModel, inconsistent-read sims only
    checkpoint_every: int = 1
    seeds: SeedSpec = field(default_factory=lambda: SeedSpec(0))

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if self.M < 1:
            raise ValueError(f"M must be >= 1, got {self.M}")
        if self.T < 0:
            raise ValueError(f"T must be >= 0, got {self.T}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        if self.checkpoint_every < 1:
            raise ValueError(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")
        if self.mode in SIM_MODES and self.workers != 1:
            raise ValueError(f"sim mode {self.mode!r} requires workers=1, got {self.workers}")
        if not isinstance(self.gamma, GammaRule):
            raise ValueError("gamma must be a GammaRule")
        if not isinstance(self.seeds, SeedSpec):
            raise ValueError("seeds must be a SeedSpec")
        if self.delay_model is not None:
            self.delay_model.validate(self.T)
        if self.read_model is not None:
            self.read_model.validate(self.T)

    def fingerprint(self) -> str:
        """Config identity used to refuse mixing traces from different setups (seed excluded)."""
        dm = getattr(self.delay_model, "describe", lambda: "none")()
        rm = getattr(self.read_model, "describe", lambda: "none")()
        g = f"{self.gamma.kind}:{self.gamma.value}"
        return f"{self.mode}|K={self.K}|M={self.M}|gamma={g}|T={self.T}|w={self.workers}|dm={dm}|rm={rm}"


@dataclass(frozen=True)
class TraceRow:
    k: int
    t: float
    f: float
    gradsq: float
    gamma: float
    max_delay_observed: int


class Trace:
    """Checkpoint records of one run, in iteration order, plus free-form run metadata."""

    def __init__(self, rows: list[TraceRow] | None = None, meta: dict[str, Any] | None = None):
        self.rows: list[TraceRow] = list(rows) if rows else []
        self.meta: dict[str, Any] = dict(meta) if meta else {}

    def append(self, row: TraceRow) -> None:
        self.rows.append(row)

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.rows]

    def rows_excluding_time(self) -> list[tuple]:
        """Row tuples without the wall-time field, for bit-identity comparisons."""
        return [(r.k, r.f, r.gradsq, r.gamma, r.max_delay_observed) for r in self.rows]

    def __len__(self) -> int:
        return len(self.rows)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Trace) and self.rows == other.rows

    def validate(self, delay_cap: int | None = None) -> None:
        """Check row ordering, finiteness, and (for sim modes) the hard delay cap."""
        for prev, cur in zip(self.rows, self.rows[1:]):
            if cur.k <= prev.k:
                raise ValueError(f"trace rows not strictly increasing in k: {prev.k} then {cur.k}")
            if cur.t < prev.t:
                raise ValueError(f"trace time went backwards at k={cur.k}")
        for r in self.rows:
            if not (math.isfinite(r.f) and math.isfinite(r.gradsq) and math.isfinite(r.gamma)):
                raise ValueError(f"non-finite trace values at k={r.k}")
            if r.gradsq < 0:
                raise ValueError(f"negative gradsq at k={r.k}")
            if delay_cap is not None and r.max_delay_observed > delay_cap:
                raise ValueError(
                    f"observed delay {r.max_delay_observed} exceeds bound {delay_cap} at k={r.k}"
                )


def check_finite(x: np.ndarray, what: str = "parameter vector") -> None:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"{what} contains non-finite entries")


def require_mode(cfg: "RunConfig", mode: str) -> None:
    if cfg.mode != mode:
        raise ValueError(f"config mode is {cfg.mode!r}, engine needs {mode!r}")


class EngineError(RuntimeError):
    """Run failure inside an engine; carries whatever trace was recorded before it."""

    def __init__(self, message: str, trace: "Trace | None" = None):
        super().__init__(message)
        self.trace = trace
