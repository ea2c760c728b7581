"""Metropolis-Hastings double-swap walk over size-``s`` models.

Each step removes one index of the current model and adds one index from its
complement, both uniformly, and accepts with probability
``min(1, exp(eps * (u_new - u_old) / Delta_K))``. The proposal is symmetric,
so the chain is reversible with respect to the exponential-mechanism target.

RNG streams: a chain with seed ``k`` draws from ``Philox(key=k)``, a
counter-based generator, so chain ``i`` of a multi-chain run (seed
``base_seed + i``) has its own stream regardless of scheduling. Inside
:func:`run_chain` the stream is consumed through a block buffer, one buffer
per distribution, so a chain is reproducible from its seed alone.
"""

from __future__ import annotations

import bisect
import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable, List, NamedTuple, Optional, Sequence

import numpy as np

from .dataset import Dataset
from .subset_score import DEFAULT_TOL, ModelState, ScoreResult, Scorer, as_model, sensitivity_bound


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator keyed by ``seed``."""
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    return np.random.Generator(np.random.Philox(key=int(seed)))


class BlockDraws:
    """Buffered draws from a generator: ``integers(high)`` and ``random()``.

    Avoids per-call generator overhead in the chain loop; the sequence of
    values is a deterministic function of the generator state and the call
    sequence.
    """

    def __init__(self, rng: np.random.Generator, block: int = 4096):
        self.rng = rng
        self.block = block
        self._ints = {}
        self._u = []

    def integers(self, high: int) -> int:
        buf = self._ints.get(high)
        if not buf:
            buf = self.rng.integers(high, size=self.block).tolist()
            buf.reverse()
            self._ints[high] = buf
        return buf.pop()

    def random(self) -> float:
        if not self._u:
            self._u = self.rng.random(self.block).tolist()
            self._u.reverse()
        return self._u.pop()


@dataclass(frozen=True)
class ChainConfig:
    s: int
    steps: int
    epsilon: float
    K: float
    lazy: bool = False
    seed: int = 0
    record_every: int = 1
    init: Optional[ModelState] = None   # None: uniform random model
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if self.s < 0:
            raise ValueError("s must be nonnegative")
        if self.epsilon < 0 or self.K < 0:
            raise ValueError("epsilon and K must be nonnegative")
        if self.init is not None:
            init = as_model(self.init)
            if len(init) != self.s:
                raise ValueError(f"initial model has size {len(init)}, expected {self.s}")
            object.__setattr__(self, "init", init)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["init"] = None if self.init is None else list(self.init)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ChainConfig":
        d = dict(d)
        if d.get("init") is not None:
            d["init"] = tuple(d["init"])
        return cls(**d)


class StepRecord(NamedTuple):
    t: int
    model: ModelState
    score: float
    r_gamma: float
    proposed: ModelState
    accepted: bool


def _fmt_model(m: ModelState) -> str:
    return " ".join(str(j) for j in m)


def _parse_model(text: str) -> ModelState:
    return tuple(int(j) for j in text.split())


@dataclass(eq=False)
class ChainTrace:
    records: List[StepRecord]
    config: ChainConfig
    accept_rate: float
    seconds: float = 0.0

    @property
    def final(self) -> StepRecord:
        return self.records[-1]

    @property
    def final_model(self) -> ModelState:
        return self.records[-1].model

    def to_csv(self, path) -> None:
        """CSV ``t,model_indices,score,r_gamma,accepted,proposed`` after a
        ``# {json}`` header line holding the config snapshot."""
        header = {"config": self.config.to_dict(), "seed": self.config.seed,
                  "accept_rate": self.accept_rate, "seconds": self.seconds}
        with Path(path).open("w", newline="") as fh:
            fh.write("# " + json.dumps(header) + "\n")
            w = csv.writer(fh)
            w.writerow(["t", "model_indices", "score", "r_gamma", "accepted", "proposed"])
            for rec in self.records:
                w.writerow([rec.t, _fmt_model(rec.model), repr(rec.score),
                            repr(rec.r_gamma), int(rec.accepted), _fmt_model(rec.proposed)])

    @classmethod
    def from_csv(cls, path) -> "ChainTrace":
        with Path(path).open(newline="") as fh:
            first = fh.readline()
            if not first.startswith("# "):
                raise ValueError(f"{path}: missing JSON header line")
            header = json.loads(first[2:])
            reader = csv.DictReader(fh)
            records = [StepRecord(int(row["t"]), _parse_model(row["model_indices"]),
                                  float(row["score"]), float(row["r_gamma"]),
                                  _parse_model(row.get("proposed") or row["model_indices"]),
                                  bool(int(row["accepted"])))
                       for row in reader]
        return cls(records, ChainConfig.from_dict(header["config"]),
                   float(header["accept_rate"]), float(header.get("seconds", 0.0)))

    def __eq__(self, other) -> bool:
        if not isinstance(other, ChainTrace):
            return NotImplemented
        return (self.records == other.records and self.config == other.config
                and self.accept_rate == other.accept_rate)


def propose_double_swap(gamma: ModelState, p: int, rng) -> tuple:
    """Swap a uniform ``k`` in ``gamma`` for a uniform ``l`` outside it.

    Returns ``(gamma_prime, k, l)``. ``rng`` needs ``integers(high)``.
    """
    s = len(gamma)
    if s == 0 or s >= p:
        raise ValueError(f"no double-swap move exists for s={s}, p={p}")
    i = int(rng.integers(s))
    j = int(rng.integers(p - s))
    k = gamma[i]
    # j-th smallest index of the complement
    l = j
    for g in gamma:
        if g <= l:
            l += 1
        else:
            break
    rest = gamma[:i] + gamma[i + 1:]
    pos = bisect.bisect_left(rest, l)
    return rest[:pos] + (l,) + rest[pos:], k, l


def acceptance_log_ratio(u_new: float, u_old: float, epsilon: float,
                         delta_K: float) -> float:
    """``eps * (u_new - u_old) / Delta_K`` (not clamped at 0)."""
    if epsilon == 0:
        return 0.0
    if delta_K <= 0:
        raise ValueError("delta_K must be positive")
    return epsilon * (u_new - u_old) / delta_K


def _accept(log_ratio: float, u: float) -> bool:
    # log(U) <= min(0, log_ratio); U == 0 has log -inf
    return log_ratio >= 0.0 or u == 0.0 or math.log(u) <= log_ratio


def _transition(scorer: Scorer, current: ScoreResult, p: int, epsilon: float,
                delta_K: float, lazy: bool, rng, t: int):
    gamma = current.model
    if lazy and rng.random() < 0.5:
        return current, StepRecord(t, gamma, -current.rss, current.r_gamma, gamma, False)
    proposed, _, _ = propose_double_swap(gamma, p, rng)
    cand = scorer.result(proposed)
    u = rng.random()
    if _accept(acceptance_log_ratio(-cand.rss, -current.rss, epsilon, delta_K), u):
        return cand, StepRecord(t, cand.model, -cand.rss, cand.r_gamma, cand.model, True)
    return current, StepRecord(t, gamma, -current.rss, current.r_gamma, cand.model, False)


def step(scorer: Scorer, state: ModelState, cfg: ChainConfig, rng, t: int = 1):
    """One MH transition from ``state``; returns ``(new_state, StepRecord)``.

    A lazy chain holds with probability 1/2 before proposing. ``scorer``
    supplies cached utilities for the dataset and ``K`` of the chain.
    """
    if len(state) != cfg.s:
        raise ValueError(f"state has size {len(state)}, expected {cfg.s}")
    if scorer.K != cfg.K:
        raise ValueError("scorer radius differs from chain K")
    ds = scorer.ds
    dk = sensitivity_bound(ds.r, ds.x_max, cfg.K)
    res, rec = _transition(scorer, scorer.result(state), ds.p, cfg.epsilon, dk,
                           cfg.lazy, rng, t)
    return res.model, rec


def random_model(p: int, s: int, rng: np.random.Generator) -> ModelState:
    """``s`` indices without replacement via partial Fisher-Yates."""
    if not 0 <= s <= p:
        raise ValueError(f"need 0 <= s <= p, got p={p}, s={s}")
    perm = list(range(p))
    for i in range(s):
        j = i + int(rng.integers(p - i))
        perm[i], perm[j] = perm[j], perm[i]
    return tuple(sorted(perm[:s]))


def run_chain(ds: Dataset, cfg: ChainConfig, rng: Optional[np.random.Generator] = None,
              scorer: Optional[Scorer] = None,
              progress: Optional[Callable[[int], None]] = None) -> ChainTrace:
    """Run ``cfg.steps`` transitions and return the (thinned) trace.

    The initial state is recorded at ``t = 0``; afterwards every
    ``record_every``-th step and the final step are kept.
    """
    start = time.perf_counter()
    if rng is None:
        rng = make_rng(cfg.seed)
    if scorer is None:
        scorer = Scorer(ds, cfg.K, cfg.tol)
    p = ds.p
    if cfg.init is not None:
        if cfg.init and cfg.init[-1] >= p:
            raise ValueError("initial model has indices outside [0, p)")
        gamma = cfg.init
    else:
        gamma = random_model(p, cfg.s, rng)
    current = scorer.result(gamma)
    records = [StepRecord(0, gamma, -current.rss, current.r_gamma, gamma, False)]
    if cfg.steps > 0 and (cfg.s == 0 or cfg.s == p):
        raise ValueError(f"no double-swap move exists for s={cfg.s}, p={p}")
    dk = sensitivity_bound(ds.r, ds.x_max, cfg.K)
    draws = BlockDraws(rng)
    every = cfg.record_every
    steps = cfg.steps
    n_acc = 0
    for t in range(1, steps + 1):
        current, rec = _transition(scorer, current, p, cfg.epsilon, dk, cfg.lazy, draws, t)
        n_acc += rec.accepted
        if t % every == 0 or t == steps:
            records.append(rec)
        if progress is not None and t % 10000 == 0:
            progress(t)
    rate = n_acc / steps if steps else 0.0
    return ChainTrace(records, cfg, rate, time.perf_counter() - start)


def chain_seed(base_seed: int, i: int) -> int:
    return base_seed + i


def _run_indexed(args):
    ds, cfg = args
    return run_chain(ds, cfg)


def run_parallel_chains(ds: Dataset, cfg: ChainConfig, num_chains: int,
                        base_seed: int, threads: int = 1) -> List[ChainTrace]:
    """Independent chains with seeds ``base_seed + i``, returned in index order.

    ``threads > 1`` runs chains in worker processes.
    """
    if num_chains < 1:
        raise ValueError("num_chains must be >= 1")
    cfgs = [replace(cfg, seed=chain_seed(base_seed, i)) for i in range(num_chains)]
    if threads <= 1 or num_chains == 1:
        return [run_chain(ds, c) for c in cfgs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_run_indexed, [(ds, c) for c in cfgs]))


def chain_summary(trace: ChainTrace, gamma_star: Optional[Sequence[int]] = None) -> dict:
    """Final model, F-score against ``gamma_star`` (if known), accept rate, time."""
    from .diagnostics import f_score

    out = {
        "final_model": list(trace.final_model),
        "final_score": trace.final.score,
        "final_r_gamma": trace.final.r_gamma,
        "accept_rate": trace.accept_rate,
        "steps": trace.config.steps,
        "seed": trace.config.seed,
        "seconds": trace.seconds,
    }
    if gamma_star is not None:
        out["final_fscore"] = f_score(trace.final_model, tuple(gamma_star))
    return out
