"""Order streams: uniform permutations, i.i.d. draws and the reservoir re-sampler."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .rng import GENERATOR_VERSION, as_generator, derive_rng, uniform_index

# Uniform doubles consumed per reservoir_draw call (Bernoulli, then index).
DRAWS_PER_ROUND = 2


@dataclass(frozen=True, eq=False)
class OrderStream:
    """A permutation of ``range(T)`` read left to right.

    ``position`` counts how many indices have been emitted.
    """

    permutation: np.ndarray
    position: int = 0

    def __post_init__(self):
        perm = np.array(self.permutation, dtype=np.int64)
        T = perm.shape[0]
        if perm.ndim != 1 or T == 0 or not np.array_equal(np.sort(perm), np.arange(T)):
            raise ValueError("permutation must be a bijection of range(T)")
        if not 0 <= self.position <= T:
            raise ValueError(f"position {self.position} outside [0, {T}]")
        perm.setflags(write=False)
        object.__setattr__(self, "permutation", perm)

    @property
    def T(self) -> int:
        return self.permutation.shape[0]

    @property
    def emitted(self) -> np.ndarray:
        return self.permutation[: self.position]

    def prefix(self, m: int) -> np.ndarray:
        if not 0 <= m <= self.T:
            raise ValueError(f"prefix length {m} outside [0, {self.T}]")
        return self.permutation[:m]

    def advance(self, k: int = 1) -> "OrderStream":
        return OrderStream(self.permutation, self.position + k)

    def __iter__(self):
        return iter(self.permutation[self.position :].tolist())

    def __eq__(self, other):
        return (
            isinstance(other, OrderStream)
            and self.position == other.position
            and np.array_equal(self.permutation, other.permutation)
        )

    def to_json(self) -> str:
        return json.dumps(self.permutation.tolist())


def random_permutation(T: int, seed) -> OrderStream:
    """Fisher-Yates shuffle of ``range(T)``.

    ``seed`` is an int (keyed through :func:`derive_rng` with label
    ``"order"``) or a generator; ``T - 1`` uniforms are consumed.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    rng = derive_rng(int(seed), "order") if not isinstance(seed, np.random.Generator) else seed
    return OrderStream(kernels.fisher_yates(rng.random(T - 1)))


def sorted_order(c: np.ndarray, descending: bool = False) -> OrderStream:
    """Deterministic worst-case ordering by component coefficient (stable)."""
    key = -np.asarray(c) if descending else np.asarray(c)
    return OrderStream(np.argsort(key, kind="stable"))


def iid_stream(T: int, seed) -> np.ndarray:
    """``T`` uniform draws from ``range(T)`` with replacement."""
    if T < 1:
        raise ValueError("T must be >= 1")
    rng = derive_rng(int(seed), "iid") if not isinstance(seed, np.random.Generator) else seed
    return uniform_index(rng.random(T), T)


def swap_index(stream: OrderStream, i: int, m: int | None = None) -> OrderStream:
    """Stream whose 1-based position ``i`` carries the position-``m+1`` index.

    The two positions are exchanged, so the result is still a permutation and
    applying the swap twice returns the original.  ``m`` defaults to the
    stream's cursor.
    """
    m = stream.position if m is None else m
    if not 1 <= m < stream.T:
        raise ValueError(f"need 1 <= m < T, got m={m}, T={stream.T}")
    if not 1 <= i <= m:
        raise ValueError(f"swap index i={i} outside [1, {m}]")
    perm = stream.permutation.copy()
    perm[i - 1], perm[m] = perm[m], perm[i - 1]
    return OrderStream(perm, stream.position)


@dataclass
class ReservoirState:
    """History of observed indices for the reservoir re-sampler.

    ``t`` is the current (1-based) round, so ``len(history) == t - 1``.
    """

    T: int
    history: list = field(default_factory=list)
    t: int = 1

    def observe(self, index: int) -> None:
        self.history.append(int(index))
        self.t += 1


def reservoir_draw(state: ReservoirState, current: int, rng) -> int:
    """Return ``current`` w.p. ``1 - (t-1)/T``, else a uniform past index.

    Always consumes exactly two uniforms so coupled runs stay aligned.
    """
    if len(state.history) != state.t - 1:
        raise ValueError(
            f"history length {len(state.history)} inconsistent with round t={state.t}"
        )
    if state.t < 1 or state.t > state.T:
        raise ValueError(f"round t={state.t} outside [1, {state.T}]")
    u = as_generator(rng).random(DRAWS_PER_ROUND)
    past = int(uniform_index(u[1], state.t - 1)) if state.t > 1 else 0
    if u[0] < (state.t - 1) / state.T:
        return state.history[past]
    return int(current)


def reservoir_positions(u: np.ndarray, T: int) -> np.ndarray:
    """Vectorised reservoir choice from pre-drawn uniforms.

    ``u`` has shape ``(..., s, 2)`` for rounds ``1..s``.  Returns the 0-based
    position in the observed sequence whose datapoint feeds the gradient of
    each round; position ``t-1`` means the fresh point.
    """
    s = u.shape[-2]
    t = np.arange(1, s + 1)
    replay = u[..., 0] < (t - 1) / T
    past = uniform_index(u[..., 1], t - 1)
    return np.where(replay, past, t - 1)


def sampler_uniforms(rng: np.random.Generator, rounds: int) -> np.ndarray:
    """The ``(rounds, 2)`` block of uniforms that ``rounds`` draws would consume."""
    return rng.random((rounds, DRAWS_PER_ROUND))


def reservoir_choice_tree(T: int, rounds: int):
    """Enumerate every reservoir position sequence with its exact probability.

    Yields ``(positions, probability)`` for rounds ``1..rounds``; used by the
    exhaustive stability mode at tiny ``T``.
    """
    options = []
    for t in range(1, rounds + 1):
        opts = [(t - 1, 1.0 - (t - 1) / T)]
        opts += [(j, 1.0 / T) for j in range(t - 1)]
        options.append(opts)
    for combo in itertools.product(*options):
        pos = np.array([p for p, _ in combo], dtype=np.int64)
        prob = float(np.prod([q for _, q in combo]))
        yield pos, prob


def audit_record(seed: int, label: str) -> dict:
    return {"seed": int(seed), "label": label, "generator": GENERATOR_VERSION}
