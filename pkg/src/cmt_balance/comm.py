"""In-process logical ranks with deterministic collectives.

Rank code is written SPMD-style as a generator function taking a
:class:`RankContext`; each communication step is expressed by yielding an
operation built from the context and receiving its result::

    def program(ctx, value):
        offset = yield ctx.exscan_sum(value)
        return offset

    RankEnsemble(4).run(program, [1, 2, 3, 4])   # -> [0, 1, 3, 6]

Every rank must yield the same kind of operation at each epoch. Results are
computed by one pure resolver from the full set of contributions, so the
sequential and threaded schedulers produce identical results regardless of
thread interleaving.
"""
from __future__ import annotations

import copy
import inspect
import threading
from dataclasses import dataclass
from typing import Any, Callable, Sequence

EXEC_MODES = ("sequential", "threaded")


class CollectiveMismatch(RuntimeError):
    """Ranks disagreed on which collective to perform (or one rank exited early)."""


@dataclass(frozen=True)
class _Op:
    kind: str
    value: Any = None
    root: int = 0


_DONE = _Op("done")


class RankContext:
    def __init__(self, rank: int, size: int):
        self.rank = rank
        self.size = size

    def _check_root(self, root: int) -> int:
        if not 0 <= root < self.size:
            raise ValueError(f"invalid root rank {root} for {self.size} ranks")
        return root

    def exscan_sum(self, value) -> _Op:
        return _Op("exscan_sum", value)

    def allgatherv(self, items: Sequence) -> _Op:
        return _Op("allgatherv", list(items))

    def gather(self, value, root: int = 0) -> _Op:
        return _Op("gather", value, self._check_root(root))

    def broadcast(self, value, root: int = 0) -> _Op:
        return _Op("broadcast", value, self._check_root(root))

    def shift_right(self, value) -> _Op:
        """Send ``value`` to rank+1 and receive rank-1's value (``None`` on rank 0)."""
        return _Op("shift_right", value)

    def route(self, outbound: Sequence[tuple[int, Any]]) -> _Op:
        outbound = list(outbound)
        for dest, _ in outbound:
            if not 0 <= dest < self.size:
                raise ValueError(f"invalid destination rank {dest} for {self.size} ranks")
        return _Op("route", outbound)

    def barrier(self) -> _Op:
        return _Op("barrier")


def _resolve(ops: list[_Op]) -> list:
    kinds = {op.kind for op in ops}
    if len(kinds) != 1:
        raise CollectiveMismatch(f"ranks issued different operations: {[op.kind for op in ops]}")
    kind = ops[0].kind
    n = len(ops)
    if kind in ("gather", "broadcast") and len({op.root for op in ops}) != 1:
        raise CollectiveMismatch(f"{kind} called with differing roots")

    if kind == "exscan_sum":
        out, acc = [], 0
        for op in ops:
            out.append(acc)
            acc = acc + op.value
        return out
    if kind == "allgatherv":
        flat = [item for op in ops for item in op.value]
        return [copy.deepcopy(flat) for _ in range(n)]
    if kind == "gather":
        root = ops[0].root
        return [[op.value for op in ops] if r == root else None for r in range(n)]
    if kind == "broadcast":
        data = ops[ops[0].root].value
        return [data if r == ops[0].root else copy.deepcopy(data) for r in range(n)]
    if kind == "shift_right":
        return [None] + [ops[r - 1].value for r in range(1, n)]
    if kind == "route":
        inbound: list[list] = [[] for _ in range(n)]
        # iterating sources in rank order, then send order, fixes delivery order
        for src, op in enumerate(ops):
            for dest, payload in op.value:
                inbound[dest].append((src, payload))
        return inbound
    if kind == "barrier":
        return [None] * n
    raise CollectiveMismatch(f"unknown operation {kind!r}")


class RankEnsemble:
    """A fixed set of ``size`` logical ranks.

    ``exec_mode`` selects single-threaded round-robin scheduling
    (``"sequential"``) or one thread per rank with barrier-synchronized
    collectives (``"threaded"``).
    """

    def __init__(self, size: int, exec_mode: str = "sequential"):
        if size < 1:
            raise ValueError("an ensemble needs at least one rank")
        if exec_mode not in EXEC_MODES:
            raise ValueError(f"exec_mode must be one of {EXEC_MODES}, got {exec_mode!r}")
        self.size = size
        self.exec_mode = exec_mode
        self.epoch = 0

    def run(self, program: Callable, per_rank_args: Sequence | None = None, *shared) -> list:
        """Run ``program(ctx, per_rank_args[r], *shared)`` on every rank.

        ``per_rank_args=None`` calls ``program(ctx, *shared)``. Returns the
        list of per-rank return values.
        """
        if per_rank_args is not None and len(per_rank_args) != self.size:
            raise ValueError(f"expected {self.size} per-rank arguments, got {len(per_rank_args)}")

        def start(r):
            ctx = RankContext(r, self.size)
            args = (shared if per_rank_args is None else (per_rank_args[r], *shared))
            return program(ctx, *args)

        if not inspect.isgeneratorfunction(program):
            return [start(r) for r in range(self.size)]
        if self.exec_mode == "sequential":
            return self._run_sequential(start)
        return self._run_threaded(start)

    def _run_sequential(self, start) -> list:
        gens = [start(r) for r in range(self.size)]
        replies: list = [None] * self.size
        results: list = [None] * self.size
        while True:
            ops = []
            for r, gen in enumerate(gens):
                try:
                    ops.append(gen.send(replies[r]))
                except StopIteration as stop:
                    results[r] = stop.value
                    ops.append(_DONE)
            if all(op is _DONE for op in ops):
                return results
            if any(op is _DONE for op in ops):
                raise CollectiveMismatch("some ranks finished while others entered a collective")
            replies = _resolve(ops)
            self.epoch += 1

    def _run_threaded(self, start) -> list:
        n = self.size
        slots: list = [None] * n
        replies: list = [None] * n
        results: list = [None] * n
        state = {"error": None, "finished": False}

        def resolve_slots():
            try:
                if all(op is _DONE for op in slots):
                    state["finished"] = True
                elif any(op is _DONE for op in slots):
                    raise CollectiveMismatch("some ranks finished while others entered a collective")
                else:
                    replies[:] = _resolve(list(slots))
                    self.epoch += 1
            except BaseException as exc:  # surfaced to every rank below
                state["error"] = exc

        barrier = threading.Barrier(n, action=resolve_slots)

        def worker(r):
            try:
                gen = start(r)
                reply = None
                while True:
                    try:
                        slots[r] = gen.send(reply)
                    except StopIteration as stop:
                        results[r] = stop.value
                        slots[r] = _DONE
                    barrier.wait()
                    if state["error"] is not None or state["finished"]:
                        return
                    reply = replies[r]
            except threading.BrokenBarrierError:
                return
            except BaseException as exc:
                if state["error"] is None:
                    state["error"] = exc
                barrier.abort()

        threads = [threading.Thread(target=worker, args=(r,), name=f"rank-{r}") for r in range(n)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if state["error"] is not None:
            raise state["error"]
        return results

    # One-shot helpers: each runs a single collective with the given per-rank inputs.

    def exscan_sum(self, values: Sequence) -> list:
        return self.run(_one(lambda ctx, v: ctx.exscan_sum(v)), values)

    def allgatherv(self, items: Sequence[Sequence]) -> list:
        return self.run(_one(lambda ctx, v: ctx.allgatherv(v)), items)

    def broadcast(self, root: int, values: Sequence) -> list:
        if not 0 <= root < self.size:
            raise ValueError(f"invalid root rank {root} for {self.size} ranks")
        return self.run(_one(lambda ctx, v: ctx.broadcast(v, root)), values)

    def shift_right(self, values: Sequence) -> list:
        return self.run(_one(lambda ctx, v: ctx.shift_right(v)), values)

    def route(self, outbound: Sequence[Sequence[tuple[int, Any]]]) -> list:
        return self.run(_one(lambda ctx, v: ctx.route(v)), outbound)


def _one(make_op):
    def program(ctx, value):
        result = yield make_op(ctx, value)
        return result

    return program
