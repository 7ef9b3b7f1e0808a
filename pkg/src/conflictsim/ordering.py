"""Mempool, the race-prone baseline ordering service, and the countermeasure
pipeline.

The pipeline composes four measures: priority assignment for read-only
transactions (applied at admission), dependency gating at dequeue time,
wallet-footprint partitioning into one bounded queue per worker, and the
workers themselves running as concurrent logical processes on the event
engine.  Ordering a transaction under the pipeline re-endorses it against
the current ledger, so a gated transaction commits with fresh read versions
once its dependencies have landed.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable

from .core import (
    LedgerState,
    PriorityClass,
    Transaction,
    TxStatus,
    apply_transaction,
    conflicts_with,
    stamp_read_versions,
)
from .errors import AlreadyAssignedError
from .simnet import COMMIT, ORDER_TICK, Engine, NodeConfig

BASELINE = "baseline"
COUNTERMEASURES = "countermeasures"

# Re-wake interval for a pipeline worker whose whole queue is deferred while
# no commit is in flight anywhere (e.g. cyclic dependencies); keeps deferral
# counting alive so defer_limit can fire.
RETRY_TICK = 10


class SubmitOutcome(Enum):
    ACCEPTED = "accepted"
    MEMPOOL_FULL = "mempool_full"
    DUPLICATE = "duplicate"


class DependencyVerdict(Enum):
    READY = "ready"
    DEFERRED = "deferred"
    ABORT = "abort"


@dataclass
class OrderingPolicy:
    mode: str = BASELINE
    workers: int = 4
    defer_limit: int = 1000
    jitter: tuple[int, int] = (1, 20)
    mempool_capacity: int = 5000
    queue_capacity: int | None = None
    client_timeout: int | None = None

    def __post_init__(self):
        if self.mode not in (BASELINE, COUNTERMEASURES):
            raise ValueError(f"unknown ordering mode {self.mode!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        lo, hi = self.jitter
        if lo < 0 or hi < lo:
            raise ValueError(f"invalid jitter range {self.jitter}")
        if self.mempool_capacity < 1:
            raise ValueError("mempool capacity must be positive")

    @property
    def per_queue_capacity(self) -> int:
        return self.queue_capacity or self.mempool_capacity


class Mempool:
    """Bounded FIFO intake. Rejections are explicit, never silent drops."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._queue: deque[Transaction] = deque()
        self._live: set[str] = set()
        self._seen: set[str] = set()
        self.peak_occupancy = 0
        self.rejected_full = 0
        self.rejected_duplicate = 0

    @property
    def occupancy(self) -> int:
        return len(self._live)

    def __len__(self) -> int:
        return len(self._live)

    def submit(self, tx: Transaction) -> SubmitOutcome:
        if tx.id in self._seen:
            self.rejected_duplicate += 1
            return SubmitOutcome.DUPLICATE
        if len(self._live) >= self.capacity:
            self.rejected_full += 1
            return SubmitOutcome.MEMPOOL_FULL
        self._seen.add(tx.id)
        self._live.add(tx.id)
        self._queue.append(tx)
        if len(self._live) > self.peak_occupancy:
            self.peak_occupancy = len(self._live)
        return SubmitOutcome.ACCEPTED

    def take_next(self) -> Transaction | None:
        queue = self._queue
        live = self._live
        while queue:
            tx = queue.popleft()
            if tx.id in live:
                live.discard(tx.id)
                return tx
        return None

    def discard(self, tx_id: str) -> bool:
        """Logically remove a pending transaction (snatch, client timeout)."""
        if tx_id in self._live:
            self._live.discard(tx_id)
            return True
        return False


# -- countermeasure primitives ----------------------------------------------


def assign_priority(tx: Transaction) -> PriorityClass:
    """Read-only transactions jump the queue; writers keep normal priority."""
    if tx.priority is not PriorityClass.UNASSIGNED:
        raise AlreadyAssignedError(f"{tx.id} already has priority {tx.priority}")
    tx.priority = (
        PriorityClass.READ_HIGH if tx.is_read_only else PriorityClass.WRITE_NORMAL
    )
    return tx.priority


def check_dependencies(
    tx: Transaction,
    committed: set[str],
    failed: set[str],
    in_flight: Iterable[Transaction] = (),
) -> DependencyVerdict:
    """Gate a transaction on declared and data dependencies.

    Declared dependencies must all be committed; a terminally failed
    dependency aborts the transaction.  A conflict with any in-flight
    transaction is an implicit dependency and defers as well.
    """
    deps = tx.declared_deps
    if deps:
        for dep in deps:
            if dep in failed:
                return DependencyVerdict.ABORT
        for dep in deps:
            if dep not in committed:
                return DependencyVerdict.DEFERRED
    for other in in_flight:
        if conflicts_with(tx, other):
            return DependencyVerdict.DEFERRED
    return DependencyVerdict.READY


class OrdererQueue:
    """Per-worker bounded queue with read-priority-first dequeue order."""

    def __init__(self, owner: str, capacity: int):
        self.owner = owner
        self.capacity = capacity
        self._read: deque[Transaction] = deque()
        self._write: deque[Transaction] = deque()
        self._live: set[str] = set()
        self.peak_occupancy = 0

    @property
    def occupancy(self) -> int:
        return len(self._live)

    def __len__(self) -> int:
        return len(self._live)

    def has_space(self) -> bool:
        return len(self._live) < self.capacity

    def append(self, tx: Transaction) -> None:
        self._live.add(tx.id)
        if tx.priority is PriorityClass.READ_HIGH:
            self._read.append(tx)
        else:
            self._write.append(tx)
        if len(self._live) > self.peak_occupancy:
            self.peak_occupancy = len(self._live)

    def take_next(self) -> Transaction | None:
        for queue in (self._read, self._write):
            while queue:
                tx = queue.popleft()
                if tx.id in self._live:
                    self._live.discard(tx.id)
                    return tx
        return None

    def discard(self, tx_id: str) -> bool:
        if tx_id in self._live:
            self._live.discard(tx_id)
            return True
        return False

    def snapshot(self) -> list[Transaction]:
        """Pending transactions in dequeue order (reads first)."""
        live = self._live
        out = [tx for tx in self._read if tx.id in live]
        out.extend(tx for tx in self._write if tx.id in live)
        return out


def partition(txs: list[Transaction], n: int) -> list[OrdererQueue]:
    """Split a workload into n queues, keeping conflicting transactions
    together.

    Groups are the connected components of the shared-wallet relation
    (union-find over read/write footprints, plus declared-dependency edges
    so a dependent transaction always shares a queue with its dependency).
    Groups are dealt round-robin in creation order; within each queue
    transactions keep (priority class, submit time) order.
    """
    if n < 1:
        raise ValueError("need at least one queue")
    parent: dict[str, str] = {}

    def find(x: str) -> str:
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    def union(a: str, b: str) -> str:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[rb] = ra
        return ra

    tx_key: dict[str, str] = {}
    for tx in txs:
        keys = [f"w:{w}" for w in sorted(tx.footprint())]
        keys.append(f"t:{tx.id}")
        for dep in tx.declared_deps:
            keys.append(f"t:{dep}")
        for key in keys:
            parent.setdefault(key, key)
        root = keys[0]
        for key in keys[1:]:
            root = union(root, key)
        tx_key[tx.id] = keys[0]

    group_queue: dict[str, int] = {}
    next_queue = 0
    for tx in txs:  # group creation follows arrival order
        root = find(tx_key[tx.id])
        if root not in group_queue:
            group_queue[root] = next_queue % n
            next_queue += 1

    queues = [OrdererQueue(owner=f"q{i}", capacity=max(len(txs), 1)) for i in range(n)]
    ordered = sorted(
        enumerate(txs),
        key=lambda item: (item[1].priority, item[1].submit_time, item[0]),
    )
    for _, tx in ordered:
        queues[group_queue[find(tx_key[tx.id])]].append(tx)
    return queues


# -- channel commit substrate ------------------------------------------------


class ChannelState:
    """Ledger, chain bookkeeping and status registry for one channel."""

    def __init__(self, channel: str, ledger: LedgerState):
        self.channel = channel
        self.ledger = ledger
        self.statuses: dict[str, TxStatus] = {}
        self.committed: set[str] = set()
        self.failed: set[str] = set()
        self.order_stream: list[str] = []
        self.blocks_this_run = 0
        self.committed_this_run = 0
        self.terminal_listeners: list[Callable[[Transaction, TxStatus], None]] = []
        self._declared: dict[str, frozenset[str]] = {}

    @property
    def chain_length(self) -> int:
        return self.ledger.height

    def status(self, tx_id: str) -> TxStatus:
        return self.statuses.get(tx_id, TxStatus.PENDING)

    def note_declared_deps(self, tx: Transaction) -> None:
        if tx.declared_deps:
            self._declared[tx.id] = tx.declared_deps

    def set_status(self, tx: Transaction, status: TxStatus) -> None:
        current = self.statuses.get(tx.id)
        if current is not None and current.terminal:
            raise ValueError(f"{tx.id}: terminal status {current} already set")
        self.statuses[tx.id] = status
        if status is TxStatus.COMMITTED:
            self.committed.add(tx.id)
        elif status.terminal:
            self.failed.add(tx.id)
        if status.terminal:
            for listener in self.terminal_listeners:
                listener(tx, status)

    def finalize(self, tx: Transaction, *, restamp: bool) -> TxStatus:
        """Validate a pulled transaction against the ledger and commit it.

        Committed writers extend the chain by one single-transaction block;
        failed transactions never occupy block space.
        """
        current = self.statuses.get(tx.id)
        if current is not None and current.terminal:
            return current
        if restamp:
            stamp_read_versions(tx, self.ledger)
        _, status = apply_transaction(self.ledger, tx)
        self.order_stream.append(tx.id)
        if status is TxStatus.COMMITTED:
            self.ledger.committed_tx_count += 1
            self.committed_this_run += 1
            if tx.writes:
                self.ledger.height += 1
                self.blocks_this_run += 1
        self.set_status(tx, status)
        return status

    def dependency_violations(self) -> int:
        """Count declared dependencies that were ordered after (or never
        before) their dependents."""
        position = {tx_id: i for i, tx_id in enumerate(self.order_stream)}
        violations = 0
        for tx_id, deps in self._declared.items():
            pos = position.get(tx_id)
            if pos is None:
                continue
            for dep in deps:
                dep_pos = position.get(dep)
                if dep_pos is None or dep_pos > pos:
                    violations += 1
        return violations


# -- baseline service ---------------------------------------------------------


class BaselineOrderingService:
    """Default ordering: every orderer races on a shared FIFO pool.

    Each orderer repeatedly pulls the next pending transaction, incurs a
    seeded jitter delay plus its own processing cost, and commits a
    single-transaction block at the peer.  Two orderers holding adjacent
    transactions can finish out of pull order, which is the race that breaks
    dependent transactions on some seeds.
    """

    def __init__(
        self,
        engine: Engine,
        channel_state: ChannelState,
        orderers: list[NodeConfig],
        policy: OrderingPolicy,
        peer_id: str | None = None,
    ):
        if not orderers:
            raise ValueError("baseline ordering needs at least one orderer")
        self.engine = engine
        self.state = channel_state
        self.orderers = orderers
        self.policy = policy
        self.peer_id = peer_id
        self.mempool = Mempool(policy.mempool_capacity)
        self._idle = deque(orderers)
        self._lo, self._hi = policy.jitter

    def _jitter(self) -> int:
        lo, hi = self._lo, self._hi
        if hi <= lo:
            return lo
        return lo + int(self.engine.rng.random() * (hi - lo + 1))

    def _commit_latency(self, orderer: NodeConfig) -> int:
        if self.peer_id is None:
            return self.engine.topology.default_latency
        return self.engine.topology.latency(orderer.id, self.peer_id)

    def admit(
        self, tx: Transaction, pinned_orderer: str | None = None
    ) -> SubmitOutcome:
        outcome = self.mempool.submit(tx)
        if outcome is not SubmitOutcome.ACCEPTED:
            return outcome
        self.state.note_declared_deps(tx)
        if pinned_orderer is not None:
            # Scripted scenarios route a transaction to a named orderer, which
            # takes it out of pool order immediately.
            self.mempool.discard(tx.id)
            orderer = self.engine.topology.node(pinned_orderer)
            try:
                self._idle.remove(orderer)
            except ValueError:
                pass
            self._dispatch(orderer, tx)
        elif self._idle:
            self._start_cycle(self._idle.popleft())
        return outcome

    def _start_cycle(self, orderer: NodeConfig) -> None:
        tx = self.mempool.take_next()
        if tx is None:
            self._idle.append(orderer)
            return
        self._dispatch(orderer, tx)

    def _dispatch(self, orderer: NodeConfig, tx: Transaction) -> None:
        delay = self._jitter() + orderer.processing_delay
        at = self.engine.now + delay + self._commit_latency(orderer)
        self.engine.schedule_call(at, COMMIT, orderer.id, self._on_commit, (orderer, tx))

    def _on_commit(self, engine: Engine, payload) -> None:
        orderer, tx = payload
        self.state.finalize(tx, restamp=False)
        self._start_cycle(orderer)

    def peak_occupancy(self) -> int:
        return self.mempool.peak_occupancy

    def drained(self) -> bool:
        return len(self.mempool) == 0


# -- countermeasure pipeline ---------------------------------------------------


class _Group:
    __slots__ = ("queue_index", "seq", "members")

    def __init__(self, queue_index: int, seq: int):
        self.queue_index = queue_index
        self.seq = seq
        # Transactions ever enqueued for this group; pruned on relocation.
        self.members: list = []


class PipelineOrderingService:
    """C2 priority + C1 dependency gating + C4 per-worker queues + C3
    concurrent workers, composed as admission -> partition -> gated drain."""

    def __init__(
        self,
        engine: Engine,
        channel_state: ChannelState,
        policy: OrderingPolicy,
        peer_id: str | None = None,
        withheld_worker: int | None = None,
        worker_nodes: list[NodeConfig] | None = None,
    ):
        self.engine = engine
        self.state = channel_state
        self.policy = policy
        self.peer_id = peer_id
        self.withheld_worker = withheld_worker
        n = policy.workers
        cap = policy.per_queue_capacity
        self.queues = [OrdererQueue(owner=f"worker{i}", capacity=cap) for i in range(n)]
        self.worker_nodes = worker_nodes or []
        self._busy = [False] * n
        self._seen: set[str] = set()
        self.rejected_full = 0
        self.rejected_duplicate = 0
        self.peak_total = 0
        self._total_live = 0
        self._in_flight: dict[str, Transaction] = {}
        self._defer_counts: dict[str, int] = {}
        self._parent: dict[str, str] = {}
        self._groups: dict[str, _Group] = {}
        self._wkeys: dict[str, str] = {}
        self._next_queue = 0
        self._group_seq = 0
        self._retry_scheduled = [False] * n
        self._lo, self._hi = policy.jitter

    # union-find over wallet / transaction-id keys

    def _find(self, key: str) -> str:
        parent = self._parent
        root = key
        while parent[root] != root:
            root = parent[root]
        while parent[key] != root:
            parent[key], key = root, parent[key]
        return root

    def _union(self, a: str, b: str) -> str:
        ra, rb = self._find(a), self._find(b)
        if ra == rb:
            return ra
        ga, gb = self._groups.get(ra), self._groups.get(rb)
        if ga is not None and gb is not None:
            if ga is not gb:
                # Two assigned groups got bridged; the older assignment wins
                # and the younger group's pending transactions relocate.
                keep, drop = (ga, gb) if ga.seq <= gb.seq else (gb, ga)
                self._relocate(drop, keep)
                survivor = keep
            else:
                survivor = ga
        else:
            survivor = ga or gb
        self._parent[rb] = ra
        if survivor is not None:
            self._groups[ra] = survivor
        self._groups.pop(rb, None)
        return ra

    def _relocate(self, source: _Group, dest: _Group) -> None:
        # Move only the source group's still-pending members; other groups
        # sharing the queue stay put.
        src_q = self.queues[source.queue_index]
        moved = [tx for tx in source.members if src_q.discard(tx.id)]
        dest.members.extend(moved)
        if source.queue_index == dest.queue_index:
            for tx in moved:  # same queue: nothing to re-route
                src_q.append(tx)
            return
        dst_q = self.queues[dest.queue_index]
        for tx in moved:
            dst_q.append(tx)
        if moved:
            self._wake(dest.queue_index)

    def _group_for(self, tx: Transaction) -> _Group:
        # Reads are an insertion-ordered dict, so key order stays independent
        # of the per-process string hash seed; stray writes (never produced
        # by the factories) get sorted in.
        parent = self._parent
        wkeys = self._wkeys
        keys = []
        for w in tx.reads:
            key = wkeys.get(w)
            if key is None:
                key = wkeys[w] = "w:" + w
            keys.append(key)
        extra = tx.writes.difference(tx.reads)
        if extra:
            keys.extend("w:" + w for w in sorted(extra))
        # Transaction-id keys carry declared-dependency edges; they are only
        # materialized when some transaction references the id.
        tid = f"t:{tx.id}"
        if tx.declared_deps or tid in parent:
            keys.append(tid)
            for dep in tx.declared_deps:
                keys.append(f"t:{dep}")
        for key in keys:
            if key not in parent:
                parent[key] = key
        root = keys[0]
        for key in keys[1:]:
            root = self._union(root, key)
        root = self._find(root)
        group = self._groups.get(root)
        if group is None:
            group = _Group(self._next_queue % self.policy.workers, self._group_seq)
            self._group_seq += 1
            self._next_queue += 1
            self._groups[root] = group
        return group

    # admission (C2 + C4)

    def admit(self, tx: Transaction) -> SubmitOutcome:
        if tx.id in self._seen:
            self.rejected_duplicate += 1
            return SubmitOutcome.DUPLICATE
        group = self._group_for(tx)
        queue = self.queues[group.queue_index]
        if not queue.has_space():
            self.rejected_full += 1
            return SubmitOutcome.MEMPOOL_FULL
        self._seen.add(tx.id)
        if tx.priority is PriorityClass.UNASSIGNED:
            assign_priority(tx)
        self.state.note_declared_deps(tx)
        queue.append(tx)
        group.members.append(tx)
        self._total_live += 1
        if self._total_live > self.peak_total:
            self.peak_total = self._total_live
        self._wake(group.queue_index)
        return SubmitOutcome.ACCEPTED

    def discard(self, tx_id: str) -> bool:
        for queue in self.queues:
            if queue.discard(tx_id):
                self._total_live -= 1
                return True
        return False

    # drain (C1 + C3)

    def _jitter(self) -> int:
        lo, hi = self._lo, self._hi
        if hi <= lo:
            return lo
        return lo + int(self.engine.rng.random() * (hi - lo + 1))

    def _wake(self, index: int) -> None:
        if self._busy[index] or index == self.withheld_worker:
            return
        queue = self.queues[index]
        state = self.state
        defer_limit = self.policy.defer_limit
        deferred = 0
        budget = len(queue)
        while True:
            tx = queue.take_next()
            if tx is None:
                return
            status = state.statuses.get(tx.id)
            if status is not None and status.terminal:
                self._total_live -= 1
                continue
            verdict = check_dependencies(
                tx, state.committed, state.failed, self._in_flight.values()
            )
            if verdict is DependencyVerdict.READY:
                self._total_live -= 1
                self._dispatch(index, tx)
                return
            if verdict is DependencyVerdict.ABORT:
                self._total_live -= 1
                state.order_stream.append(tx.id)
                state.set_status(tx, TxStatus.CONFLICT_FAILED)
                continue
            count = self._defer_counts.get(tx.id, 0) + 1
            self._defer_counts[tx.id] = count
            if count > defer_limit:
                self._total_live -= 1
                state.set_status(tx, TxStatus.TIMEOUT)
                continue
            queue.append(tx)  # tail of its priority class
            deferred += 1
            if deferred >= budget:
                self._ensure_retry(index)
                return

    def _ensure_retry(self, index: int) -> None:
        # Whole queue deferred: if nothing is in flight anywhere there is no
        # commit event coming to wake us, so poll until defer_limit resolves
        # the stall (cyclic dependencies time out this way).
        if self._in_flight or self._retry_scheduled[index]:
            return
        self._retry_scheduled[index] = True
        self.engine.schedule_call(
            self.engine.now + RETRY_TICK, ORDER_TICK, f"worker{index}",
            self._on_retry, index,
        )

    def _on_retry(self, engine: Engine, index: int) -> None:
        self._retry_scheduled[index] = False
        if len(self.queues[index]):
            self._wake(index)

    def _dispatch(self, index: int, tx: Transaction) -> None:
        self._busy[index] = True
        self._in_flight[tx.id] = tx
        node = self.worker_nodes[index] if index < len(self.worker_nodes) else None
        delay = self._jitter() + (node.processing_delay if node else 0)
        latency = self.engine.topology.default_latency
        if node is not None and self.peer_id is not None:
            latency = self.engine.topology.latency(node.id, self.peer_id)
        self.engine.schedule_call(
            self.engine.now + delay + latency, COMMIT, f"worker{index}",
            self._on_commit, (index, tx),
        )

    def _on_commit(self, engine: Engine, payload) -> None:
        index, tx = payload
        self._in_flight.pop(tx.id, None)
        self._busy[index] = False
        # Re-endorse at ordering time: dependencies were gated, so the
        # transaction executes against the state it was waiting for.
        self.state.finalize(tx, restamp=True)
        self._wake(index)
        # A commit can unblock deferred transactions in other queues.
        for i, busy in enumerate(self._busy):
            if i != index and not busy and len(self.queues[i]):
                self._wake(i)

    @property
    def total_pending(self) -> int:
        return self._total_live

    def peak_queue_occupancy(self) -> int:
        return max(q.peak_occupancy for q in self.queues)

    def drained(self) -> bool:
        return self._total_live == 0 and not self._in_flight
