"""Ordering services: mempool bounds, countermeasure ops, race behaviour."""

import itertools
import random

import pytest

from conflictsim.core import (
    LedgerState,
    PriorityClass,
    TxStatus,
    apply_transaction,
    conflicts_with,
    query_tx,
    stamp_read_versions,
    transfer_tx,
)
from conflictsim.errors import AlreadyAssignedError
from conflictsim.ordering import (
    BASELINE,
    COUNTERMEASURES,
    BaselineOrderingService,
    ChannelState,
    DependencyVerdict,
    Mempool,
    OrdererQueue,
    OrderingPolicy,
    PipelineOrderingService,
    SubmitOutcome,
    assign_priority,
    check_dependencies,
    partition,
)
from conflictsim.simnet import SUBMIT, Engine, NodeConfig, Topology


# -- mempool ---------------------------------------------------------------


def test_submit_accepts_below_capacity():
    pool = Mempool(capacity=5000)
    for i in range(4999):
        assert pool.submit(transfer_tx(f"t{i}", "a", "b", 1)) is SubmitOutcome.ACCEPTED
    assert pool.submit(transfer_tx("last", "a", "b", 1)) is SubmitOutcome.ACCEPTED
    assert pool.occupancy == 5000


def test_submit_rejects_at_capacity_without_peak_change():
    pool = Mempool(capacity=3)
    for i in range(3):
        pool.submit(transfer_tx(f"t{i}", "a", "b", 1))
    peak = pool.peak_occupancy
    assert pool.submit(transfer_tx("t3", "a", "b", 1)) is SubmitOutcome.MEMPOOL_FULL
    assert pool.peak_occupancy == peak == 3
    assert pool.rejected_full == 1


def test_submit_rejects_duplicate_id():
    pool = Mempool(capacity=10)
    pool.submit(transfer_tx("t0", "a", "b", 1))
    assert pool.submit(transfer_tx("t0", "a", "b", 2)) is SubmitOutcome.DUPLICATE


def test_mempool_bound_and_peak_shadow_counter():
    rng = random.Random(3)
    pool = Mempool(capacity=8)
    live = 0
    shadow_peak = 0
    for i in range(500):
        if rng.random() < 0.6:
            if pool.submit(transfer_tx(f"x{i}", "a", "b", 1)) is SubmitOutcome.ACCEPTED:
                live += 1
        else:
            if pool.take_next() is not None:
                live -= 1
        shadow_peak = max(shadow_peak, live)
        assert pool.occupancy == live <= 8
    assert pool.peak_occupancy == shadow_peak


# -- priority (C2) ------------------------------------------------------------


def test_assign_priority_read_vs_write():
    q = query_tx("q", ("V1",))
    assert assign_priority(q) is PriorityClass.READ_HIGH
    t = transfer_tx("t", "A1", "V1", 100)
    assert assign_priority(t) is PriorityClass.WRITE_NORMAL


def test_assign_priority_only_once():
    q = query_tx("q", ("V1",))
    assign_priority(q)
    with pytest.raises(AlreadyAssignedError):
        assign_priority(q)


def test_within_class_fifo_by_submit_time():
    queue = OrdererQueue("q0", capacity=10)
    late = query_tx("late", ("V1",), submit_time=7)
    early = query_tx("early", ("V1",), submit_time=3)
    for tx in (early, late):
        assign_priority(tx)
        queue.append(tx)
    assert queue.take_next().id == "early"
    assert queue.take_next().id == "late"


def test_read_high_dequeues_before_writes():
    queue = OrdererQueue("q0", capacity=10)
    txs = [transfer_tx("w1", "a", "b", 1), transfer_tx("w2", "b", "c", 1),
           query_tx("r1", ("a",)), transfer_tx("w3", "c", "a", 1),
           query_tx("r2", ("b",))]
    for tx in txs:
        assign_priority(tx)
        queue.append(tx)
    order = [queue.take_next().id for _ in range(5)]
    assert order == ["r1", "r2", "w1", "w2", "w3"]


def test_first_dequeue_is_read_whenever_reads_pending():
    rng = random.Random(11)
    for _ in range(50):
        queue = OrdererQueue("q0", capacity=64)
        pending_reads = 0
        for i in range(rng.randint(1, 20)):
            if rng.random() < 0.4:
                tx = query_tx(f"r{i}", ("a",))
                pending_reads += 1
            else:
                tx = transfer_tx(f"w{i}", "a", "b", 1)
            assign_priority(tx)
            queue.append(tx)
        first = queue.take_next()
        if pending_reads:
            assert first.priority is PriorityClass.READ_HIGH


# -- dependency gate (C1) -------------------------------------------------------


def test_no_deps_and_no_conflicts_is_ready():
    tx = transfer_tx("t", "a", "b", 1)
    assert check_dependencies(tx, set(), set(), []) is DependencyVerdict.READY


def test_pending_dep_defers():
    tx = transfer_tx("t", "a", "b", 1, deps=("d1", "d2"))
    verdict = check_dependencies(tx, {"d1"}, set(), [])
    assert verdict is DependencyVerdict.DEFERRED


def test_failed_dep_aborts():
    tx = transfer_tx("t", "a", "b", 1, deps=("d1",))
    assert check_dependencies(tx, set(), {"d1"}, []) is DependencyVerdict.ABORT


def test_conflicting_in_flight_defers():
    tx = transfer_tx("t", "a", "b", 1)
    in_flight = [transfer_tx("other", "b", "c", 1)]
    assert check_dependencies(tx, set(), set(), in_flight) is DependencyVerdict.DEFERRED


# -- partition (C4) ----------------------------------------------------------------


def test_disjoint_transactions_spread_one_per_queue():
    txs = [transfer_tx(f"t{i}", f"a{i}", f"b{i}", 1) for i in range(4)]
    queues = partition(txs, 4)
    assert [len(q) for q in queues] == [1, 1, 1, 1]


def test_shared_wallet_groups_stay_together():
    txs = [
        transfer_tx("t1", "A1", "V1", 1),
        transfer_tx("t2", "V1", "V2", 1),
        transfer_tx("t3", "X", "Y", 1),
    ]
    queues = partition(txs, 2)
    assert [tx.id for tx in queues[0].snapshot()] == ["t1", "t2"]
    assert [tx.id for tx in queues[1].snapshot()] == ["t3"]


def test_single_queue_orders_priority_then_fifo():
    txs = [
        transfer_tx("w1", "a", "b", 1, submit_time=1),
        query_tx("r1", ("a",), submit_time=5),
        transfer_tx("w2", "b", "c", 1, submit_time=2),
        query_tx("r2", ("c",), submit_time=3),
    ]
    for tx in txs:
        assign_priority(tx)
    (queue,) = partition(txs, 1)
    assert [tx.id for tx in queue.snapshot()] == ["r2", "r1", "w1", "w2"]


def _union_find_oracle(txs):
    """Reference grouping: connected components of the pairwise conflict
    relation plus declared-dependency edges."""
    index = {tx.id: i for i, tx in enumerate(txs)}
    parent = list(range(len(txs)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i, j):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[rj] = ri

    for i, a in enumerate(txs):
        for j in range(i + 1, len(txs)):
            b = txs[j]
            shared = (a.footprint() & b.footprint())
            if shared and (a.writes or b.writes) and conflicts_with(a, b):
                union(i, j)
            elif shared:
                pass
        for dep in a.declared_deps:
            if dep in index:
                union(i, index[dep])
    groups = {}
    for i, tx in enumerate(txs):
        groups.setdefault(find(i), set()).add(tx.id)
    return {frozenset(members) for members in groups.values()}


def test_partition_matches_union_find_oracle():
    rng = random.Random(17)
    wallets = [f"w{i}" for i in range(12)]
    for trial in range(40):
        txs = []
        for i in range(rng.randint(2, 24)):
            if rng.random() < 0.25:
                txs.append(query_tx(f"q{trial}-{i}", (rng.choice(wallets),),
                                    submit_time=i))
            else:
                src, dst = rng.sample(wallets, 2)
                txs.append(transfer_tx(f"t{trial}-{i}", src, dst, 1,
                                       submit_time=i))
        queues = partition(txs, rng.randint(1, 5))
        got = {
            frozenset(tx.id for tx in q.snapshot())
            for q in queues if len(q)
        }
        # Queues may hold several groups; every oracle group must sit inside
        # exactly one queue.
        oracle = _union_find_oracle(txs)
        for group in oracle:
            holders = [q for q in queues
                       if group & {tx.id for tx in q.snapshot()}]
            assert len(holders) == 1
            assert group <= {tx.id for tx in holders[0].snapshot()}
        assert got  # partition produced output


# -- service-level helpers -----------------------------------------------------------


def _drive(txs, mode, seed, *, workers=3, jitter=(1, 20), balances=None,
           defer_limit=1000, deadline=100_000, queue_capacity=None):
    balances = balances or {"P": 1000, "Q": 100, "R": 1000, "X": 1000, "Y": 1000}
    orderers = [NodeConfig(f"o{i}", role="orderer") for i in range(1, workers + 1)]
    topo = Topology(
        nodes=[NodeConfig("client", role="client")] + orderers
        + [NodeConfig("peer1", role="peer")],
        default_latency=5,
    )
    engine = Engine(seed=seed, topology=topo)
    state = ChannelState("main", LedgerState.from_balances(balances))
    policy = OrderingPolicy(
        mode=mode, workers=workers, jitter=jitter, defer_limit=defer_limit,
        mempool_capacity=5000, queue_capacity=queue_capacity,
    )
    if mode == BASELINE:
        service = BaselineOrderingService(engine, state, orderers, policy, "peer1")
    else:
        service = PipelineOrderingService(engine, state, policy, "peer1",
                                          worker_nodes=orderers)

    def arrive(e, tx):
        stamp_read_versions(tx, state.ledger)
        service.admit(tx)

    for tx in txs:
        engine.schedule_call(tx.submit_time + 5, SUBMIT, "client", arrive, tx)
    engine.run_until(deadline)
    return state, service


def fig1_txs():
    return [
        transfer_tx("tx1", "X", "Y", 10),
        transfer_tx("tx2", "P", "Q", 50),
        transfer_tx("tx3", "Q", "R", 30, deps=("tx2",)),
        transfer_tx("tx4", "Y", "X", 5),
        transfer_tx("tx5", "X", "Y", 7),
    ]


# -- baseline ordering ---------------------------------------------------------------


def test_single_orderer_zero_jitter_preserves_submission_order():
    txs = [transfer_tx(f"t{i}", "P", "R", 1, submit_time=i) for i in range(6)]
    state, _ = _drive(txs, BASELINE, seed=0, workers=1, jitter=(0, 0))
    assert state.order_stream == [f"t{i}" for i in range(6)]


def test_baseline_race_reorders_dependent_pair_on_some_seed():
    hits = []
    for seed in range(100):
        state, _ = _drive(fig1_txs(), BASELINE, seed=seed)
        stream = state.order_stream
        if stream.index("tx3") < stream.index("tx2"):
            hits.append(seed)
            assert state.status("tx2") is TxStatus.CONFLICT_FAILED
            assert state.status("tx3") is TxStatus.COMMITTED
    assert hits, "expected at least one dependency-violating seed in 0..99"


def test_baseline_same_seed_identical_stream():
    a, _ = _drive(fig1_txs(), BASELINE, seed=42)
    b, _ = _drive(fig1_txs(), BASELINE, seed=42)
    assert a.order_stream == b.order_stream
    assert a.statuses == b.statuses


# -- pipeline ordering -----------------------------------------------------------------


def test_pipeline_fig1_all_seeds_and_worker_counts():
    for workers in (1, 2, 3, 4):
        for seed in range(100):
            state, _ = _drive(fig1_txs(), COUNTERMEASURES, seed=seed,
                              workers=workers)
            stream = state.order_stream
            assert stream.index("tx2") < stream.index("tx3")
            assert state.status("tx2") is TxStatus.COMMITTED
            assert state.status("tx3") is TxStatus.COMMITTED
            assert state.dependency_violations() == 0


def test_pipeline_dependent_commit_indexes_ordered():
    rng = random.Random(5)
    wallets = ["P", "Q", "R", "X", "Y"]
    for trial in range(20):
        txs = []
        for i in range(10):
            src, dst = rng.sample(wallets, 2)
            deps = ()
            if txs and rng.random() < 0.4:
                deps = (rng.choice(txs).id,)
            txs.append(transfer_tx(f"t{trial}-{i}", src, dst, rng.randint(1, 5),
                                   deps=deps, submit_time=i))
        state, _ = _drive(txs, COUNTERMEASURES, seed=trial)
        order = {tx_id: i for i, tx_id in enumerate(state.order_stream)}
        for tx in txs:
            if state.status(tx.id) is not TxStatus.COMMITTED:
                continue
            for dep in tx.declared_deps:
                assert state.status(dep) is TxStatus.COMMITTED
                assert order[dep] < order[tx.id]


def test_pipeline_final_state_matches_some_serial_execution():
    rng = random.Random(9)
    wallets = ["P", "Q", "R"]
    balances = {w: 50 for w in wallets}
    for trial in range(25):
        txs = []
        for i in range(rng.randint(2, 8)):
            src, dst = rng.sample(wallets, 2)
            txs.append(transfer_tx(f"t{trial}-{i}", src, dst,
                                   rng.randint(1, 30), submit_time=i))
        state, _ = _drive(txs, COUNTERMEASURES, seed=trial, balances=balances)
        committed = [tx for tx in txs if state.status(tx.id) is TxStatus.COMMITTED]
        found = False
        for perm in itertools.permutations(committed):
            ledger = LedgerState.from_balances(balances)
            ok = True
            for tx in perm:
                probe = transfer_tx(tx.id, tx.payload.src, tx.payload.dst,
                                    tx.payload.amount)
                stamp_read_versions(probe, ledger)
                _, status = apply_transaction(ledger, probe)
                if status is not TxStatus.COMMITTED:
                    ok = False
                    break
            if ok and ledger.balances == state.ledger.balances:
                found = True
                break
        assert found, f"no serial witness for trial {trial}"


def test_pipeline_all_conflicting_uses_single_queue():
    txs = [transfer_tx(f"t{i}", "P", "Q", 1, submit_time=i) for i in range(12)]
    state, service = _drive(txs, COUNTERMEASURES, seed=1, workers=4)
    used = [q for q in service.queues if q.peak_occupancy > 0]
    assert len(used) == 1
    assert state.ledger.committed_tx_count == 12


def test_pipeline_defer_limit_times_out_cyclic_deps():
    txs = [
        transfer_tx("a", "P", "Q", 1, deps=("b",), submit_time=0),
        transfer_tx("b", "Q", "R", 1, deps=("a",), submit_time=0),
    ]
    state, _ = _drive(txs, COUNTERMEASURES, seed=1, defer_limit=5)
    # The first to exhaust its deferrals times out; the survivor then sees a
    # terminally failed dependency and aborts. Either way the run terminates.
    assert state.status("a") is TxStatus.TIMEOUT
    assert state.status("b") is TxStatus.CONFLICT_FAILED


def test_pipeline_aborts_dependent_of_failed_tx():
    txs = [
        transfer_tx("broke", "Q", "P", 9999, submit_time=0),  # insufficient
        transfer_tx("child", "P", "R", 1, deps=("broke",), submit_time=1),
    ]
    state, _ = _drive(txs, COUNTERMEASURES, seed=1)
    assert state.status("broke") is TxStatus.INSUFFICIENT_FUNDS
    assert state.status("child") is TxStatus.CONFLICT_FAILED


def test_pipeline_logical_makespan_beats_baseline_at_scale():
    # Read-heavy many-wallet workload: four workers drain it in well under
    # half the single-orderer baseline's logical time.
    from conflictsim.workload import generate_bench_workload

    _, txs = generate_bench_workload(4000, read_ratio=0.8, n_wallets=400, seed=3)
    balances = {f"B{i:05d}": 1000 for i in range(400)}
    for tx in txs:
        tx.submit_time = 0

    def run(mode, workers):
        orderers = [NodeConfig(f"o{i}", role="orderer") for i in range(workers)]
        topo = Topology(nodes=[NodeConfig("client", role="client")] + orderers
                        + [NodeConfig("peer1", role="peer")], default_latency=5)
        engine = Engine(seed=2, topology=topo)
        state = ChannelState("main", LedgerState.from_balances(balances))
        policy = OrderingPolicy(mode=mode, workers=workers, jitter=(1, 20),
                                mempool_capacity=100_000)
        if mode == BASELINE:
            service = BaselineOrderingService(engine, state, orderers, policy,
                                              "peer1")
        else:
            service = PipelineOrderingService(engine, state, policy, "peer1",
                                              worker_nodes=orderers)

        def arrive(e, tx):
            stamp_read_versions(tx, state.ledger)
            service.admit(tx)

        for tx in txs:
            engine.schedule_call(0, SUBMIT, "client", arrive, _fresh(tx))
        engine.run_until(10_000_000)
        terminal = len(state.committed) + len(state.failed)
        assert terminal == len(txs)  # fully drained
        return engine.last_event_time

    baseline_span = run(BASELINE, 1)
    pipeline_span = run(COUNTERMEASURES, 4)
    assert pipeline_span <= baseline_span / 2


def _fresh(tx):
    from conflictsim.attacks import clone_tx

    dup = clone_tx(tx)
    dup.priority = PriorityClass.UNASSIGNED
    dup.reads = {w: 0 for w in dup.reads}
    return dup


def test_terminal_status_never_overwritten():
    state = ChannelState("main", LedgerState.from_balances({"a": 10, "b": 0}))
    tx = transfer_tx("t", "a", "b", 1)
    state.set_status(tx, TxStatus.COMMITTED)
    with pytest.raises(ValueError):
        state.set_status(tx, TxStatus.TIMEOUT)
    held = transfer_tx("h", "a", "b", 1)
    state.set_status(held, TxStatus.WITHHELD)  # non-terminal, may change
    state.set_status(held, TxStatus.TIMEOUT)
    assert state.status("h") is TxStatus.TIMEOUT


def test_group_merge_relocates_only_bridged_group():
    # g0 = {a,b} on queue 0, g1 = {c,d} on queue 1, g2 = {e,f} on queue 2; a
    # bridge touching b and c must pull g1's pending into queue 0 and leave
    # g2 untouched.
    orderers = [NodeConfig(f"o{i}", role="orderer") for i in range(3)]
    topo = Topology(
        nodes=[NodeConfig("client", role="client")] + orderers
        + [NodeConfig("peer1", role="peer")],
        default_latency=5,
    )
    engine = Engine(seed=1, topology=topo)
    balances = {w: 100 for w in "abcdef"}
    state = ChannelState("main", LedgerState.from_balances(balances))
    policy = OrderingPolicy(mode=COUNTERMEASURES, workers=3, jitter=(0, 0),
                            mempool_capacity=100)
    service = PipelineOrderingService(engine, state, policy, "peer1",
                                      worker_nodes=orderers)

    def admit(tx):
        stamp_read_versions(tx, state.ledger)
        assert service.admit(tx) is SubmitOutcome.ACCEPTED

    seeds = [transfer_tx("s0", "a", "b", 1), transfer_tx("s1", "c", "d", 1),
             transfer_tx("s2", "e", "f", 1)]
    for tx in seeds:
        admit(tx)
    # Workers are busy with the seeds; queue up one more per group.
    waiting = [transfer_tx("w0", "b", "a", 1), transfer_tx("w1", "d", "c", 1),
               transfer_tx("w2", "f", "e", 1)]
    for tx in waiting:
        admit(tx)
    assert [len(q) for q in service.queues] == [1, 1, 1]
    admit(transfer_tx("bridge", "b", "c", 2))
    # g1's pending member moved to queue 0 along with the bridge; g2 stayed.
    assert len(service.queues[1]) == 0
    assert len(service.queues[2]) == 1
    assert {tx.id for tx in service.queues[0].snapshot()} == {"w0", "w1", "bridge"}
    engine.run_until(10_000)
    assert state.status("bridge") is TxStatus.COMMITTED
    assert all(state.status(tx.id) is TxStatus.COMMITTED
               for tx in seeds + waiting)
