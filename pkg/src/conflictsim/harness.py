"""Trial execution, sweeps, metrics aggregation and the throughput bench.

Simulation trials measure attack outcomes in logical time and are fully
deterministic in (plan, seeds).  The bench instead drives the countermeasure
pipeline on real concurrent workers against an in-memory ledger and reports
wall-clock throughput; its per-transaction cost models a latency-bound
ordering service (endorsement/consensus round trips), which is the component
parallel ordering actually overlaps.
"""

from __future__ import annotations

import csv
import gc
import io
import threading
import time
from dataclasses import dataclass, field, replace

from .attacks import AttackOutcome, run_attack
from .core import LedgerState, TxStatus, apply_transaction, stamp_read_versions
from .errors import EmptyInputError, StateMismatchError
from .ordering import (
    BASELINE,
    COUNTERMEASURES,
    DependencyVerdict,
    assign_priority,
    check_dependencies,
    partition,
)
from .workload import ConflictSpec, ScenarioConfig, generate_bench_workload

POLICY_CHOICES = (BASELINE, COUNTERMEASURES, "both")

CSV_COLUMNS = [
    "attack", "policy", "conflict_count", "seed", "success", "committed",
    "failed", "pending", "timeout", "chain_sizes", "peak_mempool", "makespan",
]


@dataclass
class TrialPlan:
    scenario: ScenarioConfig
    trials: int = 1
    base_seed: int | None = None
    policy: str = "both"
    sweep: list[int] | None = None
    # Drop per-record ledger snapshots (large sweeps keep counts and peaks).
    lean: bool = False

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.policy not in POLICY_CHOICES:
            raise ValueError(f"policy must be one of {POLICY_CHOICES}")
        if self.sweep is not None:
            if not self.sweep or any(
                b <= a for a, b in zip(self.sweep, self.sweep[1:])
            ):
                raise ValueError("sweep counts must be strictly increasing")

    @property
    def seed0(self) -> int:
        return self.scenario.seed if self.base_seed is None else self.base_seed

    @property
    def modes(self) -> list[str]:
        if self.policy == "both":
            return [BASELINE, COUNTERMEASURES]
        return [self.policy]


@dataclass
class MetricsRecord:
    attack: str
    policy: str
    conflict_count: int
    seed: int
    success: bool
    committed: int
    failed: int
    pending: int
    timeout: int
    chain_sizes: dict[str, int]
    peak_mempool: int
    makespan: int
    peak_queue: int = 0
    outcome: AttackOutcome | None = field(default=None, compare=False, repr=False)

    @classmethod
    def from_outcome(cls, outcome: AttackOutcome) -> "MetricsRecord":
        counts = outcome.status_counts
        return cls(
            attack=outcome.kind,
            policy=outcome.policy_mode,
            conflict_count=outcome.conflict_count,
            seed=outcome.seed,
            success=outcome.success,
            committed=counts["committed"],
            failed=counts["conflict_failed"] + counts["insufficient_funds"]
            + counts["rejected"],
            pending=counts["pending"],
            timeout=counts["timeout"],
            chain_sizes=dict(outcome.chain_sizes),
            peak_mempool=outcome.peak_mempool,
            makespan=outcome.makespan,
            peak_queue=outcome.peak_queue,
            outcome=outcome,
        )


def sweep_scenario(config: ScenarioConfig, count: int) -> ScenarioConfig:
    """Derive a generated-conflicts variant of a scenario for one sweep point.

    Scripted conflict lists are replaced by a synthetic batch of the given
    size over the attack's wallets, and the fixed scripted jitter gives way
    to the default race jitter so ordering contention is seed-driven.
    """
    attack = config.attack
    kind = attack.kind
    window = attack.p_int("sweep_window", 10000)
    if kind == "block_withholding":
        wallets = (
            attack.p_str("attacker_wallet", "A1"),
            attack.p_str("target_from", "V1"),
            attack.p_str("target_to", "V2"),
        )
        spec = ConflictSpec(wallets=wallets, count=count, window=window)
    elif kind == "double_spending":
        wallets = (
            attack.p_str("source", "A1"),
            attack.p_str("victim", "V1"),
            attack.p_str("alt", "A2"),
        )
        spec = ConflictSpec(wallets=wallets, count=count, window=window)
    elif kind == "balance":
        pool = sorted(
            w for w in config.balances
            if w.startswith(attack.p_str("pool_prefix", "W"))
        )
        spec = ConflictSpec(
            wallets=tuple(pool), count=count, window=window,
            channel=attack.p_str("attacked_channel", config.channels[0]),
        )
    elif kind == "ddos":
        accounts = sorted(
            w for w in config.balances
            if w.startswith(attack.p_str("accounts_prefix", "ACC"))
        )
        spec = ConflictSpec(
            wallets=tuple(accounts), count=count, window=0,
            start=attack.p_int("burst", 1000),
        )
    else:
        raise ValueError(f"attack kind {kind} does not support sweeps")
    return replace(
        config,
        conflicts=spec,
        policy=replace(config.policy, jitter=(1, 20)),
        pinned_orderers={},
    )


def run_trials(plan: TrialPlan) -> list[MetricsRecord]:
    """One MetricsRecord per (sweep point, trial, policy); trial i runs with
    seed base_seed + i, and policy=both pairs the modes on identical seeds."""
    from .attacks import _conflict_batch, clone_tx

    records: list[MetricsRecord] = []
    counts = plan.sweep or [None]
    modes = plan.modes
    # Engines and services form reference cycles per trial; generational GC
    # scanning dominates large sweeps, so collect on our own schedule.
    gc_was_enabled = gc.isenabled()
    gc.disable()
    sinced_collect = 0
    try:
        for count in counts:
            config = plan.scenario if count is None else sweep_scenario(
                plan.scenario, count
            )
            for trial in range(plan.trials):
                seed = plan.seed0 + trial
                # Paired modes see the identical conflicting batch; build it
                # once and hand each run its own mutable copy.
                raw = _conflict_batch(config, seed) if len(modes) > 1 else None
                for i, mode in enumerate(modes):
                    if raw is None:
                        batch = None
                    elif i + 1 == len(modes):
                        batch = raw
                    else:
                        batch = [clone_tx(tx) for tx in raw]
                    outcome = run_attack(config, mode, seed, batch)
                    record = MetricsRecord.from_outcome(outcome)
                    if plan.lean:
                        record.outcome = None
                    records.append(record)
                sinced_collect += 1
                if sinced_collect >= 8:
                    sinced_collect = 0
                    gc.collect()
    finally:
        if gc_was_enabled:
            gc.enable()
        gc.collect()
    return records


@dataclass
class SweepSummaryRow:
    attack: str
    policy: str
    conflict_count: int
    trials: int
    successes: int
    mean_makespan: float
    mean_peak_mempool: float

    @property
    def success_rate(self) -> float:
        return self.successes / self.trials


def summarize(records: list[MetricsRecord]) -> list[SweepSummaryRow]:
    if not records:
        raise EmptyInputError("no records to summarize")
    groups: dict[tuple[str, str, int], list[MetricsRecord]] = {}
    for record in records:
        groups.setdefault(
            (record.attack, record.policy, record.conflict_count), []
        ).append(record)
    rows = []
    for (attack, policy, count), members in sorted(groups.items()):
        rows.append(
            SweepSummaryRow(
                attack=attack,
                policy=policy,
                conflict_count=count,
                trials=len(members),
                successes=sum(1 for m in members if m.success),
                mean_makespan=sum(m.makespan for m in members) / len(members),
                mean_peak_mempool=sum(m.peak_mempool for m in members)
                / len(members),
            )
        )
    return rows


def _chain_sizes_cell(chain_sizes: dict[str, int]) -> str:
    return ";".join(f"{ch}:{size}" for ch, size in sorted(chain_sizes.items()))


def render_records(records: list[MetricsRecord], fmt: str = "csv") -> str:
    """Render records deterministically; no wall-clock timestamps."""
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow([
                r.attack, r.policy, r.conflict_count, r.seed,
                "true" if r.success else "false",
                r.committed, r.failed, r.pending, r.timeout,
                _chain_sizes_cell(r.chain_sizes), r.peak_mempool, r.makespan,
            ])
        return buf.getvalue()
    if fmt == "text":
        lines = []
        for r in records:
            lines.append(
                " ".join(
                    f"{col}={val}" for col, val in zip(CSV_COLUMNS, [
                        r.attack, r.policy, r.conflict_count, r.seed,
                        "true" if r.success else "false",
                        r.committed, r.failed, r.pending, r.timeout,
                        _chain_sizes_cell(r.chain_sizes), r.peak_mempool,
                        r.makespan,
                    ])
                )
            )
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown format {fmt!r}")


def render_summary(rows: list[SweepSummaryRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([
        "attack", "policy", "conflict_count", "trials", "successes",
        "success_rate", "mean_makespan", "mean_peak_mempool",
    ])
    for row in rows:
        writer.writerow([
            row.attack, row.policy, row.conflict_count, row.trials,
            row.successes, f"{row.success_rate:.4f}",
            f"{row.mean_makespan:.1f}", f"{row.mean_peak_mempool:.1f}",
        ])
    return buf.getvalue()


def write_results(records: list[MetricsRecord], path: str, fmt: str = "csv") -> None:
    with open(path, "w") as fh:
        fh.write(render_records(records, fmt))


# -- throughput bench -----------------------------------------------------------


@dataclass
class BenchRow:
    mode: str
    rep: int
    txs: int
    workers: int
    elapsed: float
    tps: float
    state_ok: bool


@dataclass
class BenchReport:
    rows: list[BenchRow]
    baseline_tps: float
    pipeline_tps: float

    @property
    def speedup(self) -> float:
        return self.pipeline_tps / self.baseline_tps if self.baseline_tps else 0.0


def _service_cost(io_delay_s: float) -> None:
    if io_delay_s > 0:
        time.sleep(io_delay_s)


def _bench_baseline(balances, txs, io_delay_s) -> tuple[LedgerState, float]:
    ledger = LedgerState.from_balances(balances)
    start = time.perf_counter()
    for tx in txs:
        _service_cost(io_delay_s)
        stamp_read_versions(tx, ledger)
        _, status = apply_transaction(ledger, tx)
        if status is TxStatus.COMMITTED:
            ledger.committed_tx_count += 1
            if tx.writes:
                ledger.height += 1
    return ledger, time.perf_counter() - start


def _drain_queue(queue, ledger, committed, failed, lock, io_delay_s) -> None:
    while True:
        tx = queue.take_next()
        if tx is None:
            return
        verdict = check_dependencies(tx, committed, failed)
        if verdict is DependencyVerdict.ABORT:
            with lock:
                failed.add(tx.id)
            continue
        # Queues are conflict-closed, so within one queue sequential order
        # satisfies every data dependency; declared deps land in the same
        # queue via the partition's dependency edges.
        _service_cost(io_delay_s)
        with lock:
            stamp_read_versions(tx, ledger)
            _, status = apply_transaction(ledger, tx)
            if status is TxStatus.COMMITTED:
                committed.add(tx.id)
                ledger.committed_tx_count += 1
                if tx.writes:
                    ledger.height += 1
            else:
                failed.add(tx.id)


def _bench_pipeline(
    balances, txs, workers, io_delay_s, parallel: bool
) -> tuple[LedgerState, float]:
    for tx in txs:
        assign_priority(tx)
    queues = partition(txs, workers)
    ledger = LedgerState.from_balances(balances)
    committed: set[str] = set()
    failed: set[str] = set()
    lock = threading.Lock()
    start = time.perf_counter()
    if parallel:
        threads = [
            threading.Thread(
                target=_drain_queue,
                args=(q, ledger, committed, failed, lock, io_delay_s),
            )
            for q in queues
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    else:
        for q in queues:
            _drain_queue(q, ledger, committed, failed, lock, io_delay_s)
    return ledger, time.perf_counter() - start


def bench_throughput(
    txs: int,
    read_ratio: float,
    workers: int,
    reps: int = 3,
    io_delay_us: int = 120,
    n_wallets: int = 2000,
    seed: int = 0,
) -> BenchReport:
    """Measure wall-clock ordering throughput, baseline vs pipeline.

    Every pipeline rep is checked against a single-context reference run of
    the same partitioned schedule; divergence raises StateMismatchError.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if txs < 1:
        raise ValueError("workload must be non-empty")
    io_delay_s = io_delay_us / 1_000_000
    rows: list[BenchRow] = []
    base_elapsed: list[float] = []
    pipe_elapsed: list[float] = []
    for rep in range(reps):
        balances, workload = generate_bench_workload(
            txs, read_ratio, n_wallets=n_wallets, seed=seed + rep
        )
        _, b_time = _bench_baseline(balances, workload, io_delay_s)

        balances, workload = generate_bench_workload(
            txs, read_ratio, n_wallets=n_wallets, seed=seed + rep
        )
        p_ledger, p_time = _bench_pipeline(
            balances, workload, workers, io_delay_s, parallel=True
        )
        balances, workload = generate_bench_workload(
            txs, read_ratio, n_wallets=n_wallets, seed=seed + rep
        )
        ref_ledger, _ = _bench_pipeline(
            balances, workload, workers, 0.0, parallel=False
        )
        state_ok = p_ledger == ref_ledger
        if not state_ok:
            raise StateMismatchError(
                f"rep {rep}: parallel ledger diverged from serial reference"
            )
        base_elapsed.append(b_time)
        pipe_elapsed.append(p_time)
        rows.append(BenchRow(BASELINE, rep, txs, 1, b_time, txs / b_time, True))
        rows.append(
            BenchRow(COUNTERMEASURES, rep, txs, workers, p_time, txs / p_time, True)
        )
    baseline_tps = txs * len(base_elapsed) / sum(base_elapsed)
    pipeline_tps = txs * len(pipe_elapsed) / sum(pipe_elapsed)
    return BenchReport(rows, baseline_tps, pipeline_tps)


def render_bench(report: BenchReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["mode", "rep", "txs", "workers", "elapsed_s", "tps", "state_ok"])
    for row in report.rows:
        writer.writerow([
            row.mode, row.rep, row.txs, row.workers,
            f"{row.elapsed:.4f}", f"{row.tps:.1f}",
            "true" if row.state_ok else "false",
        ])
    writer.writerow([])
    writer.writerow(["speedup", f"{report.speedup:.2f}"])
    return buf.getvalue()
