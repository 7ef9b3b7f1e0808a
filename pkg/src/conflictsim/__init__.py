"""Deterministic simulator of conflicting-transaction attacks on a
permissioned execute-order-validate ledger, with an ordering-countermeasure
pipeline and an experiment harness."""

from .core import (
    Block,
    LedgerState,
    PriorityClass,
    Query,
    Transaction,
    Transfer,
    TxStatus,
    apply_transaction,
    commit_block,
    conflicts_with,
    query_tx,
    total_supply,
    transfer_tx,
)
from .ordering import (
    DependencyVerdict,
    Mempool,
    OrdererQueue,
    OrderingPolicy,
    SubmitOutcome,
    assign_priority,
    check_dependencies,
    partition,
)
from .simnet import Engine, Event, NodeConfig, Topology
from .workload import (
    ConflictSpec,
    ScenarioConfig,
    generate_conflicting_set,
    load_scenario,
    save_scenario,
)
from .attacks import AttackOutcome, recompute_success, run_attack
from .harness import (
    MetricsRecord,
    TrialPlan,
    bench_throughput,
    run_trials,
    summarize,
    write_results,
)

__version__ = "0.1.0"
