"""Attack orchestration: scripted adversary behaviours over the simulation.

Each attack runs as event handlers on the engine with an explicit phase log
and a success predicate that is recomputable from the recorded outcome
fields.  Conflicting batches come from the scenario's conflict source; the
orchestrators add the attack's own traffic (targeted transfers, valid
background workload) deterministically from the trial seed.
"""

from __future__ import annotations

import copy
import random
from dataclasses import dataclass, field, replace

from .core import (
    LedgerState,
    Transaction,
    Transfer,
    TxStatus,
    apply_transaction,
    stamp_read_versions,
    total_supply,
    transfer_tx,
    query_tx,
)
from .errors import ScenarioMismatchError
from .ordering import (
    BASELINE,
    BaselineOrderingService,
    ChannelState,
    PipelineOrderingService,
    SubmitOutcome,
)
from .simnet import ATTACK_PHASE, SUBMIT, TIMEOUT, Engine
from .workload import ConflictSpec, ScenarioConfig, generate_conflicting_set

# Pre-condition phases that every outcome of a kind must contain.
PRECONDITION_PHASES = {
    "block_withholding": ("P1", "P2", "P3"),
    "double_spending": ("P1", "P2", "P3", "P4"),
    "balance": ("P1", "P2", "P3", "P4"),
    "ddos": ("P1", "P2"),
    "ordering_race": ("P1",),
}


class PhaseRecorder:
    """Phase log with strictly increasing entry timestamps."""

    def __init__(self):
        self.log: list[tuple[str, int]] = []
        self._entered: set[str] = set()

    def enter(self, phase: str, t: int) -> None:
        if phase in self._entered:
            return
        if self.log and t <= self.log[-1][1]:
            t = self.log[-1][1] + 1
        self._entered.add(phase)
        self.log.append((phase, t))

    def entered(self, phase: str) -> bool:
        return phase in self._entered


@dataclass
class AttackOutcome:
    kind: str
    policy_mode: str
    seed: int
    success: bool
    phase_log: list[tuple[str, int]]
    ledgers: dict[str, LedgerState]
    chain_sizes: dict[str, int]
    pending: dict[str, int]
    balance_deltas: dict[str, dict[str, int]]
    status_counts: dict[str, int]
    submitted: int
    conflict_count: int
    peak_mempool: int
    peak_queue: int
    makespan: int
    dep_violations: int
    facts: dict[str, object] = field(default_factory=dict)


def recompute_success(outcome: AttackOutcome) -> bool:
    """Re-derive the success flag from recorded outcome fields only."""
    facts = outcome.facts
    kind = outcome.kind
    if kind == "block_withholding":
        return (not facts["target_committed"]) and facts["attacker_delta"] > 0
    if kind == "double_spending":
        return (
            facts["double_spend_committed"]
            and not facts["valid_committed"]
            and facts["asset_delivered"]
        )
    if kind == "balance":
        lagging = facts["attacked_channel"]
        reference = facts["reference_channel"]
        return (
            outcome.chain_sizes[reference] > outcome.chain_sizes[lagging]
            and facts["replay_committed"]
        )
    if kind == "ddos":
        overflowed = outcome.peak_mempool >= facts["mempool_capacity"]
        return overflowed and facts["valid_fail_rate"] > facts["theta"]
    if kind == "ordering_race":
        return outcome.dep_violations >= 1
    raise ValueError(f"unknown attack kind {kind}")


def clone_tx(tx: Transaction) -> Transaction:
    # Shallow copy with a private reads dict; payload/writes/deps are never
    # mutated in place, so sharing them is safe.
    dup = copy.copy(tx)
    dup.reads = dict(tx.reads)
    return dup


class SimulationRun:
    """Shared machinery: channels, ordering services, submission plumbing."""

    def __init__(self, config: ScenarioConfig, mode: str, seed: int):
        self.config = config
        self.mode = mode
        self.seed = seed
        policy = replace(config.policy, mode=mode)
        self.policy = policy
        self.engine = Engine(seed=seed * 4 + 3, topology=config.topology)
        self.phases = PhaseRecorder()
        self.channels: dict[str, ChannelState] = {}
        self.services: dict[str, object] = {}
        self.valid_ids: set[str] = set()
        self.adversary_ids: set[str] = set()
        self.rejected: dict[str, str] = {}
        self.submitted_ids: set[str] = set()
        self.all_txs: dict[str, Transaction] = {}
        self.pinned = dict(config.pinned_orderers)
        self._plan: list = []
        self._latency_cache: dict[str, int] = {}
        self.conflict_count = config.conflict_count

        attack = config.attack
        init_height = attack.p_int("initial_height", 0)
        init_count = attack.p_int("initial_tx_count", init_height)
        for channel in config.channels:
            ledger = LedgerState.from_balances(
                config.balances, height=init_height, tx_count=init_count
            )
            state = ChannelState(channel, ledger)
            self.channels[channel] = state
            peers = [
                n for n in config.topology.nodes
                if n.role == "peer" and channel in n.channels
            ]
            peer_id = peers[0].id if peers else None
            orderers = config.topology.orderers(channel)
            honest = [o for o in orderers if not o.is_adversary]
            if policy.mode == BASELINE:
                # The adversary orderer participates in the shared pull loop
                # only when it is not busy withholding (block withholding
                # manages it out of band).
                cycling = honest if attack.kind == "block_withholding" else orderers
                if not cycling:
                    raise ScenarioMismatchError(
                        f"channel {channel} has no usable orderer"
                    )
                self.services[channel] = BaselineOrderingService(
                    self.engine, state, cycling, policy, peer_id
                )
            else:
                withheld = None
                if attack.kind == "block_withholding":
                    for i, node in enumerate(orderers):
                        if node.is_adversary:
                            withheld = i % policy.workers
                            break
                self.services[channel] = PipelineOrderingService(
                    self.engine, state, policy, peer_id,
                    withheld_worker=withheld, worker_nodes=orderers,
                )

    # -- submission plumbing ------------------------------------------------

    def client_latency(self, submitter: str) -> int:
        cached = self._latency_cache.get(submitter)
        if cached is not None:
            return cached
        topo = self.config.topology
        latency = topo.default_latency
        if topo.has_node(submitter):
            node = topo.node(submitter)
            if node.latency is not None:
                latency = node.latency
        self._latency_cache[submitter] = latency
        return latency

    def submit(
        self,
        tx: Transaction,
        *,
        valid: bool,
        via: str | None = None,
        timeout: int | None = None,
        on_arrival=None,
    ) -> None:
        """Plan endorsement + admission at submit_time + client latency."""
        submitter = via or tx.submitter
        arrive_at = tx.submit_time + self.client_latency(submitter)
        self.all_txs[tx.id] = tx
        if valid:
            self.valid_ids.add(tx.id)
        else:
            self.adversary_ids.add(tx.id)
        self._plan.append((arrive_at, tx, timeout, on_arrival, submitter))

    def _flush_submissions(self) -> None:
        # Consecutive same-instant arrivals share one event: their relative
        # order already equals schedule order, so commit events (scheduled
        # later, higher seq) still interleave correctly between instants.
        plan = self._plan
        self._plan = []
        plan.sort(key=lambda item: item[0])
        i, n = 0, len(plan)
        while i < n:
            j = i + 1
            at = plan[i][0]
            while j < n and plan[j][0] == at:
                j += 1
            self.engine.schedule_call(
                at, SUBMIT, plan[i][4], self._on_arrivals, plan[i:j]
            )
            i = j

    def _on_arrivals(self, engine: Engine, group) -> None:
        submitted = self.submitted_ids
        channels = self.channels
        services = self.services
        rejected = self.rejected
        pinned_map = self.pinned
        for _, tx, timeout, hook, _submitter in group:
            submitted.add(tx.id)
            state = channels[tx.channel]
            service = services[tx.channel]
            if hook is not None:
                stamp_read_versions(tx, state.ledger)
                if hook(tx):
                    continue  # intercepted (e.g. withheld by the adversary)
                if type(service) is BaselineOrderingService:
                    outcome = service.admit(tx, pinned_orderer=pinned_map.get(tx.id))
                else:
                    outcome = service.admit(tx)
            else:
                # Endorsement stamps only matter once the service accepts
                # the transaction, so probe admission first on the fast path.
                if type(service) is BaselineOrderingService:
                    outcome = service.admit(
                        tx,
                        pinned_orderer=pinned_map.get(tx.id) if pinned_map else None,
                    )
                else:
                    outcome = service.admit(tx)
                if outcome is SubmitOutcome.ACCEPTED:
                    stamp_read_versions(tx, state.ledger)
            if outcome is not SubmitOutcome.ACCEPTED:
                rejected[tx.id] = outcome.value
                continue
            if timeout is not None:
                engine.schedule_call(
                    engine.now + timeout, TIMEOUT, tx.submitter,
                    self._on_timeout, tx,
                )

    def _on_timeout(self, engine: Engine, tx: Transaction) -> None:
        state = self.channels[tx.channel]
        if state.status(tx.id).terminal:
            return
        service = self.services[tx.channel]
        if isinstance(service, BaselineOrderingService):
            service.mempool.discard(tx.id)
        else:
            service.discard(tx.id)
        state.set_status(tx, TxStatus.TIMEOUT)

    def phase_marker(self, phase: str):
        """Arrival hook that records a phase without intercepting."""

        def hook(tx: Transaction) -> bool:
            self.phases.enter(phase, self.engine.now)
            return False

        return hook

    # -- collection -----------------------------------------------------------

    def run_until_deadline(self) -> None:
        self._flush_submissions()
        self.engine.run_until(self.config.deadline)

    def collect(self, kind: str, success: bool, facts: dict) -> AttackOutcome:
        statuses: dict[str, int] = {
            "committed": 0, "conflict_failed": 0, "insufficient_funds": 0,
            "timeout": 0, "rejected": 0, "pending": 0,
        }
        pending: dict[str, int] = {ch: 0 for ch in self.channels}
        all_txs = self.all_txs
        rejected = self.rejected
        for tx_id in self.submitted_ids:
            if tx_id in rejected:
                statuses["rejected"] += 1
                continue
            ch = all_txs[tx_id].channel
            st = self.channels[ch].status(tx_id)
            if st is TxStatus.COMMITTED:
                statuses["committed"] += 1
            elif st is TxStatus.CONFLICT_FAILED:
                statuses["conflict_failed"] += 1
            elif st is TxStatus.INSUFFICIENT_FUNDS:
                statuses["insufficient_funds"] += 1
            elif st is TxStatus.TIMEOUT:
                statuses["timeout"] += 1
            else:
                statuses["pending"] += 1
                pending[ch] += 1

        deltas: dict[str, dict[str, int]] = {}
        for ch, state in self.channels.items():
            deltas[ch] = {
                w: state.ledger.balances[w] - self.config.balances[w]
                for w in self.config.balances
            }

        if self.policy.mode == BASELINE:
            peak_pool = max(
                s.mempool.peak_occupancy for s in self.services.values()
            )
            peak_queue = peak_pool
        else:
            peak_pool = max(s.peak_total for s in self.services.values())
            peak_queue = max(
                s.peak_queue_occupancy() for s in self.services.values()
            )

        return AttackOutcome(
            kind=kind,
            policy_mode=self.policy.mode,
            seed=self.seed,
            success=success,
            phase_log=list(self.phases.log),
            ledgers={ch: s.ledger for ch, s in self.channels.items()},
            chain_sizes={ch: s.chain_length for ch, s in self.channels.items()},
            pending=pending,
            balance_deltas=deltas,
            status_counts=statuses,
            submitted=len(self.submitted_ids),
            conflict_count=self.conflict_count,
            peak_mempool=peak_pool,
            peak_queue=peak_queue,
            makespan=min(self.engine.last_event_time, self.config.deadline),
            dep_violations=sum(
                s.dependency_violations() for s in self.channels.values()
            ),
            facts=facts,
        )


def _conflict_batch(
    config: ScenarioConfig, seed: int, prebuilt: list[Transaction] | None = None
) -> list[Transaction]:
    if prebuilt is not None:
        return prebuilt
    source = config.conflicts
    if isinstance(source, ConflictSpec):
        return generate_conflicting_set(replace(source, seed=seed * 4 + 1))
    return [clone_tx(tx) for tx in source]


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ScenarioMismatchError(message)


# -- block withholding ---------------------------------------------------------


def run_block_withholding(
    config: ScenarioConfig, mode: str, seed: int,
    batch: list[Transaction] | None = None,
) -> AttackOutcome:
    attack = config.attack
    attacker_wallet = attack.p_str("attacker_wallet", "A1")
    target_from = attack.p_str("target_from", "V1")
    target_to = attack.p_str("target_to", "V2")
    amount = attack.p_int("target_amount", 15)
    variant = attack.p_str("variant", "hold")
    channel = config.channels[0]
    _require(
        any(n.is_adversary and n.role == "orderer" for n in config.topology.nodes),
        "block withholding needs an adversary orderer",
    )
    for wallet in (attacker_wallet, target_from, target_to):
        _require(wallet in config.balances, f"missing wallet {wallet}")

    run = SimulationRun(config, mode, seed)
    state = run.channels[channel]
    target = transfer_tx(
        "target", target_from, target_to, amount,
        channel=channel, submitter=_client_of(config, adversary=False),
        submit_time=attack.p_int("target_submit", 0),
    )
    run.phases.enter("P1", target.submit_time)

    withheld: list[Transaction] = []

    def intercept(tx: Transaction) -> bool:
        # The adversary orderer validates the endorsed transaction, then
        # holds it instead of broadcasting (baseline only; the pipeline's
        # withheld worker models the same behaviour under countermeasures).
        if run.policy.mode == BASELINE:
            run.phases.enter("P2", run.engine.now)
            state.set_status(tx, TxStatus.WITHHELD)
            withheld.append(tx)
            return True
        run.phases.enter("P2", run.engine.now)
        return False

    run.submit(target, valid=True, on_arrival=intercept)

    batch = _conflict_batch(config, seed, batch)
    if isinstance(config.conflicts, ConflictSpec):
        # The attacker crafts its batch for profit: every stride-th transfer
        # is redirected into the attacker's wallet (the attack's point is a
        # balance increase, not neutral churn).
        stride = attack.p_int("profit_stride", 3)
        if stride > 0:
            for i, tx in enumerate(batch):
                payload = tx.payload
                if i % stride or not isinstance(payload, Transfer):
                    continue
                if payload.dst == attacker_wallet:
                    continue
                src = payload.src if payload.src != attacker_wallet else payload.dst
                tx.payload = Transfer(src, attacker_wallet, payload.amount)
                tx.writes = frozenset((src, attacker_wallet))
                tx.reads = {src: 0, attacker_wallet: 0}

    adv_client = _client_of(config, adversary=True)
    first = True
    for tx in batch:
        tx.channel = channel
        hook = run.phase_marker("P3") if first else None
        first = False
        run.submit(tx, valid=False, via=adv_client, on_arrival=hook)

    release_at = attack.p_int("release_at", 0)
    if variant == "release" and release_at:
        def release(engine: Engine, _payload) -> None:
            run.phases.enter("P5", engine.now)
            for tx in withheld:
                state.finalize(tx, restamp=False)

        run.engine.schedule_call(release_at, ATTACK_PHASE, "adversary", release)

    run.run_until_deadline()

    if variant != "release":
        run.phases.enter("P4", config.deadline)
        for tx in withheld:
            if not state.status(tx.id).terminal:
                state.set_status(tx, TxStatus.TIMEOUT)
    elif withheld and not run.phases.entered("P5"):
        run.phases.enter("P5", config.deadline)

    target_committed = state.status("target") is TxStatus.COMMITTED
    if run.policy.mode != BASELINE and not state.status("target").terminal:
        # Pipeline run where the attack group landed on the withheld worker.
        run.phases.enter("P4", config.deadline)
    attacker_delta = state.ledger.balances[attacker_wallet] - config.balances[
        attacker_wallet
    ]
    facts = {
        "target_committed": target_committed,
        "target_status": state.status("target").value,
        "attacker_delta": attacker_delta,
        "variant": variant,
    }
    success = (not target_committed) and attacker_delta > 0
    return run.collect("block_withholding", success, facts)


# -- double spending -------------------------------------------------------------


def run_double_spending(
    config: ScenarioConfig, mode: str, seed: int,
    batch: list[Transaction] | None = None,
) -> AttackOutcome:
    attack = config.attack
    source = attack.p_str("source", "A1")
    victim = attack.p_str("victim", "V1")
    alt = attack.p_str("alt", "A2")
    amount = attack.p_int("amount", 100)
    channel = config.channels[0]
    for wallet in (source, victim, alt):
        _require(wallet in config.balances, f"missing wallet {wallet}")
    _require(config.balances[source] >= amount, "attacker cannot fund the transfer")

    run = SimulationRun(config, mode, seed)
    state = run.channels[channel]
    endorse_withheld = attack.params.get("endorse_withheld") == "true"
    asset_delivered = [False]

    valid = transfer_tx(
        "valid", source, victim, amount,
        channel=channel, submitter=_client_of(config, adversary=False),
        submit_time=attack.p_int("valid_submit", 0),
    )
    valid_orderer = attack.params.get("valid_orderer")
    if valid_orderer:
        run.pinned["valid"] = valid_orderer
    run.phases.enter("P1", valid.submit_time)

    def on_valid_arrival(tx: Transaction) -> bool:
        # P2: the victim releases the off-chain asset on endorsement proof.
        if not endorse_withheld:
            asset_delivered[0] = True
            run.phases.enter("P2", run.engine.now)
        return False

    run.submit(valid, valid=True, on_arrival=on_valid_arrival)

    ds_id = "dsx"
    batch = _conflict_batch(config, seed, batch)
    scripted = not isinstance(config.conflicts, ConflictSpec)
    if not scripted:
        # Generated mode: the double-spend transfer leads the batch.
        lead_time = attack.p_int("batch_start", valid.submit_time + 12)
        ds = transfer_tx(
            ds_id, source, alt, amount, channel=channel,
            submitter=_client_of(config, adversary=True), submit_time=lead_time,
        )
        for tx in batch:
            tx.submit_time += lead_time + 1
            tx.channel = channel
        batch = [ds] + batch
    else:
        _require(
            any(tx.id == ds_id for tx in batch),
            f"scripted double spend needs a transaction with id {ds_id!r}",
        )

    adv_client = _client_of(config, adversary=True)
    first = True
    for tx in batch:
        hook = run.phase_marker("P3") if first else None
        first = False
        run.submit(tx, valid=False, via=adv_client, on_arrival=hook)

    def watch(tx: Transaction, status: TxStatus) -> None:
        if tx.id == ds_id:
            run.phases.enter("P4", run.engine.now)
        elif tx.id == "valid":
            run.phases.enter("P5", run.engine.now)

    state.terminal_listeners.append(watch)
    run.run_until_deadline()
    run.phases.enter("P4", config.deadline)

    ds_committed = state.status(ds_id) is TxStatus.COMMITTED
    valid_committed = state.status("valid") is TxStatus.COMMITTED
    facts = {
        "double_spend_committed": ds_committed,
        "valid_committed": valid_committed,
        "asset_delivered": asset_delivered[0],
        "valid_status": state.status("valid").value,
    }
    success = ds_committed and not valid_committed and asset_delivered[0]
    return run.collect("double_spending", success, facts)


# -- balance attack ---------------------------------------------------------------


def _pool_wallets(config: ScenarioConfig, prefix: str) -> list[str]:
    return sorted(w for w in config.balances if w.startswith(prefix))


def run_balance_attack(
    config: ScenarioConfig, mode: str, seed: int,
    batch: list[Transaction] | None = None,
) -> AttackOutcome:
    attack = config.attack
    channels = config.channels
    _require(len(channels) >= 2, "balance attack needs two channels")
    attacked = attack.p_str("attacked_channel", channels[0])
    reference = attack.p_str("reference_channel", channels[1])
    _require(attacked in channels and reference in channels, "unknown channel")
    _require(
        any(n.is_adversary for n in config.topology.nodes),
        "balance attack needs an adversary member of both channels",
    )
    prefix = attack.p_str("pool_prefix", "W")
    pool = _pool_wallets(config, prefix)
    _require(len(pool) >= 4, "balance attack needs a wallet pool")

    run = SimulationRun(config, mode, seed)
    amount = attack.p_int("valid_amount", 5)
    spacing = attack.p_int("valid_spacing", 10)
    initial_pending = attack.p_int("initial_pending", 0)
    pairs = len(pool) // 2

    def pair(k: int) -> tuple[str, str]:
        k %= pairs
        return pool[2 * k], pool[2 * k + 1]

    def build_valid(channel: str, head: int, tail: int, tail_start: int) -> None:
        client = _client_of(config, adversary=False)
        for i in range(initial_pending):
            src, dst = pair(i)
            tx = transfer_tx(
                f"pre-{channel}-{i:03d}", src, dst, amount, channel=channel,
                submitter=client, submit_time=0,
            )
            tx.submit_time = -run.client_latency(client)  # arrives at t=0
            run.submit(tx, valid=True)
        for i in range(head):
            src, dst = pair(initial_pending + i)
            run.submit(
                transfer_tx(
                    f"val-{channel}-{i:03d}", src, dst, amount, channel=channel,
                    submitter=client,
                    submit_time=spacing * (i + 1) - run.client_latency(client),
                ),
                valid=True,
            )
        for i in range(tail):
            src, dst = pair(initial_pending + head + i)
            run.submit(
                transfer_tx(
                    f"val-{channel}-{head + i:03d}", src, dst, amount,
                    channel=channel, submitter=client,
                    submit_time=tail_start + spacing * i - run.client_latency(client),
                ),
                valid=True,
            )

    build_valid(
        attacked,
        attack.p_int("valid_head", 40),
        attack.p_int("valid_tail", 40),
        attack.p_int("tail_start", 1010),
    )
    build_valid(reference, attack.p_int("valid_reference", 90), 0, 0)

    extra_link_delay = attack.p_int("link_delay", 0)
    if extra_link_delay:
        for node in config.topology.nodes:
            if node.role == "orderer" and attacked in node.channels:
                run.engine.inject_link_delay(node.id, node.id, extra_link_delay)

    batch = _conflict_batch(config, seed, batch)
    adv_client = _client_of(config, adversary=True)
    generated = isinstance(config.conflicts, ConflictSpec)
    first = True
    for tx in batch:
        if generated:
            tx.channel = attacked
        hook = run.phase_marker("P1") if first else None
        first = False
        run.submit(tx, valid=False, via=adv_client, on_arrival=hook)

    ref_state = run.channels[reference]
    att_state = run.channels[attacked]

    def watch(tx: Transaction, status: TxStatus) -> None:
        if run.phases.entered("P1"):
            if tx.channel == reference and status is TxStatus.COMMITTED:
                run.phases.enter("P2", run.engine.now)
            if tx.channel == attacked and tx.id in run.adversary_ids \
                    and status is not TxStatus.COMMITTED:
                run.phases.enter("P3", run.engine.now)

    ref_state.terminal_listeners.append(watch)
    att_state.terminal_listeners.append(watch)

    run.run_until_deadline()
    run.phases.enter("P2", config.deadline)
    run.phases.enter("P3", config.deadline)
    run.phases.enter("P4", config.deadline)

    chain_attacked = att_state.chain_length
    chain_reference = ref_state.chain_length

    # P5 epilogue: replay the first still-pending attacked-channel transaction
    # on the reference chain (validated on a copy so recorded metrics stay a
    # deadline snapshot).
    replay_committed = False
    replayed: str | None = None
    pending_order = [
        tx_id for tx_id in run.submitted_ids
        if tx_id not in run.rejected
        and run.all_txs[tx_id].channel == attacked
        and not att_state.status(tx_id).terminal
    ]
    pending_order.sort(key=lambda tx_id: (run.all_txs[tx_id].submit_time, tx_id))
    if pending_order:
        source_tx = run.all_txs[pending_order[0]]
        ghost = clone_tx(source_tx)
        ghost.id = f"replay-{source_tx.id}"
        ghost.channel = reference
        probe = ref_state.ledger.copy()
        stamp_read_versions(ghost, probe)
        _, st = apply_transaction(probe, ghost)
        replay_committed = st is TxStatus.COMMITTED
        replayed = source_tx.id
        run.phases.enter("P5", config.deadline + 1)

    facts = {
        "attacked_channel": attacked,
        "reference_channel": reference,
        "replay_committed": replay_committed,
        "replayed_tx": replayed,
        "initial_pending": initial_pending,
    }
    success = chain_reference > chain_attacked and replay_committed
    return run.collect("balance", success, facts)


# -- DDoS --------------------------------------------------------------------------


def run_ddos(
    config: ScenarioConfig, mode: str, seed: int,
    batch: list[Transaction] | None = None,
) -> AttackOutcome:
    attack = config.attack
    n_accounts = attack.p_int("n_accounts", 32)
    _require(n_accounts >= 32, "DDoS needs at least 32 adversary accounts")
    prefix = attack.p_str("accounts_prefix", "ACC")
    accounts = _pool_wallets(config, prefix)
    _require(len(accounts) >= n_accounts, "adversary accounts missing from balances")
    theta = attack.p_float("theta", 0.5)
    channel = config.channels[0]
    valid_pool = _pool_wallets(config, attack.p_str("valid_pool_prefix", "H"))
    _require(len(valid_pool) >= 2, "DDoS needs an honest wallet pool")

    run = SimulationRun(config, mode, seed)
    state = run.channels[channel]

    # Honest background traffic, read-heavy.
    valid_rng = random.Random(seed * 4 + 2)
    valid_count = attack.p_int("valid_count", 100)
    valid_window = attack.p_int("valid_window", 6000)
    read_ratio = attack.p_float("valid_read_ratio", 0.8)
    client = _client_of(config, adversary=False)
    for i in range(valid_count):
        t = valid_rng.randint(0, valid_window)
        if valid_rng.random() < read_ratio:
            wallet = valid_pool[valid_rng.randrange(len(valid_pool))]
            tx = query_tx(f"hon{i:04d}", (wallet,), channel=channel,
                          submitter=client, submit_time=t)
        else:
            a, b = valid_rng.sample(range(len(valid_pool)), 2)
            tx = transfer_tx(
                f"hon{i:04d}", valid_pool[a], valid_pool[b],
                valid_rng.randint(1, 20), channel=channel, submitter=client,
                submit_time=t,
            )
        run.submit(tx, valid=True, timeout=run.policy.client_timeout)

    batch = _conflict_batch(config, seed, batch)
    burst = isinstance(config.conflicts, ConflictSpec) and config.conflicts.start or 0
    run.phases.enter("P1", max(0, (burst or batch[0].submit_time) - 1))
    adv_client = _client_of(config, adversary=True)
    first = True
    for i, tx in enumerate(batch):
        tx.channel = channel
        tx.submitter = accounts[i % n_accounts]
        hook = run.phase_marker("P2") if first else None
        first = False
        run.submit(tx, valid=False, via=adv_client, on_arrival=hook)

    run.run_until_deadline()
    run.phases.enter("P3", config.deadline)

    failed = 0
    for tx_id in run.valid_ids:
        if tx_id not in run.submitted_ids:
            continue
        if tx_id in run.rejected:
            failed += 1  # admission rejection surfaces as a client timeout
            continue
        if state.status(tx_id) in (TxStatus.TIMEOUT, TxStatus.CONFLICT_FAILED):
            failed += 1
    submitted_valid = len(run.valid_ids & run.submitted_ids)
    rate = failed / submitted_valid if submitted_valid else 0.0

    capacity = run.policy.mempool_capacity
    if run.policy.mode == BASELINE:
        peak = run.services[channel].mempool.peak_occupancy
    else:
        peak = run.services[channel].peak_total
    facts = {
        "mempool_capacity": capacity,
        "overflowed": peak >= capacity,
        "valid_fail_rate": rate,
        "theta": theta,
        "n_accounts": n_accounts,
    }
    success = facts["overflowed"] and rate > theta
    return run.collect("ddos", success, facts)


# -- ordering race probe -------------------------------------------------------------


def run_ordering_race(
    config: ScenarioConfig, mode: str, seed: int,
    batch: list[Transaction] | None = None,
) -> AttackOutcome:
    run = SimulationRun(config, mode, seed)
    batch = _conflict_batch(config, seed, batch)
    first = True
    for tx in batch:
        hook = run.phase_marker("P1") if first else None
        first = False
        run.submit(tx, valid=True, on_arrival=hook)
    run.run_until_deadline()
    run.phases.enter("P2", config.deadline)
    run.phases.enter("P3", config.deadline)
    violations = sum(s.dependency_violations() for s in run.channels.values())
    facts = {"violations": violations}
    return run.collect("ordering_race", violations >= 1, facts)


# -- dispatch ---------------------------------------------------------------------


_RUNNERS = {
    "block_withholding": run_block_withholding,
    "double_spending": run_double_spending,
    "balance": run_balance_attack,
    "ddos": run_ddos,
    "ordering_race": run_ordering_race,
}


def run_attack(
    config: ScenarioConfig, mode: str, seed: int,
    batch: list[Transaction] | None = None,
) -> AttackOutcome:
    return _RUNNERS[config.attack.kind](config, mode, seed, batch)


def _client_of(config: ScenarioConfig, adversary: bool) -> str:
    for node in config.topology.nodes:
        if node.role == "client" and node.is_adversary == adversary:
            return node.id
    for node in config.topology.nodes:
        if node.role == "client":
            return node.id
    return config.topology.nodes[0].id


def conservation_holds(config: ScenarioConfig, outcome: AttackOutcome) -> bool:
    initial = sum(config.balances.values())
    return all(
        total_supply(ledger) == initial for ledger in outcome.ledgers.values()
    )
