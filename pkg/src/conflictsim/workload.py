"""Conflicting-transaction generation and scenario file handling.

Scenario files are a line-oriented text format with the sections
topology / balances / attack / policy / conflicts / seed / deadline.
The conflicts section is either a single ``generate`` directive (a seeded
synthetic bank-transfer batch over a small wallet set) or an explicit
``tx`` list used by the scripted attack reproductions, which pin amounts,
submit times and orderer assignments.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path

from .core import (
    PriorityClass,
    Query,
    Transaction,
    Transfer,
    conflicts_with,
    query_tx,
    transfer_tx,
)
from .errors import (
    InfeasibleSpecError,
    ScenarioParseError,
    ScenarioValidationError,
)
from .ordering import BASELINE, COUNTERMEASURES, OrderingPolicy
from .simnet import NodeConfig, Topology

ATTACK_KINDS = (
    "block_withholding",
    "double_spending",
    "balance",
    "ddos",
    "ordering_race",
)


@dataclass(eq=True)
class ConflictSpec:
    """Parameters for one synthetic conflicting batch."""

    wallets: tuple[str, ...]
    count: int
    window: int
    seed: int = 0
    mix_query: float = 0.0
    channel: str = "main"
    submitter: str = "adversary"
    start: int = 0
    id_prefix: str = "cx"

    def __post_init__(self):
        self.wallets = tuple(sorted(set(self.wallets)))
        if self.count < 1:
            raise InfeasibleSpecError("conflict count must be at least 1")
        if len(self.wallets) < 2:
            raise InfeasibleSpecError("conflicts need at least two wallets")
        if self.window < 0:
            raise InfeasibleSpecError("window must be non-negative")
        if not 0.0 <= self.mix_query <= 1.0:
            raise InfeasibleSpecError("query mix must be within [0, 1]")


def generate_conflicting_set(spec: ConflictSpec) -> list[Transaction]:
    """Produce ``spec.count`` transactions over a shared wallet set such that
    every one conflicts with at least one other.

    Transfers draw amounts from [1, 20]; submit times spread uniformly over
    the window.  Deterministic in ``spec.seed``.
    """
    transfer_mix = 1.0 - spec.mix_query
    if spec.count == 1:
        raise InfeasibleSpecError("a single transaction cannot conflict")
    if len(spec.wallets) < 2 and transfer_mix > 0:
        raise InfeasibleSpecError("transfers need at least two wallets")
    if transfer_mix <= 0.0:
        raise InfeasibleSpecError("an all-query batch cannot conflict")

    rng = random.Random(spec.seed)
    rand = rng.random
    span = spec.window + 1
    times = sorted(int(rand() * span) for _ in range(spec.count))
    wallets = list(spec.wallets)
    pair_writes = {}
    n = len(wallets)
    txs: list[Transaction] = []
    new = Transaction.__new__
    unassigned = PriorityClass.UNASSIGNED
    empty = frozenset()
    start = spec.start
    channel = spec.channel
    submitter = spec.submitter
    prefix = spec.id_prefix
    for i, t in enumerate(times):
        # Construction bypasses dataclass validation: the generator only
        # emits well-formed payloads, and this path is white-hot in sweeps.
        tx = new(Transaction)
        tx.id = f"{prefix}{i:05d}"
        tx.channel = channel
        tx.submitter = submitter
        tx.declared_deps = empty
        tx.priority = unassigned
        tx.submit_time = start + t
        # The first element is always a transfer so the batch has a writer
        # for the conflict-density repair below to anchor on.
        if i > 0 and rand() < spec.mix_query:
            wallet = wallets[int(rand() * n)]
            tx.payload = Query((wallet,))
            tx.reads = {wallet: 0}
            tx.writes = empty
        else:
            a = int(rand() * n)
            b = int(rand() * (n - 1))
            if b >= a:
                b += 1
            src, dst = wallets[a], wallets[b]
            tx.payload = Transfer(src, dst, 1 + int(rand() * 20))
            tx.reads = {src: 0, dst: 0}
            key = (a, b)
            writes = pair_writes.get(key)
            if writes is None:
                writes = frozenset((src, dst))
                pair_writes[key] = writes
            tx.writes = writes
        txs.append(tx)
    _repair_isolated(txs)
    return txs


def _repair_isolated(txs: list[Transaction]) -> None:
    """Give every conflict-graph-isolated transaction a read of a wallet some
    other transaction writes."""
    writers: dict[str, int] = {}
    touchers: dict[str, int] = {}
    for tx in txs:
        for w in tx.writes:
            writers[w] = writers.get(w, 0) + 1
        for w in tx.footprint():
            touchers[w] = touchers.get(w, 0) + 1

    def isolated(tx: Transaction) -> bool:
        for w in tx.writes:
            if touchers.get(w, 0) > 1:
                return False
        for r in tx.reads:
            others = writers.get(r, 0) - (1 if r in tx.writes else 0)
            if others > 0:
                return False
        return True

    lonely = [tx for tx in txs if isolated(tx)]
    for tx in lonely:
        anchor = None
        for other in txs:
            if other.id != tx.id and isinstance(other.payload, Transfer):
                anchor = other.payload.src
                break
        if anchor is None or anchor in tx.reads:
            continue
        tx.reads[anchor] = 0
        touchers[anchor] = touchers.get(anchor, 0) + 1


def conflict_graph_has_isolated(txs: list[Transaction]) -> bool:
    """Quadratic reference check used by tests and validation."""
    for tx in txs:
        if not any(conflicts_with(tx, other) for other in txs if other.id != tx.id):
            return True
    return False


# -- scenario configuration ----------------------------------------------------


@dataclass(eq=True)
class AttackSpec:
    kind: str
    params: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ScenarioValidationError(f"unknown attack kind {self.kind!r}")

    def p_str(self, name: str, default: str | None = None) -> str:
        value = self.params.get(name, default)
        if value is None:
            raise ScenarioValidationError(f"attack param {name!r} is required")
        return value

    def p_int(self, name: str, default: int | None = None) -> int:
        if name not in self.params:
            if default is None:
                raise ScenarioValidationError(f"attack param {name!r} is required")
            return default
        return int(self.params[name])

    def p_float(self, name: str, default: float) -> float:
        return float(self.params.get(name, default))


@dataclass(eq=True)
class ScenarioConfig:
    topology: Topology
    balances: dict[str, int]
    attack: AttackSpec
    policy: OrderingPolicy
    conflicts: ConflictSpec | list[Transaction]
    seed: int = 0
    deadline: int = 10000
    pinned_orderers: dict[str, str] = field(default_factory=dict)
    name: str = field(default="scenario", compare=False)

    @property
    def channels(self) -> list[str]:
        seen: set[str] = set()
        for node in self.topology.nodes:
            seen.update(node.channels)
        return sorted(seen)

    @property
    def conflict_count(self) -> int:
        if isinstance(self.conflicts, ConflictSpec):
            return self.conflicts.count
        return len(self.conflicts)

    def validate(self) -> None:
        self.topology.validate()
        channels = self.channels
        if not channels:
            raise ScenarioValidationError("topology defines no channels")
        for channel in channels:
            if not self.topology.orderers(channel):
                raise ScenarioValidationError(
                    f"channel {channel} has no orderer (at least one required)"
                )
        for wallet, amount in self.balances.items():
            if amount < 0:
                raise ScenarioValidationError(f"negative balance for {wallet}")
        for wallet in self._attack_wallets():
            if wallet not in self.balances:
                raise ScenarioValidationError(
                    f"attack references wallet {wallet} absent from initial balances"
                )
        if isinstance(self.conflicts, list):
            for tx in self.conflicts:
                for wallet in sorted(tx.footprint()):
                    if wallet not in self.balances:
                        raise ScenarioValidationError(
                            f"scripted transaction {tx.id} references unknown "
                            f"wallet {wallet}"
                        )
                if tx.channel not in channels:
                    raise ScenarioValidationError(
                        f"scripted transaction {tx.id} references unknown "
                        f"channel {tx.channel}"
                    )
        else:
            for wallet in self.conflicts.wallets:
                if wallet not in self.balances:
                    raise ScenarioValidationError(
                        f"conflict spec references unknown wallet {wallet}"
                    )
        if self.deadline < 0:
            raise ScenarioValidationError("deadline must be non-negative")
        for tx_id, orderer in self.pinned_orderers.items():
            if not self.topology.has_node(orderer):
                raise ScenarioValidationError(
                    f"transaction {tx_id} pinned to unknown orderer {orderer}"
                )

    def _attack_wallets(self) -> list[str]:
        kind, p = self.attack.kind, self.attack
        if kind == "block_withholding":
            return [
                p.p_str("attacker_wallet", "A1"),
                p.p_str("target_from", "V1"),
                p.p_str("target_to", "V2"),
            ]
        if kind == "double_spending":
            return [
                p.p_str("source", "A1"),
                p.p_str("victim", "V1"),
                p.p_str("alt", "A2"),
            ]
        return []


# -- parsing -------------------------------------------------------------------

_SECTIONS = (
    "topology", "balances", "attack", "policy", "conflicts", "seed", "deadline",
)


def _parse_kv(parts: list[str], lineno: int) -> dict[str, str]:
    out: dict[str, str] = {}
    for part in parts:
        if "=" in part:
            key, _, value = part.partition("=")
            out[key] = value
        else:
            out[part] = "true"
    return out


def _parse_tx_line(parts: list[str], lineno: int) -> tuple[Transaction, str | None]:
    # tx <id> transfer <from> <to> <amount> at <t> [key=value...]
    # tx <id> query <w1,w2> at <t> [key=value...]
    if len(parts) < 3:
        raise ScenarioParseError("incomplete tx line", lineno)
    tx_id, op = parts[0], parts[1]
    rest = parts[2:]
    try:
        if op == "transfer":
            src, dst, amount = rest[0], rest[1], int(rest[2])
            if rest[3] != "at":
                raise ScenarioParseError("expected 'at <time>'", lineno)
            at = int(rest[4])
            attrs = _parse_kv(rest[5:], lineno)
        elif op == "query":
            wallets = tuple(rest[0].split(","))
            if rest[1] != "at":
                raise ScenarioParseError("expected 'at <time>'", lineno)
            at = int(rest[2])
            attrs = _parse_kv(rest[3:], lineno)
        else:
            raise ScenarioParseError(f"unknown payload kind {op!r}", lineno)
    except (IndexError, ValueError) as exc:
        raise ScenarioParseError(f"malformed tx line ({exc})", lineno) from None

    channel = attrs.get("channel", "main")
    submitter = attrs.get("submitter", "client")
    deps = tuple(attrs["deps"].split(",")) if "deps" in attrs else ()
    try:
        if op == "transfer":
            extra = tuple(attrs["reads"].split(",")) if "reads" in attrs else ()
            reads = {src: 0, dst: 0}
            for w in extra:
                reads.setdefault(w, 0)
            tx = Transaction(
                id=tx_id,
                payload=Transfer(src, dst, amount),
                channel=channel,
                submitter=submitter,
                reads=reads,
                declared_deps=frozenset(deps),
                submit_time=at,
            )
        else:
            tx = query_tx(
                tx_id, wallets, channel=channel, submitter=submitter, submit_time=at
            )
            if deps:
                tx.declared_deps = frozenset(deps)
    except ValueError as exc:
        raise ScenarioParseError(str(exc), lineno) from None
    return tx, attrs.get("orderer")


def parse_scenario(text: str, name: str = "scenario") -> ScenarioConfig:
    nodes: list[NodeConfig] = []
    links: dict[tuple[str, str], int] = {}
    default_latency = 5
    balances: dict[str, int] = {}
    attack_kind: str | None = None
    attack_params: dict[str, str] = {}
    policy_kw: dict[str, object] = {}
    conflict_spec: ConflictSpec | None = None
    scripted: list[Transaction] = []
    pinned: dict[str, str] = {}
    seed = 0
    deadline: int | None = None
    section = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SECTIONS:
                raise ScenarioParseError(f"unknown section {section!r}", lineno)
            continue
        if section is None:
            raise ScenarioParseError("content before first section", lineno)
        parts = line.split()
        try:
            if section == "topology":
                if parts[0] == "default_latency":
                    default_latency = int(parts[1])
                elif parts[0] == "node":
                    attrs = _parse_kv(parts[2:], lineno)
                    nodes.append(
                        NodeConfig(
                            id=parts[1],
                            role=attrs.get("role", "peer"),
                            channels=frozenset(
                                attrs.get("channels", "main").split(",")
                            ),
                            is_adversary=attrs.get("adversary") == "true",
                            processing_delay=int(attrs.get("processing", "0")),
                            latency=(
                                int(attrs["latency"]) if "latency" in attrs else None
                            ),
                        )
                    )
                elif parts[0] == "link":
                    links[(parts[1], parts[2])] = int(parts[3])
                else:
                    raise ScenarioParseError(
                        f"unknown topology directive {parts[0]!r}", lineno
                    )
            elif section == "balances":
                balances[parts[0]] = int(parts[1])
            elif section == "attack":
                if parts[0] == "kind":
                    attack_kind = parts[1]
                elif parts[0] == "param":
                    attack_params[parts[1]] = " ".join(parts[2:])
                else:
                    raise ScenarioParseError(
                        f"unknown attack directive {parts[0]!r}", lineno
                    )
            elif section == "policy":
                key = parts[0]
                if key == "mode":
                    if parts[1] not in (BASELINE, COUNTERMEASURES):
                        raise ScenarioParseError(
                            f"unknown policy mode {parts[1]!r}", lineno
                        )
                    policy_kw["mode"] = parts[1]
                elif key == "jitter":
                    policy_kw["jitter"] = (int(parts[1]), int(parts[2]))
                elif key == "client_timeout":
                    policy_kw["client_timeout"] = (
                        None if parts[1] == "none" else int(parts[1])
                    )
                elif key in ("workers", "defer_limit", "mempool_capacity",
                             "queue_capacity"):
                    policy_kw[key] = int(parts[1])
                else:
                    raise ScenarioParseError(
                        f"unknown policy field {key!r}", lineno
                    )
            elif section == "conflicts":
                if parts[0] == "generate":
                    attrs = _parse_kv(parts[1:], lineno)
                    conflict_spec = ConflictSpec(
                        wallets=tuple(attrs["wallets"].split(",")),
                        count=int(attrs["count"]),
                        window=int(attrs["window"]),
                        mix_query=float(attrs.get("mix_query", "0.0")),
                        channel=attrs.get("channel", "main"),
                        submitter=attrs.get("submitter", "adversary"),
                        start=int(attrs.get("start", "0")),
                    )
                elif parts[0] == "tx":
                    tx, orderer = _parse_tx_line(parts[1:], lineno)
                    scripted.append(tx)
                    if orderer is not None:
                        pinned[tx.id] = orderer
                else:
                    raise ScenarioParseError(
                        f"unknown conflicts directive {parts[0]!r}", lineno
                    )
            elif section == "seed":
                seed = int(parts[0])
            elif section == "deadline":
                deadline = int(parts[0])
        except ScenarioParseError:
            raise
        except (IndexError, ValueError, KeyError) as exc:
            raise ScenarioParseError(f"malformed line ({exc})", lineno) from None

    if attack_kind is None:
        raise ScenarioParseError("attack section missing 'kind'")
    if deadline is None:
        raise ScenarioParseError("deadline section missing")
    if conflict_spec is not None and scripted:
        raise ScenarioValidationError(
            "exactly one conflict source allowed (generate or scripted list)"
        )
    if conflict_spec is None and not scripted:
        raise ScenarioValidationError("conflicts section defines no source")

    config = ScenarioConfig(
        topology=Topology(nodes=nodes, links=links, default_latency=default_latency),
        balances=balances,
        attack=AttackSpec(kind=attack_kind, params=attack_params),
        policy=OrderingPolicy(**policy_kw),  # type: ignore[arg-type]
        conflicts=conflict_spec if conflict_spec is not None else scripted,
        seed=seed,
        deadline=deadline,
        pinned_orderers=pinned,
        name=name,
    )
    config.validate()
    return config


def load_scenario(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    return parse_scenario(path.read_text(), name=path.stem)


def dump_scenario(config: ScenarioConfig) -> str:
    """Serialize a config back to scenario text (round-trips by equality)."""
    out: list[str] = ["[topology]"]
    out.append(f"default_latency {config.topology.default_latency}")
    for node in config.topology.nodes:
        attrs = [f"role={node.role}", f"channels={','.join(sorted(node.channels))}"]
        if node.is_adversary:
            attrs.append("adversary")
        if node.processing_delay:
            attrs.append(f"processing={node.processing_delay}")
        if node.latency is not None:
            attrs.append(f"latency={node.latency}")
        out.append(f"node {node.id} {' '.join(attrs)}")
    for (a, b), delay in config.topology.links.items():
        out.append(f"link {a} {b} {delay}")
    out.append("")
    out.append("[balances]")
    for wallet, amount in config.balances.items():
        out.append(f"{wallet} {amount}")
    out.append("")
    out.append("[attack]")
    out.append(f"kind {config.attack.kind}")
    for key, value in config.attack.params.items():
        out.append(f"param {key} {value}")
    out.append("")
    out.append("[policy]")
    p = config.policy
    out.append(f"mode {p.mode}")
    out.append(f"workers {p.workers}")
    out.append(f"defer_limit {p.defer_limit}")
    out.append(f"jitter {p.jitter[0]} {p.jitter[1]}")
    out.append(f"mempool_capacity {p.mempool_capacity}")
    if p.queue_capacity is not None:
        out.append(f"queue_capacity {p.queue_capacity}")
    out.append(
        "client_timeout none" if p.client_timeout is None
        else f"client_timeout {p.client_timeout}"
    )
    out.append("")
    out.append("[conflicts]")
    if isinstance(config.conflicts, ConflictSpec):
        spec = config.conflicts
        line = (
            f"generate wallets={','.join(spec.wallets)} count={spec.count} "
            f"window={spec.window} mix_query={spec.mix_query}"
        )
        if spec.channel != "main":
            line += f" channel={spec.channel}"
        if spec.submitter != "adversary":
            line += f" submitter={spec.submitter}"
        if spec.start:
            line += f" start={spec.start}"
        out.append(line)
    else:
        for tx in config.conflicts:
            out.append(_dump_tx_line(tx, config.pinned_orderers.get(tx.id)))
    out.append("")
    out.append("[seed]")
    out.append(str(config.seed))
    out.append("")
    out.append("[deadline]")
    out.append(str(config.deadline))
    out.append("")
    return "\n".join(out)


def _dump_tx_line(tx: Transaction, orderer: str | None) -> str:
    if isinstance(tx.payload, Transfer):
        p = tx.payload
        line = f"tx {tx.id} transfer {p.src} {p.dst} {p.amount} at {tx.submit_time}"
        extra = [w for w in tx.reads if w not in (p.src, p.dst)]
        if extra:
            line += f" reads={','.join(extra)}"
    else:
        line = f"tx {tx.id} query {','.join(tx.payload.wallets)} at {tx.submit_time}"
    if tx.channel != "main":
        line += f" channel={tx.channel}"
    if tx.submitter != "client":
        line += f" submitter={tx.submitter}"
    if tx.declared_deps:
        line += f" deps={','.join(sorted(tx.declared_deps))}"
    if orderer is not None:
        line += f" orderer={orderer}"
    return line


def save_scenario(config: ScenarioConfig, path: str | Path) -> None:
    Path(path).write_text(dump_scenario(config))


# -- bench workload --------------------------------------------------------------


def generate_bench_workload(
    count: int, read_ratio: float, n_wallets: int = 2000, seed: int = 0,
    cluster_size: int = 25,
) -> tuple[dict[str, int], list[Transaction]]:
    """Partitionable workload for the throughput bench.

    Wallets come in disjoint clusters and transfers stay inside a cluster,
    so the footprint partition yields many independent groups instead of one
    percolated component; random pairing over a shared pool would collapse
    everything into a single queue.
    """
    rng = random.Random(seed)
    wallets = [f"B{i:05d}" for i in range(n_wallets)]
    balances = {w: 1000 for w in wallets}
    clusters = max(1, n_wallets // cluster_size)
    txs: list[Transaction] = []
    for i in range(count):
        tx_id = f"bench{i:06d}"
        if rng.random() < read_ratio:
            wallet = wallets[rng.randrange(n_wallets)]
            txs.append(query_tx(tx_id, (wallet,), submit_time=i))
        else:
            c = rng.randrange(clusters)
            base = c * cluster_size
            width = min(cluster_size, n_wallets - base)
            a = base + rng.randrange(width)
            b = base + rng.randrange(width - 1)
            if b >= a:
                b += 1
            txs.append(
                transfer_tx(tx_id, wallets[a], wallets[b], rng.randint(1, 20),
                            submit_time=i)
            )
    return balances, txs
