"""Domain types and deterministic ledger semantics.

Wallets hold whole-token balances plus a version counter that is bumped on
every committed write.  Validation is multi-version: a transaction records
the wallet versions it read at endorsement time, and commits only if those
versions are still current.  This is what makes simultaneously endorsed
transfers over shared wallets "conflicting" - the first one to commit
invalidates the rest.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, IntEnum

from .errors import (
    HeightMismatchError,
    TokenOverflowError,
    UnknownWalletError,
)

# Wallet / transaction / channel identifiers are plain opaque strings.
WalletId = str
TransactionId = str
ChannelId = str

# Token arithmetic is modelled on a 64-bit unsigned domain; exceeding it is
# an error, never a silent wrap.
MAX_TOKENS = 2**63 - 1


class TxStatus(Enum):
    PENDING = "pending"
    WITHHELD = "withheld"
    COMMITTED = "committed"
    CONFLICT_FAILED = "conflict_failed"
    INSUFFICIENT_FUNDS = "insufficient_funds"
    TIMEOUT = "timeout"

    @property
    def terminal(self) -> bool:
        return self not in (TxStatus.PENDING, TxStatus.WITHHELD)


class PriorityClass(IntEnum):
    # Lower value dequeues first.
    READ_HIGH = 0
    WRITE_NORMAL = 1
    UNASSIGNED = 2


@dataclass(eq=True)
class Transfer:
    src: WalletId
    dst: WalletId
    amount: int


@dataclass(eq=True)
class Query:
    wallets: tuple[WalletId, ...]


@dataclass(eq=True)
class Transaction:
    """A single wallet operation plus the read/write footprint it declared.

    ``reads`` maps each read wallet to the version observed at endorsement.
    Transactions are created with version 0 (a fresh, untouched wallet);
    the simulation re-stamps them from live ledger state when the client's
    submission is endorsed.
    """

    id: TransactionId
    payload: Transfer | Query
    channel: ChannelId = "main"
    submitter: str = "client"
    reads: dict[WalletId, int] = field(default_factory=dict)
    writes: frozenset[WalletId] = frozenset()
    declared_deps: frozenset[TransactionId] = frozenset()
    priority: PriorityClass = PriorityClass.UNASSIGNED
    submit_time: int = 0

    def __post_init__(self):
        if not self.id:
            raise ValueError("transaction id must be non-empty")
        p = self.payload
        if isinstance(p, Transfer):
            if p.src == p.dst:
                raise ValueError(f"{self.id}: transfer source equals destination")
            if p.amount <= 0:
                raise ValueError(f"{self.id}: transfer amount must be positive")
            if not self.writes:
                self.writes = frozenset((p.src, p.dst))
            if not self.reads:
                self.reads = {p.src: 0, p.dst: 0}
            if p.src not in self.writes or p.dst not in self.writes:
                raise ValueError(f"{self.id}: transfer wallets must be written")
            if p.src not in self.reads:
                raise ValueError(f"{self.id}: transfer must read its source wallet")
        else:
            if self.writes:
                raise ValueError(f"{self.id}: read-only payload cannot write")
            if not self.reads:
                self.reads = {w: 0 for w in p.wallets}

    @property
    def read_wallets(self) -> set[WalletId]:
        return set(self.reads)

    @property
    def is_read_only(self) -> bool:
        return isinstance(self.payload, Query)

    def footprint(self) -> set[WalletId]:
        return set(self.reads) | set(self.writes)


def transfer_tx(
    tx_id: str,
    src: WalletId,
    dst: WalletId,
    amount: int,
    *,
    channel: ChannelId = "main",
    submitter: str = "client",
    reads: dict[WalletId, int] | None = None,
    extra_reads: tuple[WalletId, ...] = (),
    deps: tuple[TransactionId, ...] = (),
    submit_time: int = 0,
) -> Transaction:
    """Build a transfer reading {src, dst} (plus extras) at version 0."""
    if reads is None:
        reads = {src: 0, dst: 0}
        for w in extra_reads:
            reads.setdefault(w, 0)
    return Transaction(
        id=tx_id,
        payload=Transfer(src, dst, amount),
        channel=channel,
        submitter=submitter,
        reads=reads,
        declared_deps=frozenset(deps),
        submit_time=submit_time,
    )


def query_tx(
    tx_id: str,
    wallets: tuple[WalletId, ...],
    *,
    channel: ChannelId = "main",
    submitter: str = "client",
    submit_time: int = 0,
) -> Transaction:
    return Transaction(
        id=tx_id,
        payload=Query(tuple(wallets)),
        channel=channel,
        submitter=submitter,
        submit_time=submit_time,
    )


@dataclass(eq=True)
class LedgerState:
    """Balances, per-wallet versions and chain counters for one channel."""

    balances: dict[WalletId, int] = field(default_factory=dict)
    versions: dict[WalletId, int] = field(default_factory=dict)
    height: int = 0
    committed_tx_count: int = 0

    @classmethod
    def from_balances(
        cls, balances: dict[WalletId, int], *, height: int = 0, tx_count: int = 0
    ) -> "LedgerState":
        for wallet, amount in balances.items():
            if amount < 0:
                raise ValueError(f"negative initial balance for {wallet}")
        return cls(
            balances=dict(balances),
            versions={w: 0 for w in balances},
            height=height,
            committed_tx_count=tx_count,
        )

    def copy(self) -> "LedgerState":
        return LedgerState(
            balances=dict(self.balances),
            versions=dict(self.versions),
            height=self.height,
            committed_tx_count=self.committed_tx_count,
        )


@dataclass(eq=True)
class Block:
    height: int
    channel: ChannelId
    txs: list[Transaction]
    proposer: str

    def __post_init__(self):
        if not self.txs:
            raise ValueError("block must contain at least one transaction")


def conflicts_with(a: Transaction, b: Transaction) -> bool:
    """Two transactions conflict when a write overlaps the other's footprint.

    Read-read overlap is not a conflict, and a transaction never conflicts
    with itself.
    """
    if a.id == b.id:
        return False
    if a.writes & b.writes:
        return True
    if a.writes and not a.writes.isdisjoint(b.reads):
        return True
    if b.writes and not b.writes.isdisjoint(a.reads):
        return True
    return False


def stamp_read_versions(tx: Transaction, state: LedgerState) -> None:
    """Endorse ``tx`` against ``state``: snapshot current read versions."""
    versions = state.versions
    reads = tx.reads
    try:
        for wallet in reads:
            reads[wallet] = versions[wallet]
    except KeyError as exc:
        raise UnknownWalletError(f"{tx.id}: unknown wallet {exc.args[0]}") from None


def apply_transaction(
    state: LedgerState, tx: Transaction
) -> tuple[LedgerState, TxStatus]:
    """Validate and apply one transaction in place.

    Any non-committed status leaves balances and versions untouched.  The
    returned state is the same object, mutated only on commit.
    """
    balances = state.balances
    versions = state.versions
    if tx.is_read_only:
        for wallet in tx.reads:
            if wallet not in versions:
                raise UnknownWalletError(f"{tx.id}: unknown wallet {wallet}")
        return state, TxStatus.COMMITTED
    for wallet, expected in tx.reads.items():
        current = versions.get(wallet)
        if current is None:
            raise UnknownWalletError(f"{tx.id}: unknown wallet {wallet}")
        if current != expected:
            return state, TxStatus.CONFLICT_FAILED
    payload = tx.payload
    if payload.src not in balances or payload.dst not in balances:
        raise UnknownWalletError(f"{tx.id}: unknown transfer wallet")
    if payload.amount > balances[payload.src]:
        return state, TxStatus.INSUFFICIENT_FUNDS
    if balances[payload.dst] + payload.amount > MAX_TOKENS:
        raise TokenOverflowError(f"{tx.id}: destination balance overflow")
    balances[payload.src] -= payload.amount
    balances[payload.dst] += payload.amount
    for wallet in tx.writes:
        if wallet not in versions:
            raise UnknownWalletError(f"{tx.id}: unknown written wallet {wallet}")
        versions[wallet] += 1
    return state, TxStatus.COMMITTED


def commit_block(
    state: LedgerState, block: Block
) -> tuple[LedgerState, list[tuple[TransactionId, TxStatus]]]:
    """Apply a block's transactions in order and advance the chain head."""
    if block.height != state.height + 1:
        raise HeightMismatchError(
            f"block height {block.height}, expected {state.height + 1}"
        )
    results: list[tuple[TransactionId, TxStatus]] = []
    for tx in block.txs:
        _, status = apply_transaction(state, tx)
        results.append((tx.id, status))
        if status is TxStatus.COMMITTED:
            state.committed_tx_count += 1
    state.height += 1
    return state, results


def total_supply(state: LedgerState) -> int:
    total = 0
    for amount in state.balances.values():
        total += amount
        if total > MAX_TOKENS:
            raise TokenOverflowError("total supply overflow")
    return total
