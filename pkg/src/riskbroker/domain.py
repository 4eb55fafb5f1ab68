"""Core data model of the broker: requests, pricing schemes, the resource pool.

Time is integer minutes throughout. A reserved resource purchased at minute
``p`` with contract length ``L`` is usable during minutes ``p .. p+L-1`` and
expired from minute ``p+L`` on.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Union

MINUTE = 1
HOUR = 60
DAY = 24 * HOUR
MONTH = 30 * DAY
QUARTER = 3 * MONTH
YEAR = 12 * MONTH


class PoolInvariantError(RuntimeError):
    """A scheduler tried to break a resource-pool invariant."""


class UnknownRequestError(KeyError):
    pass


@dataclass(frozen=True)
class Reserved:
    purchase_time: int
    contract_len: int

    def __post_init__(self):
        if self.contract_len <= 0:
            raise ValueError("contract_len must be positive")

    @property
    def expires_at(self) -> int:
        """First minute at which the resource is no longer usable."""
        return self.purchase_time + self.contract_len

    def usable(self, now: int) -> bool:
        return self.purchase_time <= now < self.expires_at


@dataclass(frozen=True)
class OnDemand:
    start_time: int


PricingScheme = Union[Reserved, OnDemand]


@dataclass(frozen=True)
class UserRequest:
    request_id: str
    start_time: int
    end_time: int
    # Single instance type; carried as an opaque tag and never branched on.
    vm_type: str = "default"

    def __post_init__(self):
        if self.start_time < 0:
            raise ValueError(f"request {self.request_id!r}: negative start_time")
        if self.end_time <= self.start_time:
            raise ValueError(
                f"request {self.request_id!r}: end_time {self.end_time} "
                f"must be after start_time {self.start_time}"
            )

    @property
    def usage(self) -> int:
        return self.end_time - self.start_time


@dataclass
class Resource:
    resource_id: int
    scheme: PricingScheme
    occupant: str | None = None

    @property
    def is_reserved(self) -> bool:
        return isinstance(self.scheme, Reserved)


@dataclass
class PricingConfig:
    ondemand_rate: float = 1.0
    reserved_discount: float = 0.60
    contract_len: int = QUARTER
    cashback_fraction: float = 1.0

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ValueError("; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if not self.ondemand_rate > 0:
            out.append("ondemand_rate must be positive")
        if not 0.0 <= self.reserved_discount < 1.0:
            out.append("reserved_discount must be in [0, 1)")
        if int(self.contract_len) != self.contract_len or self.contract_len <= 0:
            out.append("contract_len must be a positive integer number of minutes")
        if not 0.0 <= self.cashback_fraction <= 1.0:
            out.append("cashback_fraction must be in [0, 1]")
        return out

    @property
    def reserved_cost(self) -> float:
        """Up-front price of one reserved contract."""
        return (1.0 - self.reserved_discount) * self.ondemand_rate * self.contract_len

    @property
    def break_even_utilization(self) -> float:
        return self.reserved_cost / (self.ondemand_rate * self.contract_len)


class ResourcePool:
    """Broker-owned VM instances and their occupancy binding.

    Resource ids are handed out in ascending creation order, so "lowest id
    first" reuse means the oldest reserved contract is filled first.
    """

    def __init__(self):
        self.resources: dict[int, Resource] = {}
        self.binding: dict[int, str] = {}
        self._host: dict[str, int] = {}
        self._free: list[int] = []  # lazy min-heap of possibly-free reserved ids
        self._next_id = 0

    def __len__(self):
        return len(self.resources)

    def create(self, scheme: PricingScheme) -> int:
        rid = self._next_id
        self._next_id += 1
        self.resources[rid] = Resource(rid, scheme)
        if isinstance(scheme, Reserved):
            heapq.heappush(self._free, rid)
        return rid

    def _is_available(self, rid: int, now: int) -> bool:
        res = self.resources.get(rid)
        return (
            res is not None
            and res.occupant is None
            and isinstance(res.scheme, Reserved)
            and res.scheme.usable(now)
        )

    def available_reserved(self, now: int) -> list[int]:
        return sorted(rid for rid in self.resources if self._is_available(rid, now))

    def first_available(self, now: int) -> int | None:
        while self._free:
            rid = self._free[0]
            if self._is_available(rid, now):
                return rid
            heapq.heappop(self._free)
        return None

    def host_of(self, request_id: str) -> int | None:
        return self._host.get(request_id)

    def bind(self, resource_id: int, request_id: str, now: int | None = None) -> None:
        res = self.resources.get(resource_id)
        if res is None:
            raise PoolInvariantError(f"no resource {resource_id}")
        if res.occupant is not None:
            raise PoolInvariantError(
                f"resource {resource_id} already hosts {res.occupant!r}"
            )
        if request_id in self._host:
            raise PoolInvariantError(
                f"request {request_id!r} already bound to {self._host[request_id]}"
            )
        if now is not None and isinstance(res.scheme, Reserved) and not res.scheme.usable(now):
            raise PoolInvariantError(f"resource {resource_id} is not usable at {now}")
        res.occupant = request_id
        self.binding[resource_id] = request_id
        self._host[request_id] = resource_id

    def release(self, request_id: str) -> Resource:
        """Unbind `request_id`; on-demand hosts are destroyed, reserved ones kept."""
        rid = self._host.pop(request_id, None)
        if rid is None:
            raise UnknownRequestError(request_id)
        res = self.resources[rid]
        res.occupant = None
        del self.binding[rid]
        if isinstance(res.scheme, OnDemand):
            del self.resources[rid]
        else:
            heapq.heappush(self._free, rid)
        return res

    def expire(self, now: int) -> list[str]:
        """Drop reserved resources whose contract ends at `now`; return their occupants."""
        gone = [
            rid for rid, res in self.resources.items()
            if isinstance(res.scheme, Reserved) and res.scheme.expires_at <= now
        ]
        evicted = []
        for rid in gone:
            occupant = self.resources[rid].occupant
            if occupant is not None:
                self.release(occupant)
                evicted.append(occupant)
            del self.resources[rid]
        return evicted

    def reserved(self, now: int) -> Iterator[Resource]:
        for res in self.resources.values():
            if isinstance(res.scheme, Reserved) and res.scheme.usable(now):
                yield res

    def volume(self, now: int) -> tuple[int, int]:
        total = 0
        count = 0
        for res in self.reserved(now):
            total += res.scheme.expires_at - now
            count += 1
        return total, count

    def ondemand_count(self) -> int:
        return sum(1 for r in self.resources.values() if isinstance(r.scheme, OnDemand))

    def busy_reserved(self, now: int) -> int:
        return sum(1 for r in self.reserved(now) if r.occupant is not None)


def pool_available_reserved(pool: ResourcePool, now: int) -> list[int]:
    return pool.available_reserved(now)


def bind(pool: ResourcePool, resource_id: int, request_id: str, now: int | None = None) -> ResourcePool:
    pool.bind(resource_id, request_id, now)
    return pool


def release(pool: ResourcePool, request_id: str) -> ResourcePool:
    pool.release(request_id)
    return pool


def pool_volume(pool: ResourcePool, now: int) -> tuple[int, int]:
    """(remaining contract minutes over unexpired reserved resources, their count)."""
    return pool.volume(now)


class EventKind(Enum):
    CREATION = "CREATION"
    TERMINATION = "TERMINATION"


class RequestDB:
    """Append-only request event log with a per-minute arrival-count view."""

    def __init__(self):
        self.events: list[tuple[EventKind, str, int]] = []
        self.requests: dict[str, UserRequest] = {}
        self._arrivals: list[int] = []
        self._terminated: set[str] = set()

    def log_creation(self, request: UserRequest, time: int) -> None:
        if request.request_id in self.requests:
            raise ValueError(f"duplicate request_id {request.request_id!r}")
        self._append(EventKind.CREATION, request.request_id, time)
        self.requests[request.request_id] = request
        while len(self._arrivals) <= time:
            self._arrivals.append(0)
        self._arrivals[time] += 1

    def log_termination(self, request_id: str, time: int) -> None:
        if request_id not in self.requests:
            raise UnknownRequestError(request_id)
        self._append(EventKind.TERMINATION, request_id, time)
        self._terminated.add(request_id)

    def _append(self, kind: EventKind, request_id: str, time: int) -> None:
        if self.events and time < self.events[-1][2]:
            raise ValueError("events must be logged in time order")
        self.events.append((kind, request_id, time))

    def arrival_count(self, t: int) -> int:
        return self._arrivals[t] if 0 <= t < len(self._arrivals) else 0

    def arrival_series(self, length: int) -> list[int]:
        out = self._arrivals[:length]
        return out + [0] * (length - len(out))

    def is_active(self, request_id: str) -> bool:
        return request_id in self.requests and request_id not in self._terminated

    def active_count(self, t: int) -> int:
        created = sum(1 for k, _, tm in self.events if k is EventKind.CREATION and tm <= t)
        ended = sum(1 for k, _, tm in self.events if k is EventKind.TERMINATION and tm <= t)
        return created - ended


@dataclass
class PendingQueue:
    """FIFO of request ids awaiting placement."""

    _items: deque = field(default_factory=deque)
    _members: set = field(default_factory=set)

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def __contains__(self, request_id):
        return request_id in self._members

    def push_back(self, request_id: str) -> None:
        if request_id in self._members:
            raise PoolInvariantError(f"{request_id!r} is already queued")
        self._items.append(request_id)
        self._members.add(request_id)

    def push_front(self, request_ids: Iterable[str]) -> None:
        ids = list(request_ids)
        for rid in ids:
            if rid in self._members:
                raise PoolInvariantError(f"{rid!r} is already queued")
        self._items.extendleft(reversed(ids))
        self._members.update(ids)

    def remove(self, request_id: str) -> None:
        self._items.remove(request_id)
        self._members.discard(request_id)

    def drain(self) -> list[str]:
        out = list(self._items)
        self._items.clear()
        self._members.clear()
        return out
