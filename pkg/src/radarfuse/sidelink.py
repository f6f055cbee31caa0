"""Simulated radar-to-radar sidelink.

Messages carry either preprocessed point clouds (cooperation) or mixture
parameters (federation), with every numeric value quantized to 64 bits.
Bandwidth accounting counts the quantized payload only; transport framing is
not part of the overhead figure. Delivery is lossless and instantaneous,
with per-radar clock offsets rounded to whole update periods so a one-period
offset delivers the sender's previous-epoch content.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .mixture import GaussianComponent, GaussianMixture
from .sensor import GLOBAL, PointCloud

log = logging.getLogger(__name__)

BITS_PER_VALUE = 64
COOP_KIND = "coop"
FED_KIND = "fed"
FED_VALUES_PER_COMPONENT = 14  # weight, mean (3), covariance (9), point count


@dataclass(frozen=True)
class Topology:
    """Directed radar graph; an edge (h, k) means k receives from h."""

    ids: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        known = set(self.ids)
        if len(known) != len(self.ids):
            raise ValueError("duplicate radar ids")
        for h, k in self.edges:
            if h == k:
                raise ValueError(f"self-loop on radar {h}")
            if h not in known or k not in known:
                raise ValueError(f"edge ({h}, {k}) references an unknown radar")

    @classmethod
    def fully_connected(cls, ids: Sequence[int]) -> "Topology":
        ids = tuple(ids)
        return cls(ids, tuple((h, k) for k in ids for h in ids if h != k))

    def neighbors(self, k: int) -> tuple[int, ...]:
        return tuple(h for h, dst in self.edges if dst == k)


@dataclass(frozen=True)
class CoopMessage:
    """Raw point-cloud payload: 3 coordinates x 64 bits per point."""

    sender: int
    epoch: int
    points: np.ndarray  # (n, 3) float64

    @property
    def payload_bits(self) -> int:
        return 3 * BITS_PER_VALUE * len(self.points)


@dataclass(frozen=True)
class FedMessage:
    """Mixture-parameter payload: point total, component count, then 14
    values per component."""

    sender: int
    epoch: int
    q_total: int
    components: tuple[GaussianComponent, ...]

    @property
    def value_count(self) -> int:
        return 2 + FED_VALUES_PER_COMPONENT * len(self.components)

    @property
    def payload_bits(self) -> int:
        return BITS_PER_VALUE * self.value_count


Message = CoopMessage | FedMessage


@dataclass(frozen=True)
class ClockModel:
    """Per-radar clock offsets (seconds) plus sub-period jitter."""

    offsets: Mapping[int, float]
    jitter_std: float = 0.0

    def __post_init__(self):
        if not all(np.isfinite(v) for v in self.offsets.values()):
            raise ValueError("clock offsets must be finite")
        if not np.isfinite(self.jitter_std) or self.jitter_std < 0:
            raise ValueError("jitter_std must be finite and >= 0")

    def offset_periods(self, radar: int, update_period: float) -> int:
        return int(round(self.offsets.get(radar, 0.0) / update_period))


def encode_coop(cloud: PointCloud) -> CoopMessage:
    if cloud.frame != GLOBAL:
        raise ValueError("only global-frame clouds are exchanged")
    return CoopMessage(cloud.radar_id, cloud.epoch, np.asarray(cloud.points, dtype=np.float64).copy())


def decode_coop(msg: CoopMessage) -> PointCloud:
    return PointCloud(GLOBAL, msg.points.copy(), msg.epoch, msg.sender)


def encode_fed(mixture: GaussianMixture, sender: int, epoch: int) -> FedMessage:
    """Refuses mixtures whose covariances are not positive-definite."""
    for comp in mixture.components:
        try:
            np.linalg.cholesky(comp.cov)
        except np.linalg.LinAlgError:
            raise ValueError("mixture has a non positive-definite covariance") from None
    return FedMessage(sender, epoch, mixture.total_points, tuple(mixture.components))


def decode_fed(msg: FedMessage) -> GaussianMixture:
    return GaussianMixture(list(msg.components), msg.q_total)


@dataclass
class LinkStats:
    """Cumulative payload accounting with exact rational rates.

    ``tx_bits`` counts each radar's broadcast payload once per message (the
    sidelink is a shared medium); ``link_bits`` additionally tracks per-edge
    deliveries. Rates divide by elapsed time = epochs x update period, kept
    as exact fractions until display.
    """

    update_period: Fraction
    epochs: int = 0
    tx_bits: dict[int, int] = field(default_factory=dict)
    tx_msgs: dict[int, int] = field(default_factory=dict)
    rx_bits: dict[int, int] = field(default_factory=dict)
    link_bits: dict[tuple[int, int], int] = field(default_factory=dict)
    link_msgs: dict[tuple[int, int], int] = field(default_factory=dict)

    def tx_rate(self, radar: int) -> Fraction:
        """Transmitted payload bits per second for one radar."""
        if self.epochs == 0:
            return Fraction(0)
        return Fraction(self.tx_bits.get(radar, 0)) / (self.epochs * self.update_period)


def account(stats: LinkStats, msg: Message) -> LinkStats:
    """Charge one transmitted message to its sender's cumulative payload."""
    stats.tx_bits[msg.sender] = stats.tx_bits.get(msg.sender, 0) + msg.payload_bits
    stats.tx_msgs[msg.sender] = stats.tx_msgs.get(msg.sender, 0) + 1
    return stats


def account_delivery(stats: LinkStats, msg: Message, receiver: int) -> LinkStats:
    link = (msg.sender, receiver)
    stats.link_bits[link] = stats.link_bits.get(link, 0) + msg.payload_bits
    stats.link_msgs[link] = stats.link_msgs.get(link, 0) + 1
    stats.rx_bits[receiver] = stats.rx_bits.get(receiver, 0) + msg.payload_bits
    return stats


class OutboxHistory:
    """Per-epoch buffer of sent messages, kept long enough for clock offsets."""

    def __init__(self, depth: int = 16):
        self.depth = depth
        self._buffer: dict[int, dict[int, Message]] = {}

    def push(self, epoch: int, outbox: Mapping[int, Message]) -> None:
        self._buffer[epoch] = dict(outbox)
        stale = [e for e in self._buffer if e < epoch - self.depth]
        for e in stale:
            del self._buffer[e]

    def get(self, epoch: int, sender: int) -> Message | None:
        return self._buffer.get(epoch, {}).get(sender)


def _jittered(msg: Message, noise_std: float, rng: np.random.Generator) -> Message:
    """Extra position noise from sub-period clock jitter on moving content."""
    if isinstance(msg, CoopMessage):
        points = msg.points + rng.normal(0.0, noise_std, msg.points.shape)
        return CoopMessage(msg.sender, msg.epoch, points)
    comps = tuple(
        GaussianComponent(c.weight, c.mean + rng.normal(0.0, noise_std, 3), c.cov, c.point_count)
        for c in msg.components
    )
    return FedMessage(msg.sender, msg.epoch, msg.q_total, comps)


def deliver(
    topology: Topology,
    history: OutboxHistory,
    epoch: int,
    clock: ClockModel,
    update_period: float,
    rng: np.random.Generator | None = None,
    motion_speed: float = 0.0,
) -> dict[int, list[Message]]:
    """Inboxes for every radar at ``epoch``.

    Radar k receives exactly the messages of its in-neighbors; a sender
    whose clock is ahead by one period contributes its previous-epoch
    message. Messages from before epoch 0 do not exist and are skipped.
    """
    inboxes: dict[int, list[Message]] = {k: [] for k in topology.ids}
    for k in topology.ids:
        for h in topology.neighbors(k):
            msg = history.get(epoch - clock.offset_periods(h, update_period), h)
            if msg is None:
                continue
            noise_std = motion_speed * clock.jitter_std
            if noise_std > 0 and rng is not None:
                msg = _jittered(msg, noise_std, rng)
            inboxes[k].append(msg)
    return inboxes


def message_values(msg: Message) -> list[float]:
    """Canonical flat payload: the exact 64-bit values on the wire."""
    if isinstance(msg, CoopMessage):
        return [float(v) for v in msg.points.ravel()]
    values = [float(msg.q_total), float(len(msg.components))]
    for c in msg.components:
        values.append(float(c.weight))
        values.extend(float(v) for v in c.mean)
        values.extend(float(v) for v in c.cov.ravel())
        values.append(float(c.point_count))
    return values


def message_from_values(sender: int, epoch: int, kind: str, values: Sequence[float]) -> Message:
    if kind == COOP_KIND:
        points = np.asarray(values, dtype=np.float64).reshape(-1, 3)
        return CoopMessage(sender, epoch, points)
    if kind != FED_KIND:
        raise ValueError(f"unknown message kind {kind!r}")
    q_total, n_comp = int(values[0]), int(values[1])
    comps = []
    for i in range(n_comp):
        base = 2 + i * FED_VALUES_PER_COMPONENT
        chunk = np.asarray(values[base : base + FED_VALUES_PER_COMPONENT], dtype=np.float64)
        comps.append(
            GaussianComponent(float(chunk[0]), chunk[1:4].copy(), chunk[4:13].reshape(3, 3).copy(), int(chunk[13]))
        )
    return FedMessage(sender, epoch, q_total, tuple(comps))


def write_replay(messages: Iterable[Message], fh) -> None:
    """Append messages to an open text stream, one JSON object per line.

    Floats serialize via their shortest round-tripping representation, so
    the numeric payload survives the text format bit-exactly.
    """
    for msg in messages:
        kind = COOP_KIND if isinstance(msg, CoopMessage) else FED_KIND
        record = {"sender": msg.sender, "epoch": msg.epoch, "kind": kind, "values": message_values(msg)}
        fh.write(json.dumps(record) + "\n")


def read_replay(path) -> list[Message]:
    messages = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            messages.append(message_from_values(rec["sender"], rec["epoch"], rec["kind"], rec["values"]))
    return messages
