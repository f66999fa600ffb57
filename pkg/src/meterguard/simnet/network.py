"""In-process message-passing network with exact byte accounting.

Every endpoint runs a *program*: a generator function that receives a
:class:`Context`, sends frames with ``ctx.send`` and waits for frames with
``msg = yield from ctx.expect(src, kind)``. The same programs run under a
deterministic single-threaded scheduler or one thread per endpoint; both
produce the same transcript because channels are FIFO per (src, dst) pair
and logical rounds only depend on what each endpoint has received.
"""
from __future__ import annotations

import csv
import hashlib
import queue
import struct
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum

from ..errors import ConfigError, Deadlock, ProtocolError

HEADER = struct.Struct("<HHI")  # kind, version, body words
HEADER_BYTES = HEADER.size
FRAME_VERSION = 1

OFFLINE = "offline"
ONLINE = "online"
MAC_CHECK = "mac-check"
PHASES = (OFFLINE, ONLINE, MAC_CHECK)


class Role(str, Enum):
    CLIENT = "client"
    PARTY = "party"
    SUPPLIER = "supplier"
    DEALER = "dealer"


_ROLE_ORDER = {Role.DEALER: 0, Role.CLIENT: 1, Role.PARTY: 2, Role.SUPPLIER: 3}


@dataclass(frozen=True)
class Endpoint:
    role: Role
    id: int = 0

    def __str__(self):
        return f"{self.role.value}:{self.id}"

    @property
    def sort_key(self):
        return (_ROLE_ORDER[self.role], self.id)

    @classmethod
    def parse(cls, text: str) -> Endpoint:
        role, _, ident = text.partition(":")
        try:
            return cls(Role(role), int(ident or 0))
        except ValueError as exc:
            raise ConfigError(f"bad endpoint {text!r}") from exc


DEALER = Endpoint(Role.DEALER, 0)
SUPPLIER = Endpoint(Role.SUPPLIER, 0)


def party(i: int) -> Endpoint:
    return Endpoint(Role.PARTY, i)


def client(i: int) -> Endpoint:
    return Endpoint(Role.CLIENT, i)


@dataclass
class Message:
    src: Endpoint
    dst: Endpoint
    phase: str
    round: int
    seq: int
    kind: int
    body: bytes
    field_words: bool = True
    tampered: bool = False

    @property
    def size(self) -> int:
        return HEADER_BYTES + len(self.body)

    def wire(self) -> bytes:
        return HEADER.pack(self.kind, FRAME_VERSION, len(self.body) // 8) + self.body


@dataclass(frozen=True)
class Recv:
    src: Endpoint


@dataclass(frozen=True)
class TamperShare:
    """Add ``delta`` to one 8-byte word of the ``message_index``-th
    non-offline frame sent by ``target``."""

    target: Endpoint
    message_index: int
    delta: int
    element: int = 0


@dataclass(frozen=True)
class Alert:
    endpoint: Endpoint
    phase: str
    kind: str  # "tamper" aborts the period, "fraud" is informational
    reason: str


class Context:
    def __init__(self, net: Network, endpoint: Endpoint):
        self.net = net
        self.endpoint = endpoint
        self.phase = OFFLINE
        self.clock = 0  # highest round received so far
        self.sent_online = 0

    def send(self, dst: Endpoint, kind: int, body: bytes, field_words: bool = True) -> None:
        if len(body) % 8:
            raise ProtocolError("frame bodies are whole 8-byte words")
        self.net._deliver(self, dst, kind, body, field_words)

    def expect(self, src: Endpoint, *kinds: int):
        msg = yield Recv(src)
        if kinds and msg.kind not in kinds:
            raise ProtocolError(f"{self.endpoint} expected kind {kinds} from {src}, got {msg.kind}")
        return msg

    def alert(self, reason: str, kind: str = "tamper") -> None:
        self.net.alerts.append(Alert(self.endpoint, self.phase, kind, reason))


@dataclass
class EndpointPhaseStats:
    bytes_sent: int = 0
    bytes_received: int = 0
    messages_sent: int = 0
    rounds: set = field(default_factory=set)
    cpu_ns: int = 0


@dataclass
class NetStats:
    """Per-endpoint, per-phase traffic and CPU accounting for one run."""

    rows: dict = field(default_factory=dict)  # (Endpoint, phase) -> EndpointPhaseStats
    wall_ns: dict = field(default_factory=dict)  # phase -> ns (whole network)

    def entry(self, endpoint: Endpoint, phase: str) -> EndpointPhaseStats:
        key = (endpoint, phase)
        if key not in self.rows:
            self.rows[key] = EndpointPhaseStats()
        return self.rows[key]

    @property
    def endpoints(self) -> list[Endpoint]:
        return sorted({ep for ep, _ in self.rows}, key=lambda e: e.sort_key)

    def sent(self, endpoint: Endpoint, phase: str | None = None) -> int:
        return sum(s.bytes_sent for (ep, ph), s in self.rows.items()
                   if ep == endpoint and (phase is None or ph == phase))

    def received(self, endpoint: Endpoint, phase: str | None = None) -> int:
        return sum(s.bytes_received for (ep, ph), s in self.rows.items()
                   if ep == endpoint and (phase is None or ph == phase))

    @property
    def total_sent(self) -> int:
        return sum(s.bytes_sent for s in self.rows.values())

    @property
    def total_received(self) -> int:
        return sum(s.bytes_received for s in self.rows.values())

    def rounds(self, phase: str | None = None) -> int:
        seen = set()
        for (_, ph), s in self.rows.items():
            if phase is None or ph == phase:
                seen |= s.rounds
        return len(seen)

    def cpu_micros(self, phase: str | None = None) -> int:
        return sum(s.cpu_ns for (_, ph), s in self.rows.items()
                   if phase is None or ph == phase) // 1000

    def byte_table(self) -> dict:
        """{(endpoint, phase): (sent, received)} for nonzero traffic."""
        return {k: (s.bytes_sent, s.bytes_received) for k, s in self.rows.items()
                if s.bytes_sent or s.bytes_received}

    def write_csv(self, path, timing: bool = True) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["endpoint", "role", "phase", "bytes_sent", "bytes_received", "rounds", "cpu_micros"])
            for ep in self.endpoints:
                for ph in PHASES:
                    s = self.rows.get((ep, ph))
                    if s is None:
                        continue
                    w.writerow([str(ep), ep.role.value, ph, s.bytes_sent, s.bytes_received,
                                len(s.rounds), s.cpu_ns // 1000 if timing else 0])


class Network:
    def __init__(self, tampers=(), modulus: int | None = None, timing: bool = True, recv_timeout: float = 120.0):
        self.programs: dict[Endpoint, object] = {}
        self.contexts: dict[Endpoint, Context] = {}
        self.modulus = modulus
        self.timing = timing
        self.recv_timeout = recv_timeout
        self.tampers = {}
        for t in tampers:
            key = (t.target, t.message_index)
            if key in self.tampers:
                raise ConfigError(f"two tamper actions on message {t.message_index} of {t.target}")
            if t.target.role in (Role.DEALER, Role.SUPPLIER):
                raise ConfigError(f"{t.target} sends no online messages")
            self.tampers[key] = t
        self.fired: list[TamperShare] = []
        self.messages: list[Message] = []
        self.alerts: list[Alert] = []
        self.stats = NetStats()
        self._channels: dict[tuple, queue.Queue] = defaultdict(queue.Queue)
        self._seq: dict[tuple, int] = defaultdict(int)
        self._lock = threading.Lock()

    def add(self, endpoint: Endpoint, program) -> Context:
        if endpoint in self.programs:
            raise ConfigError(f"duplicate endpoint {endpoint}")
        ctx = Context(self, endpoint)
        self.programs[endpoint] = program
        self.contexts[endpoint] = ctx
        return ctx

    # -- delivery ---------------------------------------------------------
    def _deliver(self, ctx: Context, dst: Endpoint, kind: int, body: bytes, field_words: bool) -> None:
        if dst not in self.programs:
            raise ProtocolError(f"{ctx.endpoint} sent to unknown endpoint {dst}")
        chan = (ctx.endpoint, dst)
        tampered = False
        if ctx.phase != OFFLINE:
            tamper = self.tampers.get((ctx.endpoint, ctx.sent_online))
            ctx.sent_online += 1
            if tamper is not None and body:
                body = self._apply(tamper, body, field_words)
                tampered = True
                with self._lock:
                    self.fired.append(tamper)
        seq = self._seq[chan]
        self._seq[chan] = seq + 1
        msg = Message(ctx.endpoint, dst, ctx.phase, ctx.clock + 1, seq, kind, body, field_words, tampered)
        with self._lock:
            self.messages.append(msg)
            s = self.stats.entry(ctx.endpoint, ctx.phase)
            s.bytes_sent += msg.size
            s.messages_sent += 1
            s.rounds.add(msg.round)
            self.stats.entry(dst, ctx.phase).bytes_received += msg.size
        self._channels[chan].put(msg)

    def _apply(self, t: TamperShare, body: bytes, field_words: bool) -> bytes:
        words = len(body) // 8
        at = 8 * (t.element % words)
        word = int.from_bytes(body[at:at + 8], "little")
        if field_words and self.modulus:
            word = (word + t.delta) % self.modulus
        else:
            word = (word + t.delta) % (1 << 64)
        return body[:at] + word.to_bytes(8, "little") + body[at + 8:]

    def _take(self, ctx: Context, req: Recv, block: bool) -> Message | None:
        chan = self._channels[(req.src, ctx.endpoint)]
        try:
            msg = chan.get(timeout=self.recv_timeout) if block else chan.get_nowait()
        except queue.Empty:
            if block:
                raise Deadlock(f"{ctx.endpoint} timed out waiting for {req.src}")
            return None
        ctx.clock = max(ctx.clock, msg.round)
        return msg

    # -- scheduling -------------------------------------------------------
    def run(self, threaded: bool = False) -> dict:
        return self._run_threaded() if threaded else self._run_sequential()

    def _charge(self, ctx: Context, phase: str, ns: int) -> None:
        if self.timing:
            with self._lock:
                self.stats.entry(ctx.endpoint, phase).cpu_ns += ns

    def _run_sequential(self) -> dict:
        clock = time.process_time_ns
        gens, pending, results = {}, {}, {}
        for ep, prog in self.programs.items():
            gens[ep] = prog(self.contexts[ep])
            pending[ep] = None
        started = set()
        while gens:
            progress = False
            for ep in list(gens):
                ctx = self.contexts[ep]
                while ep in gens:
                    if ep not in started:
                        inbound = None
                    else:
                        inbound = self._take(ctx, pending[ep], block=False)
                        if inbound is None:
                            break
                    phase, t0 = ctx.phase, clock()
                    try:
                        if ep not in started:
                            started.add(ep)
                            req = next(gens[ep])
                        else:
                            req = gens[ep].send(inbound)
                    except StopIteration as stop:
                        results[ep] = stop.value
                        del gens[ep]
                    finally:
                        self._charge(ctx, phase, clock() - t0)
                    if ep in gens:
                        pending[ep] = req
                    progress = True
            if not progress:
                stuck = ", ".join(f"{ep}<-{pending[ep].src}" for ep in gens)
                raise Deadlock(f"no endpoint can make progress: {stuck}")
        return results

    def _run_threaded(self) -> dict:
        results, errors = {}, []

        def worker(ep: Endpoint):
            ctx = self.contexts[ep]
            gen = self.programs[ep](ctx)
            inbound = None
            first = True
            try:
                while True:
                    phase, t0 = ctx.phase, time.thread_time_ns()
                    try:
                        req = next(gen) if first else gen.send(inbound)
                    except StopIteration as stop:
                        results[ep] = stop.value
                        return
                    finally:
                        self._charge(ctx, phase, time.thread_time_ns() - t0)
                    first = False
                    inbound = self._take(ctx, req, block=True)
            except BaseException as exc:  # surfaced in the caller thread
                errors.append(exc)

        threads = [threading.Thread(target=worker, args=(ep,), name=str(ep), daemon=True)
                   for ep in self.programs]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if errors:
            raise errors[0]
        return results

    # -- audit ------------------------------------------------------------
    def transcript(self) -> list[Message]:
        """Messages in canonical order, independent of the thread schedule."""
        return sorted(self.messages, key=lambda m: (m.src.sort_key, m.dst.sort_key, m.seq))

    def transcript_digest(self) -> str:
        h = hashlib.sha256()
        for m in self.transcript():
            h.update(f"{m.src}>{m.dst}|{m.phase}|{m.round}|{m.seq}|".encode())
            h.update(m.wire())
        return h.hexdigest()
