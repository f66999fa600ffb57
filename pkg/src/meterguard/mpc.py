"""SPDZ-style authenticated additive secret sharing.

Each party holds, for a secret x, an additive share of x and an additive
share of alpha*x where alpha is the global MAC key (itself additively
shared). Linear operations are local. Multiplication consumes a Beaver
triple and two openings. Openings are recorded and checked in one batch
by :func:`check_macs`, which uses a commit-then-reveal round so no party
can choose its contribution after seeing the others.

The offline phase is a seeded trusted dealer. Shares may be scalars or
numpy object arrays; all local operations broadcast like numpy.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (ConfigError, DataError, EmptyTranscript, MaskExhausted, OwnerMismatch,
                     ProtocolError, TripleReuse)
from .field import MERSENNE61, WORD, Field
from .simnet.network import MAC_CHECK, ONLINE, Network, party

KIND_OPEN = 10
KIND_MAC_COMMIT = 11
KIND_MAC_REVEAL = 12

NONCE_BYTES = 16
DIGEST_BYTES = 32


@dataclass(frozen=True)
class MacKeyShare:
    alpha_share: int
    owner: int


@dataclass(frozen=True)
class AuthShare:
    value: object
    mac: object
    owner: int

    @property
    def shape(self):
        return np.shape(self.value)

    def __getitem__(self, idx) -> AuthShare:
        return AuthShare(self.value[idx], self.mac[idx], self.owner)

    def reshape(self, *shape) -> AuthShare:
        return AuthShare(np.reshape(self.value, *shape), np.reshape(self.mac, *shape), self.owner)


def _same_owner(x: AuthShare, y: AuthShare) -> None:
    if x.owner != y.owner:
        raise OwnerMismatch(f"share of party {x.owner} combined with share of party {y.owner}")


def add_shares(x: AuthShare, y: AuthShare, f: Field) -> AuthShare:
    _same_owner(x, y)
    return AuthShare((x.value + y.value) % f.modulus, (x.mac + y.mac) % f.modulus, x.owner)


def sub_shares(x: AuthShare, y: AuthShare, f: Field) -> AuthShare:
    _same_owner(x, y)
    return AuthShare((x.value - y.value) % f.modulus, (x.mac - y.mac) % f.modulus, x.owner)


def mul_public(x: AuthShare, k, f: Field) -> AuthShare:
    k = np.asarray(k, dtype=object) % f.modulus if np.ndim(k) else int(k) % f.modulus
    return AuthShare(x.value * k % f.modulus, x.mac * k % f.modulus, x.owner)


def add_public(x: AuthShare, k, key: MacKeyShare, f: Field) -> AuthShare:
    """Party 0 shifts its value share; every party shifts its MAC share."""
    if key.owner != x.owner:
        raise OwnerMismatch("MAC key share belongs to another party")
    value = (x.value + k) % f.modulus if x.owner == 0 else x.value
    return AuthShare(value, (x.mac + key.alpha_share * k) % f.modulus, x.owner)


def sum_shares(x: AuthShare, f: Field, axis=None) -> AuthShare:
    value = np.sum(np.asarray(x.value, dtype=object), axis=axis)
    mac = np.sum(np.asarray(x.mac, dtype=object), axis=axis)
    return AuthShare(value % f.modulus, mac % f.modulus, x.owner)


def reconstruct(shares, f: Field):
    """Sum value shares across parties (test and dealer-side oracle)."""
    total = sum(np.asarray(s.value, dtype=object) for s in shares) % f.modulus
    return int(total) if np.ndim(total) == 0 else total


def reconstruct_mac(shares, f: Field):
    total = sum(np.asarray(s.mac, dtype=object) for s in shares) % f.modulus
    return int(total) if np.ndim(total) == 0 else total


# -- offline material -------------------------------------------------------

class BeaverTriple:
    """One party's view of a batch of triples taken from its pool."""

    def __init__(self, a: AuthShare, b: AuthShare, c: AuthShare, indices: range):
        self.a, self.b, self.c = a, b, c
        self.indices = indices
        self.consumed = False

    def __len__(self):
        return len(self.indices)

    def consume(self) -> None:
        if self.consumed:
            raise TripleReuse(f"triples {self.indices.start}..{self.indices.stop - 1} already used")
        self.consumed = True


class TriplePool:
    def __init__(self, a: AuthShare, b: AuthShare, c: AuthShare):
        self.a, self.b, self.c = a, b, c
        self.used = 0

    @property
    def size(self) -> int:
        return len(self.a.value)

    @property
    def remaining(self) -> int:
        return self.size - self.used

    def take(self, count: int | None = None, shape=None) -> BeaverTriple:
        """``take()`` gives one scalar triple, ``take(k)`` a batch of k,
        ``take(shape=s)`` a batch reshaped to s."""
        scalar = count is None and shape is None
        if count is None:
            count = int(np.prod(shape)) if shape is not None else 1
        if count > self.remaining:
            raise TripleReuse(f"need {count} fresh triples, {self.remaining} left")
        idx = range(self.used, self.used + count)
        self.used += count
        sl = slice(idx.start, idx.stop)
        parts = [s[sl] for s in (self.a, self.b, self.c)]
        if scalar:
            parts = [AuthShare(int(p.value[0]), int(p.mac[0]), p.owner) for p in parts]
        elif shape is not None:
            parts = [p.reshape(shape) for p in parts]
        return BeaverTriple(*parts, indices=idx)


@dataclass
class InputMasks:
    """Random masks r: the input owner learns r, parties hold [r]."""

    values: np.ndarray
    shares: list  # per party: AuthShare over all masks
    used: int = 0

    @property
    def remaining(self) -> int:
        return len(self.values) - self.used

    def take(self, count: int = 1):
        if count > self.remaining:
            raise MaskExhausted(f"need {count} input masks, {self.remaining} left")
        sl = slice(self.used, self.used + count)
        self.used += count
        return self.values[sl], [s[sl] for s in self.shares]


class Dealer:
    """Trusted-dealer stand-in for the cryptographic offline phase."""

    def __init__(self, n_parties: int, f: Field, rng: np.random.Generator):
        if n_parties < 2:
            raise ConfigError("at least two computation parties are required")
        self.n_parties = n_parties
        self.field = f
        self.rng = rng
        self.alpha = int(f.random(rng, (), nonzero=True))
        self.key_shares = [MacKeyShare(int(v), i) for i, v in enumerate(self.split(self.alpha))]

    def split(self, secret) -> list:
        """Additive n-out-of-n sharing; works elementwise on arrays."""
        f = self.field
        secret = np.asarray(secret, dtype=object)
        shares = [f.random(self.rng, secret.shape) for _ in range(self.n_parties - 1)]
        last = (secret - sum(shares, f.zeros(secret.shape))) % f.modulus
        return [*shares, last] if secret.ndim else [int(s) for s in (*shares, last)]

    def authenticate(self, secret) -> list[AuthShare]:
        f = self.field
        secret = np.asarray(secret, dtype=object) % f.modulus
        values = self.split(secret)
        macs = self.split(secret * self.alpha % f.modulus)
        return [AuthShare(v, m, i) for i, (v, m) in enumerate(zip(values, macs))]

    def triples(self, count: int) -> list[TriplePool]:
        f = self.field
        a = f.random(self.rng, (count,))
        b = f.random(self.rng, (count,))
        c = a * b % f.modulus
        sa, sb, sc = self.authenticate(a), self.authenticate(b), self.authenticate(c)
        return [TriplePool(sa[i], sb[i], sc[i]) for i in range(self.n_parties)]

    def input_masks(self, count: int) -> InputMasks:
        r = self.field.random(self.rng, (count,))
        return InputMasks(r, self.authenticate(r))


@dataclass
class DealtMaterial:
    field: Field
    alpha: int  # dealer-only; kept for oracles and audits
    key_shares: list[MacKeyShare]
    triples: list[TriplePool]
    masks: InputMasks

    @property
    def n_parties(self) -> int:
        return len(self.key_shares)


def offline_deal(secrets_count: int, triples_count: int, n_parties: int = 3, seed: int = 0,
                 modulus: int = MERSENNE61) -> DealtMaterial:
    if secrets_count < 0 or triples_count < 0:
        raise ConfigError("counts must be non-negative")
    f = Field(modulus)
    dealer = Dealer(n_parties, f, np.random.default_rng(seed))
    return DealtMaterial(f, dealer.alpha, dealer.key_shares, dealer.triples(triples_count),
                         dealer.input_masks(secrets_count))


# -- input ------------------------------------------------------------------

def mask_input(x, r, f: Field):
    """Input owner's broadcast: x - r (uniform because r is)."""
    return (np.asarray(x, dtype=object) - r) % f.modulus if np.ndim(x) else (int(x) - int(r)) % f.modulus


def absorb_input(mask_share: AuthShare, masked, key: MacKeyShare, f: Field) -> AuthShare:
    return add_public(mask_share, masked, key, f)


def share_input(x, masks: InputMasks, key_shares: list[MacKeyShare], f: Field) -> list[AuthShare]:
    """Authenticated sharing of x (scalar or vector) using unused input masks."""
    count = int(np.size(x))
    r, mask_shares = masks.take(count)
    if np.ndim(x) == 0:
        r = r[0]
        mask_shares = [s[0] for s in mask_shares]
    eps = mask_input(x, r, f)
    return [absorb_input(s, eps, k, f) for s, k in zip(mask_shares, key_shares)]


# -- online parties ---------------------------------------------------------

@dataclass
class OpenRecord:
    label: str
    opened: np.ndarray  # flat
    mac_share: np.ndarray  # this party's MAC shares, retained for the deferred check


@dataclass
class Party:
    index: int
    n_parties: int
    field: Field
    key: MacKeyShare
    triples: TriplePool | None = None
    nonce_seed: bytes = b""
    transcript: list = field(default_factory=list)
    _nonces: int = 0

    @property
    def endpoint(self):
        return party(self.index)

    @property
    def peers(self):
        return [party(j) for j in range(self.n_parties) if j != self.index]

    def next_nonce(self) -> bytes:
        self._nonces += 1
        data = self.nonce_seed + self.index.to_bytes(2, "little") + self._nonces.to_bytes(8, "little")
        return hashlib.sha256(data).digest()[:NONCE_BYTES]

    # local helpers bound to this party's field and key
    def add(self, x, y):
        return add_shares(x, y, self.field)

    def sub(self, x, y):
        return sub_shares(x, y, self.field)

    def scale(self, x, k):
        return mul_public(x, k, self.field)

    def shift(self, x, k):
        return add_public(x, k, self.key, self.field)


def open_values(p: Party, ctx, shares: list[AuthShare], labels: list[str] | str = "open",
                kind: int = KIND_OPEN):
    """Broadcast value shares, sum, and record the openings. Generator."""
    f = p.field
    if isinstance(labels, str):
        labels = [labels] * len(shares)
    flats = [np.asarray(s.value, dtype=object).ravel() for s in shares]
    mine = np.concatenate(flats) if flats else f.zeros(0)
    body = f.pack(mine)
    for peer in p.peers:
        ctx.send(peer, kind, body)
    total = mine.copy()
    for peer in p.peers:
        msg = yield from ctx.expect(peer, kind)
        theirs = f.unpack(msg.body)
        if theirs.size != total.size:
            raise ProtocolError(f"{peer} opened {theirs.size} values, expected {total.size}")
        total = (total + theirs) % f.modulus
    out, at = [], 0
    for s, flat, label in zip(shares, flats, labels):
        opened = total[at:at + flat.size]
        at += flat.size
        p.transcript.append(OpenRecord(label, opened, np.asarray(s.mac, dtype=object).ravel()))
        out.append(opened.reshape(np.shape(s.value)) if np.ndim(s.value) else int(opened[0]))
    return out


def open_share(p: Party, ctx, x: AuthShare, label: str = "open"):
    (value,) = yield from open_values(p, ctx, [x], [label])
    return value


def beaver_mul(p: Party, ctx, x: AuthShare, y: AuthShare, t: BeaverTriple):
    """[x*y] = [c] + eps*[b] + delta*[a] + eps*delta with eps=open(x-a), delta=open(y-b)."""
    t.consume()
    f = p.field
    eps, delta = yield from open_values(p, ctx, [p.sub(x, t.a), p.sub(y, t.b)], ["beaver-eps", "beaver-delta"])
    z = p.add(t.c, p.scale(t.b, eps))
    z = p.add(z, p.scale(t.a, delta))
    return p.shift(z, eps * delta % f.modulus)


def _transcript_digest(p: Party) -> bytes:
    h = hashlib.sha256()
    for rec in p.transcript:
        h.update(rec.label.encode() + b"\x00")
        h.update(p.field.pack(rec.opened))
    return h.digest()


def check_macs(p: Party, ctx) -> bool:
    """Batched MAC check over every recorded opening. Generator -> bool."""
    if not p.transcript:
        raise EmptyTranscript("no openings to check")
    f = p.field
    opened = np.concatenate([r.opened for r in p.transcript])
    macs = np.concatenate([r.mac_share for r in p.transcript])
    digest = _transcript_digest(p)
    coef = f.expand(digest, "mac-check", opened.size, nonzero=True)
    combined = int(np.sum(coef * opened % f.modulus)) % f.modulus
    mac = int(np.sum(coef * macs % f.modulus)) % f.modulus
    sigma = (mac - p.key.alpha_share * combined) % f.modulus
    p.transcript.clear()
    resume_phase, ctx.phase = ctx.phase, MAC_CHECK

    sigma_bytes = sigma.to_bytes(WORD, "little")
    nonce = p.next_nonce()
    commit = hashlib.sha256(sigma_bytes + nonce + digest).digest()
    for peer in p.peers:
        ctx.send(peer, KIND_MAC_COMMIT, commit, field_words=False)
    commits = {}
    for peer in p.peers:
        msg = yield from ctx.expect(peer, KIND_MAC_COMMIT)
        commits[peer] = msg.body
    for peer in p.peers:
        ctx.send(peer, KIND_MAC_REVEAL, sigma_bytes + nonce, field_words=False)
    ok = True
    total = sigma
    for peer in p.peers:
        msg = yield from ctx.expect(peer, KIND_MAC_REVEAL)
        their_sigma = msg.body[:WORD]
        # the commitment binds the peer's view of the transcript too
        if hashlib.sha256(msg.body + digest).digest() != commits[peer] or len(msg.body) != WORD + NONCE_BYTES:
            ok = False
            continue
        value = int.from_bytes(their_sigma, "little")
        if value >= f.modulus:
            ok = False
            continue
        total = (total + value) % f.modulus
    ctx.phase = resume_phase
    return ok and total == 0


# -- cluster harness --------------------------------------------------------

class Cluster:
    """The computation parties of one dealt session, wired to a fresh network per run."""

    def __init__(self, material: DealtMaterial, seed: int = 0):
        self.material = material
        self.field = material.field
        nonce_seed = hashlib.sha256(b"nonce" + seed.to_bytes(8, "little", signed=True)).digest()
        self.parties = [Party(i, material.n_parties, material.field, material.key_shares[i],
                              material.triples[i] if material.triples else None, nonce_seed)
                        for i in range(material.n_parties)]
        self.last_network: Network | None = None
        self._sharer = Dealer(material.n_parties, material.field, np.random.default_rng([seed, 1]))

    @classmethod
    def deal(cls, n_parties: int = 3, triples: int = 0, masks: int = 0, seed: int = 0,
             modulus: int = MERSENNE61) -> Cluster:
        return cls(offline_deal(masks, triples, n_parties, seed, modulus), seed)

    def share(self, value) -> list[AuthShare]:
        """Dealer-side authenticated sharing (trusted-dealer helper)."""
        f = self.field
        secret = np.asarray(value, dtype=object) % f.modulus
        values = self._sharer.split(secret)
        macs = self._sharer.split(secret * self.material.alpha % f.modulus)
        return [AuthShare(v, m, i) for i, (v, m) in enumerate(zip(values, macs))]

    def input(self, value) -> list[AuthShare]:
        return share_input(value, self.material.masks, self.material.key_shares, self.field)

    def reconstruct(self, shares):
        return reconstruct(shares, self.field)

    def mac_consistent(self, shares) -> bool:
        x = np.asarray(reconstruct(shares, self.field), dtype=object)
        return bool(np.all(reconstruct_mac(shares, self.field) == x * self.material.alpha % self.field.modulus))

    def run(self, program, threaded: bool = False, tampers=(), timing: bool = False) -> list:
        """Run ``program(party, ctx)`` (a generator function) on every party."""
        net = Network(tampers=tampers, modulus=self.field.modulus, timing=timing)
        for p in self.parties:
            ctx = net.add(p.endpoint, lambda ctx, p=p: program(p, ctx))
            ctx.phase = ONLINE
        self.last_network = net
        results = net.run(threaded=threaded)
        return [results[p.endpoint] for p in self.parties]


# -- dealer material file ---------------------------------------------------

_MAGIC = b"SPDZ"
_VERSION = 1
_HEAD = struct.Struct("<4sHHQII")


def save_material(path, material: DealtMaterial) -> None:
    f = material.field
    n_masks = len(material.masks.values)
    n_triples = material.triples[0].size if material.triples else 0
    out = [_HEAD.pack(_MAGIC, _VERSION, material.n_parties, f.modulus, n_masks, n_triples)]
    for i in range(material.n_parties):
        out.append(f.pack([material.key_shares[i].alpha_share]))
        m = material.masks.shares[i]
        out.append(f.pack(np.stack([m.value, m.mac], axis=1) if n_masks else []))
        if n_triples:
            t = material.triples[i]
            out.append(f.pack(np.stack([t.a.value, t.a.mac, t.b.value, t.b.mac, t.c.value, t.c.mac], axis=1)))
    out.append(f.pack(material.masks.values))
    Path(path).write_bytes(b"".join(out))


def load_material(path) -> DealtMaterial:
    """Read a material file. The MAC key itself is not stored (alpha is reported as 0)."""
    data = Path(path).read_bytes()
    if len(data) < _HEAD.size:
        raise DataError("dealer material file is truncated")
    magic, version, n, modulus, n_masks, n_triples = _HEAD.unpack_from(data)
    if magic != _MAGIC or version != _VERSION:
        raise DataError("not a dealer material file (bad magic or version)")
    f = Field(modulus)
    per_party = 1 + 2 * n_masks + 6 * n_triples
    expect = _HEAD.size + WORD * (n * per_party + n_masks)
    if len(data) != expect:
        raise DataError(f"dealer material file has {len(data)} bytes, expected {expect}")
    words = f.unpack(data[_HEAD.size:])
    keys, masks, pools = [], [], []
    at = 0
    for i in range(n):
        keys.append(MacKeyShare(int(words[at]), i))
        at += 1
        m = words[at:at + 2 * n_masks].reshape(n_masks, 2)
        masks.append(AuthShare(m[:, 0].copy(), m[:, 1].copy(), i))
        at += 2 * n_masks
        if n_triples:
            t = words[at:at + 6 * n_triples].reshape(n_triples, 6)
            pools.append(TriplePool(AuthShare(t[:, 0].copy(), t[:, 1].copy(), i),
                                    AuthShare(t[:, 2].copy(), t[:, 3].copy(), i),
                                    AuthShare(t[:, 4].copy(), t[:, 5].copy(), i)))
            at += 6 * n_triples
    values = words[at:at + n_masks].copy()
    if not pools:
        pools = [TriplePool(*(AuthShare(f.zeros(0), f.zeros(0), i) for _ in range(3))) for i in range(n)]
    return DealtMaterial(f, 0, keys, pools, InputMasks(values, masks))
