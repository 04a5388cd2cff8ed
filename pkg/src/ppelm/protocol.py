"""Masked ring-sum protocol and the multi-party training orchestration.

One run is a single token circling a fixed ring. The master sends every
party a SETUP frame. Party 0 draws a uniform mask R, adds its own
contribution, and forwards R + T0 as ACCUM hop 1. Party i adds T_i at hop i
and forwards hop i+1; the last party closes the ring back to party 0, which
subtracts R and ships the exact unmasked sum to the master as hop k+1. The
master decodes, activates, solves for the output weights, and broadcasts
RESULT. Every intermediate accumulator a party sees is uniformly masked.

Runtimes here are transport-agnostic state machines: handle(frame) consumes
one frame and returns (destination address, frame) pairs to send next. The
mailbox network pumps them for in-process runs, a small socket loop pumps
the same objects for TCP runs, so both backends execute identical logic and
emit identical bytes.

Contributions are exact integer values: inputs and weights quantize at scale
s, their dot products live at scale 2s, and bias shares are ring residues at
scale 2s. Integer addition is associative, which is why the ring-sum equals
the joined plaintext computation bit for bit regardless of how columns are
split, and why the same holds for every party count.
"""

import hashlib
import json
import os
import time
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import fieldcodec as fc
from .datasets import normalize_columns
from .elm import (
    Activation,
    ElmModel,
    activate,
    init_hidden,
    one_hot_targets,
    pseudo_inverse,
)
from .errors import (
    ConfigError,
    DimensionMismatch,
    InvalidPartyCount,
    MalformedFrame,
    PhaseViolation,
    PpelmError,
    TransportFailure,
    TransportTimeout,
)
from .messages import Abort, Accum, MsgType, Result, Setup, unpack_payload
from .partition import PartyShare, make_plan, split_data, split_weights
from .transport import (
    DEFAULT_TIMEOUT,
    Frame,
    FrameServer,
    MailboxNetwork,
    send_frame,
    split_address,
)

MASTER_ADDRESS = "master"


class RunPhase(Enum):
    SETUP = "setup"
    ACCUMULATING = "accumulating"
    UNMASKING = "unmasking"
    SOLVING = "solving"
    DONE = "done"
    FAILED = "failed"


@dataclass
class RunStats:
    run_id: str
    transport: str
    parties: int
    instances: int
    features: int
    hidden: int
    wall_total: float
    wall_protocol: float
    wall_solve: float


def derive_run_id(**fields) -> bytes:
    """16-byte run identifier from the run configuration.

    Deterministic on purpose: repeating a run with the same configuration
    reproduces the same frames, which the equivalence tests rely on. Two
    concurrent runs only collide if they are configured identically, in
    which case their traffic is identical too.
    """
    canon = json.dumps(fields, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode()).digest()[:16]


def _derive_mask_seed(run_id: bytes, seed: int) -> int:
    digest = hashlib.sha256(b"ppelm.mask" + run_id + str(seed).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _fresh_mask_seed() -> int:
    return int.from_bytes(os.urandom(8), "little")


_BIAS_TAG = 0xB1A5


def compute_partial(share: PartyShare, cfg: fc.FieldConfig) -> np.ndarray:
    """Party's local contribution: quantized X_slice . W_slice^T plus bias share.

    Entries are ring residues at product scale. The dot products are exact
    integers, so summing these matrices over all parties (mod F) reproduces
    the joined pre-activation matrix without any rounding drift.
    """
    x = np.asarray(share.x_slice, dtype=np.float64)
    w = np.asarray(share.w_slice, dtype=np.float64)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise DimensionMismatch(
            f"data slice {x.shape} does not align with weight slice {w.shape}"
        )
    bias = np.asarray(share.bias_share)
    if bias.shape != (w.shape[0],):
        raise DimensionMismatch(
            f"bias share length {bias.shape} does not match {w.shape[0]} hidden nodes"
        )
    prod = fc.exact_matmul(fc.quantize(x, cfg), fc.quantize(w, cfg).T)
    fc.check_signed_range(prod, cfg.product_scale())
    signed = prod + fc.to_signed(bias, cfg.product_scale())
    return fc.ring_reduce(signed, cfg)


class PartyRuntime:
    """One ring participant as a frame-in, frames-out state machine.

    The private columns come from exactly one of three sources: a ready
    column slice (in-process runs), a full local table that gets sliced per
    the SETUP's plan (serving parties), or a preset ring matrix (raw
    secure-sum runs, no data at all).
    """

    def __init__(self, address: str, *, x_slice=None, x_table=None,
                 contribution=None, expected_party_id=None, expected_master=None):
        provided = sum(v is not None for v in (x_slice, x_table, contribution))
        if provided != 1:
            raise ValueError("exactly one of x_slice, x_table, contribution required")
        self.address = address
        self.phase = RunPhase.SETUP
        self.party_id = None
        self.run_id = None
        self.beta = None
        self.failure = None
        self.master_addr = None
        self._x_slice = x_slice
        self._x_table = None if x_table is None else np.asarray(x_table, dtype=np.float64)
        self._preset = None if contribution is None else np.asarray(contribution)
        self._expected_party_id = expected_party_id
        self._expected_master = expected_master
        self._cfg = None
        self._parties = None
        self._next_addr = None
        self._value = None
        self._mask = None
        self._expect_hop = None
        self._forwarded = False
        self._pending = []

    def handle(self, frame: Frame) -> list:
        msg = unpack_payload(frame.msg_type, frame.payload)
        if isinstance(msg, Abort):
            self.phase = RunPhase.FAILED
            self.failure = msg.reason
            return []
        if isinstance(msg, Setup):
            return self._on_setup(frame.run_id, msg)
        if self.run_id is None and isinstance(msg, Accum):
            # over tcp the neighbour's ACCUM can overtake the master's SETUP;
            # park it until the SETUP tells this party what to do with it
            if len(self._pending) >= 4:
                raise PhaseViolation(
                    f"party {self.address}: ACCUM flood before any SETUP"
                )
            self._pending.append((frame.run_id, msg))
            return []
        if self.run_id is None or frame.run_id != self.run_id:
            raise PhaseViolation(f"party {self.address}: frame for an unknown run")
        if isinstance(msg, Accum):
            return self._on_accum(msg)
        return self._on_result(msg)

    def _on_setup(self, run_id: bytes, s: Setup) -> list:
        if self.phase is not RunPhase.SETUP:
            raise PhaseViolation(f"party {self.address}: duplicate SETUP")
        if s.parties < 2:
            raise InvalidPartyCount(f"run needs at least 2 parties, got {s.parties}")
        if not 0 <= s.party_id < s.parties:
            raise MalformedFrame(f"party id {s.party_id} outside 0..{s.parties - 1}")
        if self._expected_party_id is not None and s.party_id != self._expected_party_id:
            raise PhaseViolation(
                f"serving party {self._expected_party_id}, SETUP addresses {s.party_id}"
            )
        if self._expected_master is not None and s.master_addr != self._expected_master:
            raise PhaseViolation(
                f"SETUP names master {s.master_addr!r}, expected {self._expected_master!r}"
            )
        cfg = s.cfg
        # routing fields first, so a failed contribution can still ABORT home
        self.master_addr = s.master_addr
        self.party_id = s.party_id
        self.run_id = run_id
        self._value = self._make_contribution(s, cfg)
        self._cfg = cfg
        self._parties = s.parties
        self._next_addr = s.next_addr
        self.phase = RunPhase.ACCUMULATING
        if s.party_id == 0:
            rng = fc.ring_rng(s.mask_seed)
            self._mask = fc.ring_uniform(cfg, rng, size=self._value.shape)
            masked = (self._value + self._mask) % cfg.modulus
            self._expect_hop = s.parties
            self._forwarded = True
            out = Frame(MsgType.ACCUM, run_id, Accum(1, masked).pack())
            outs = [(s.next_addr, out)]
        else:
            self._expect_hop = s.party_id
            outs = []
        pending, self._pending = self._pending, []
        for early_run, accum in pending:
            if early_run != run_id:
                raise PhaseViolation(
                    f"party {self.party_id}: buffered ACCUM belongs to another run"
                )
            outs.extend(self._on_accum(accum))
        return outs

    def _make_contribution(self, s: Setup, cfg: fc.FieldConfig) -> np.ndarray:
        if self._preset is not None:
            if self._preset.shape[0] != s.instance_count:
                raise DimensionMismatch(
                    f"preset contribution has {self._preset.shape[0]} rows, "
                    f"run declares {s.instance_count}"
                )
            return self._preset
        plan = make_plan(s.feature_count, s.parties)
        start, stop = plan.range_for(s.party_id)
        if self._x_table is not None:
            if self._x_table.shape[1] != s.feature_count:
                raise DimensionMismatch(
                    f"local table has {self._x_table.shape[1]} columns, "
                    f"run declares {s.feature_count}"
                )
            x = normalize_columns(self._x_table[:, start:stop], s.normalize)
        else:
            x = self._x_slice
            if x.shape[1] != stop - start:
                raise DimensionMismatch(
                    f"held slice is {x.shape[1]} columns wide, plan assigns {stop - start}"
                )
        if x.shape[0] != s.instance_count:
            raise DimensionMismatch(
                f"local rows {x.shape[0]} != declared instance count {s.instance_count}"
            )
        if s.w_slice.shape[1] != stop - start:
            raise DimensionMismatch(
                f"weight slice {s.w_slice.shape} does not cover columns {start}..{stop}"
            )
        if s.bias_share.shape != (1, s.w_slice.shape[0]):
            raise DimensionMismatch(
                f"bias share shape {s.bias_share.shape} does not match "
                f"{s.w_slice.shape[0]} hidden nodes"
            )
        share = PartyShare(s.party_id, x, s.w_slice, s.bias_share[0])
        return compute_partial(share, cfg)

    def _on_accum(self, a: Accum) -> list:
        if self.phase is not RunPhase.ACCUMULATING or self._expect_hop is None:
            raise PhaseViolation(f"party {self.party_id}: unexpected ACCUM")
        if a.hop != self._expect_hop:
            raise PhaseViolation(
                f"party {self.party_id}: expected hop {self._expect_hop}, got {a.hop}"
            )
        if a.values.shape != self._value.shape:
            raise MalformedFrame(
                f"accumulator shape {a.values.shape} != {self._value.shape}"
            )
        if np.any(a.values < 0) or np.any(a.values >= self._cfg.modulus):
            raise MalformedFrame("accumulator entries outside the ring")
        self._expect_hop = None
        if self.party_id == 0:
            # ring closed: remove the mask, release the exact sum to the master
            total = (a.values - self._mask) % self._cfg.modulus
            out = Frame(MsgType.ACCUM, self.run_id,
                        Accum(self._parties + 1, total).pack())
            return [(self.master_addr, out)]
        forwarded = (a.values + self._value) % self._cfg.modulus
        self._forwarded = True
        out = Frame(MsgType.ACCUM, self.run_id, Accum(a.hop + 1, forwarded).pack())
        return [(self._next_addr, out)]

    def _on_result(self, r: Result) -> list:
        if self.phase is not RunPhase.ACCUMULATING or not self._forwarded:
            raise PhaseViolation(f"party {self.party_id}: RESULT before contributing")
        self.beta = r.beta if r.beta.size else None
        self.phase = RunPhase.DONE
        return []


class MasterRuntime:
    """Coordinator: emits SETUP, awaits the unmasked sum, finishes the run.

    mode "sum" keeps the raw ring matrix, "hidden" decodes and activates it,
    "train" additionally solves for the output weights. When the master also
    holds data (master_holds_data), an embedded PartyRuntime plays party 0
    at the master's own address and frames are dispatched to it by type and
    hop number.
    """

    def __init__(self, address: str, *, run_id: bytes, cfg: fc.FieldConfig,
                 party_addrs: list, setups: list, expected_shape: tuple,
                 mode: str = "sum", activation: Activation = None, labels=None,
                 class_count=None, embedded: PartyRuntime = None):
        if mode not in ("sum", "hidden", "train"):
            raise ValueError(f"unknown mode {mode!r}")
        if mode != "sum" and activation is None:
            raise ValueError(f"mode {mode!r} needs an activation")
        if mode == "train" and labels is None:
            raise ValueError("mode 'train' needs labels")
        self.address = address
        self.run_id = run_id
        self.phase = RunPhase.SETUP
        self.ring_sum = None
        self.hidden_matrix = None
        self.beta = None
        self.failure = None
        self.wall_protocol = None
        self.wall_solve = 0.0
        self.transcript = []
        self._cfg = cfg
        self._party_addrs = list(party_addrs)
        self._setups = list(setups)
        self._expected_shape = tuple(expected_shape)
        self._mode = mode
        self._activation = activation
        self._labels = labels
        self._class_count = class_count
        self._embedded = embedded
        self._t0 = None

    @property
    def parties(self) -> int:
        return len(self._party_addrs)

    def _log(self, direction: str, msg_type: int, payload: bytes) -> None:
        self.transcript.append(
            (direction, int(msg_type), hashlib.sha256(payload).hexdigest())
        )

    def start(self) -> list:
        if self.phase is not RunPhase.SETUP:
            raise PhaseViolation("master: run already started")
        self._t0 = time.perf_counter()
        self.phase = RunPhase.ACCUMULATING
        outs = []
        for addr, setup in zip(self._party_addrs, self._setups):
            payload = setup.pack()
            self._log("send", MsgType.SETUP, payload)
            outs.append((addr, Frame(MsgType.SETUP, self.run_id, payload)))
        return outs

    def handle(self, frame: Frame) -> list:
        if frame.run_id != self.run_id:
            raise PhaseViolation("master: frame for an unknown run")
        self._log("recv", frame.msg_type, frame.payload)
        if frame.msg_type == MsgType.ABORT:
            reason = unpack_payload(frame.msg_type, frame.payload).reason
            self.phase = RunPhase.FAILED
            self.failure = reason
            return []
        if frame.msg_type == MsgType.SETUP:
            if self._embedded is None:
                raise PhaseViolation("master: unexpected SETUP")
            return self._embedded.handle(frame)
        if frame.msg_type == MsgType.RESULT:
            if self._embedded is None:
                raise PhaseViolation("master: unexpected RESULT")
            return self._embedded.handle(frame)
        accum = unpack_payload(frame.msg_type, frame.payload)
        if self._embedded is not None and accum.hop == self.parties:
            # ring closure addressed to the co-located party 0
            self.phase = RunPhase.UNMASKING
            return self._embedded.handle(frame)
        if accum.hop != self.parties + 1:
            raise PhaseViolation(f"master: unexpected ACCUM hop {accum.hop}")
        return self._finish(accum)

    def _finish(self, accum: Accum) -> list:
        if self.phase not in (RunPhase.ACCUMULATING, RunPhase.UNMASKING):
            raise PhaseViolation(f"master: final sum arrived in phase {self.phase.name}")
        if accum.values.shape != self._expected_shape:
            raise MalformedFrame(
                f"final sum shape {accum.values.shape} != {self._expected_shape}"
            )
        if np.any(accum.values < 0) or np.any(accum.values >= self._cfg.modulus):
            raise MalformedFrame("final sum entries outside the ring")
        self.wall_protocol = time.perf_counter() - self._t0
        self.ring_sum = accum.values
        self.phase = RunPhase.SOLVING
        if self._mode != "sum":
            t_solve = time.perf_counter()
            decoded = fc.decode_array(accum.values, self._cfg.product_scale())
            self.hidden_matrix = activate(decoded, self._activation)
            if self._mode == "train":
                targets = one_hot_targets(self._labels, self._class_count)
                self.beta = pseudo_inverse(self.hidden_matrix) @ targets
            self.wall_solve = time.perf_counter() - t_solve
        self.phase = RunPhase.DONE
        beta = self.beta if self.beta is not None else np.zeros((0, 0))
        payload = Result(beta).pack()
        outs = []
        for addr in self._party_addrs:
            self._log("send", MsgType.RESULT, payload)
            outs.append((addr, Frame(MsgType.RESULT, self.run_id, payload)))
        return outs


def _ring_setups(party_addrs: list, master_addr: str, *, instance_count: int,
                 feature_count: int, cfg: fc.FieldConfig, normalize: str,
                 mask_seed: int, w_slices=None, bias_shares=None) -> list:
    empty_f64 = np.zeros((0, 0))
    empty_ring = np.zeros((0, 0), dtype=np.int64)
    k = len(party_addrs)
    setups = []
    for i in range(k):
        setups.append(Setup(
            party_id=i,
            parties=k,
            instance_count=instance_count,
            feature_count=feature_count,
            scale_bits=cfg.scale_bits,
            normalize=normalize,
            modulus=cfg.modulus,
            mask_seed=mask_seed if i == 0 else 0,
            next_addr=party_addrs[(i + 1) % k],
            master_addr=master_addr,
            w_slice=empty_f64 if w_slices is None else w_slices[i],
            bias_share=empty_ring if bias_shares is None
            else np.asarray(bias_shares[i], dtype=np.int64).reshape(1, -1),
        ))
    return setups


def _run_mailbox(network: MailboxNetwork, master: MasterRuntime) -> None:
    for dst, frame in master.start():
        network.post(master.address, dst, frame)
    network.run()
    if master.phase is RunPhase.FAILED:
        raise TransportFailure(f"run aborted: {master.failure}")
    if master.phase is not RunPhase.DONE:
        raise TransportFailure(
            f"run stalled in phase {master.phase.name} with no frames in flight"
        )


def secure_sum_matrices(values: list, cfg: fc.FieldConfig, *, network=None,
                        run_id: bytes = None, mask_seed: int = None) -> np.ndarray:
    """Masked ring-sum of one ring matrix per party; returns the exact total."""
    mats = [np.asarray(v, dtype=np.int64) for v in values]
    if len(mats) < 2:
        raise InvalidPartyCount(f"secure sum needs at least 2 parties, got {len(mats)}")
    shape = mats[0].shape
    for m in mats:
        if m.ndim != 2 or m.shape != shape:
            raise DimensionMismatch("all party matrices must share one 2-d shape")
        fc.check_ring(m, cfg)
    if run_id is None:
        run_id = os.urandom(16)
    if mask_seed is None:
        mask_seed = _fresh_mask_seed()
    party_addrs = [f"party:{i}" for i in range(len(mats))]
    setups = _ring_setups(party_addrs, MASTER_ADDRESS, instance_count=shape[0],
                          feature_count=0, cfg=cfg, normalize="none",
                          mask_seed=mask_seed)
    network = network if network is not None else MailboxNetwork()
    master = MasterRuntime(MASTER_ADDRESS, run_id=run_id, cfg=cfg,
                           party_addrs=party_addrs, setups=setups,
                           expected_shape=shape, mode="sum")
    network.register(MASTER_ADDRESS, master)
    for addr, mat in zip(party_addrs, mats):
        network.register(addr, PartyRuntime(addr, contribution=mat))
    _run_mailbox(network, master)
    return master.ring_sum


def sma_scalar(values: list, cfg: fc.FieldConfig, *, network=None,
               run_id: bytes = None, mask_seed: int = None) -> int:
    """Secure multi-party addition of one ring element per party."""
    mats = [np.asarray([[int(v)]], dtype=np.int64) for v in values]
    total = secure_sum_matrices(mats, cfg, network=network, run_id=run_id,
                                mask_seed=mask_seed)
    return int(total[0, 0])


def _validate_canonical(shares: list) -> tuple:
    """Shares must follow the canonical plan; returns (N, n, L)."""
    widths = [s.x_slice.shape[1] for s in shares]
    n = sum(widths)
    plan = make_plan(n, len(shares))
    if tuple(widths) != plan.sizes:
        raise ConfigError(
            f"share widths {widths} do not follow the canonical plan {plan.sizes}"
        )
    rows = {s.x_slice.shape[0] for s in shares}
    if len(rows) != 1:
        raise DimensionMismatch(f"parties disagree on instance count: {sorted(rows)}")
    hidden = {s.w_slice.shape[0] for s in shares}
    if len(hidden) != 1:
        raise DimensionMismatch(f"parties disagree on hidden count: {sorted(hidden)}")
    return rows.pop(), n, hidden.pop()


def secure_hidden_matrix(shares: list, cfg: fc.FieldConfig,
                         activation: Activation, *, network=None,
                         run_id: bytes = None, mask_seed: int = None,
                         normalize_label: str = "none") -> np.ndarray:
    """Hidden-layer matrix from distributed shares, equal to the joined one."""
    instance_count, feature_count, _ = _validate_canonical(shares)
    if run_id is None:
        run_id = os.urandom(16)
    if mask_seed is None:
        mask_seed = _fresh_mask_seed()
    party_addrs = [f"party:{i}" for i in range(len(shares))]
    setups = _ring_setups(party_addrs, MASTER_ADDRESS,
                          instance_count=instance_count,
                          feature_count=feature_count, cfg=cfg,
                          normalize=normalize_label, mask_seed=mask_seed,
                          w_slices=[s.w_slice for s in shares],
                          bias_shares=[s.bias_share for s in shares])
    network = network if network is not None else MailboxNetwork()
    master = MasterRuntime(MASTER_ADDRESS, run_id=run_id, cfg=cfg,
                           party_addrs=party_addrs, setups=setups,
                           expected_shape=(instance_count, shares[0].w_slice.shape[0]),
                           mode="hidden", activation=activation)
    network.register(MASTER_ADDRESS, master)
    for addr, share in zip(party_addrs, shares):
        network.register(addr, PartyRuntime(addr, x_slice=share.x_slice))
    _run_mailbox(network, master)
    return master.hidden_matrix


def _train_build(X, y, parties: int, *, seed: int, hidden: int,
                 activation: Activation, cfg: fc.FieldConfig,
                 normalize_label: str, run_tag: int = 0):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise DimensionMismatch(f"expected an N x n feature matrix, got shape {X.shape}")
    if y.shape != (X.shape[0],):
        raise DimensionMismatch(
            f"label count {y.shape} does not match {X.shape[0]} instances"
        )
    plan = make_plan(X.shape[1], parties)
    params = init_hidden(seed, hidden, X.shape[1], activation)
    run_id = derive_run_id(kind="train", seed=seed, parties=parties, hidden=hidden,
                           activation=activation.value, modulus=cfg.modulus,
                           scale_bits=cfg.scale_bits, instances=X.shape[0],
                           features=X.shape[1], normalize=normalize_label,
                           tag=run_tag)
    mask_seed = _derive_mask_seed(run_id, seed)
    bias_rng = fc.ring_rng(seed, _BIAS_TAG, parties)
    wshares = split_weights(params, plan, cfg, bias_rng)
    return X, y, plan, params, run_id, mask_seed, wshares


def secure_train_stats(X, y, parties: int, *, seed: int, hidden: int,
                       activation: Activation = Activation.SIGN,
                       cfg: fc.FieldConfig = None, class_count: int = None,
                       normalize_label: str = "none",
                       master_holds_data: bool = False,
                       network=None, run_tag: int = 0):
    """In-process secure training; returns (model, stats).

    Simulates every party in one process. Frames are still fully serialized
    through the mailbox, so the byte-level behavior matches a socket run.
    """
    cfg = cfg if cfg is not None else fc.FieldConfig()
    t_total = time.perf_counter()
    X, y, plan, params, run_id, mask_seed, wshares = _train_build(
        X, y, parties, seed=seed, hidden=hidden, activation=activation,
        cfg=cfg, normalize_label=normalize_label, run_tag=run_tag)
    x_slices = split_data(X, plan)
    party_addrs = [f"party:{i}" for i in range(parties)]
    embedded = None
    if master_holds_data:
        party_addrs[0] = MASTER_ADDRESS
        embedded = PartyRuntime(MASTER_ADDRESS, x_slice=x_slices[0])
    setups = _ring_setups(party_addrs, MASTER_ADDRESS,
                          instance_count=X.shape[0], feature_count=X.shape[1],
                          cfg=cfg, normalize=normalize_label, mask_seed=mask_seed,
                          w_slices=[w.w_slice for w in wshares],
                          bias_shares=[w.bias_share for w in wshares])
    network = network if network is not None else MailboxNetwork()
    master = MasterRuntime(MASTER_ADDRESS, run_id=run_id, cfg=cfg,
                           party_addrs=party_addrs, setups=setups,
                           expected_shape=(X.shape[0], hidden), mode="train",
                           activation=activation, labels=y,
                           class_count=class_count, embedded=embedded)
    network.register(MASTER_ADDRESS, master)
    for i in range(0 if not master_holds_data else 1, parties):
        network.register(party_addrs[i], PartyRuntime(party_addrs[i],
                                                      x_slice=x_slices[i]))
    _run_mailbox(network, master)
    model = ElmModel(params, master.beta)
    stats = RunStats(run_id=run_id.hex(), transport="inproc", parties=parties,
                     instances=X.shape[0], features=X.shape[1], hidden=hidden,
                     wall_total=time.perf_counter() - t_total,
                     wall_protocol=master.wall_protocol,
                     wall_solve=master.wall_solve)
    return model, stats


def secure_train(X, y, parties: int, *, seed: int, hidden: int,
                 activation: Activation = Activation.SIGN,
                 cfg: fc.FieldConfig = None, class_count: int = None,
                 normalize_label: str = "none", master_holds_data: bool = False,
                 network=None) -> ElmModel:
    model, _ = secure_train_stats(X, y, parties, seed=seed, hidden=hidden,
                                  activation=activation, cfg=cfg,
                                  class_count=class_count,
                                  normalize_label=normalize_label,
                                  master_holds_data=master_holds_data,
                                  network=network)
    return model


def _send_all(outs: list, timeout: float) -> None:
    for dst, frame in outs:
        send_frame(dst, frame, timeout)


def train_master_tcp(y, feature_count: int, party_addrs: list, *, seed: int,
                     hidden: int, activation: Activation = Activation.SIGN,
                     cfg: fc.FieldConfig = None, class_count: int = None,
                     normalize_label: str = "minmax", listen: str = "127.0.0.1:0",
                     timeout: float = DEFAULT_TIMEOUT, server: FrameServer = None,
                     run_tag: int = 0):
    """Run the master side over TCP; parties are remote serve-party processes.

    The master never sees feature columns: it holds labels, generates the
    hidden layer, distributes weight slices, and receives only the unmasked
    pre-activation sum. Returns (model, stats).
    """
    cfg = cfg if cfg is not None else fc.FieldConfig()
    y = np.asarray(y, dtype=np.int64)
    parties = len(party_addrs)
    t_total = time.perf_counter()
    plan = make_plan(feature_count, parties)
    params = init_hidden(seed, hidden, feature_count, activation)
    run_id = derive_run_id(kind="train", seed=seed, parties=parties, hidden=hidden,
                           activation=activation.value, modulus=cfg.modulus,
                           scale_bits=cfg.scale_bits, instances=int(y.shape[0]),
                           features=feature_count, normalize=normalize_label,
                           tag=run_tag)
    mask_seed = _derive_mask_seed(run_id, seed)
    bias_rng = fc.ring_rng(seed, _BIAS_TAG, parties)
    wshares = split_weights(params, plan, cfg, bias_rng)
    own_server = server is None
    if own_server:
        host, port = split_address(listen)
        server = FrameServer(host, port).start()
    try:
        setups = _ring_setups(list(party_addrs), server.address,
                              instance_count=int(y.shape[0]),
                              feature_count=feature_count, cfg=cfg,
                              normalize=normalize_label, mask_seed=mask_seed,
                              w_slices=[w.w_slice for w in wshares],
                              bias_shares=[w.bias_share for w in wshares])
        master = MasterRuntime(server.address, run_id=run_id, cfg=cfg,
                               party_addrs=list(party_addrs), setups=setups,
                               expected_shape=(int(y.shape[0]), hidden),
                               mode="train", activation=activation, labels=y,
                               class_count=class_count)
        _send_all(master.start(), timeout)
        while master.phase not in (RunPhase.DONE, RunPhase.FAILED):
            try:
                frame = server.recv(run_id, timeout)
            except TransportTimeout:
                reason = Abort("master timed out waiting for the ring").pack()
                for addr in party_addrs:
                    try:
                        send_frame(addr, Frame(MsgType.ABORT, run_id, reason), 2.0)
                    except TransportFailure:
                        pass
                raise
            _send_all(master.handle(frame), timeout)
        if master.phase is RunPhase.FAILED:
            raise TransportFailure(f"run aborted by a party: {master.failure}")
        wall_total = time.perf_counter() - t_total
    finally:
        server.release_run(run_id)
        if own_server:
            server.close()
    model = ElmModel(params, master.beta)
    stats = RunStats(run_id=run_id.hex(), transport="tcp", parties=parties,
                     instances=int(y.shape[0]), features=feature_count,
                     hidden=hidden, wall_total=wall_total,
                     wall_protocol=master.wall_protocol,
                     wall_solve=master.wall_solve)
    return model, stats


def run_party_service(server: FrameServer, x_table, *, expected_party_id=None,
                      expected_master=None, timeout: float = DEFAULT_TIMEOUT,
                      idle_timeout: float = None, once: bool = False,
                      on_done=None) -> int:
    """Serve ring runs from a listening server until idle; returns runs completed.

    x_table is the party's raw local copy of the feature table; the SETUP
    frame decides which columns and which normalization apply. A failed run
    notifies the master with ABORT and, unless `once`, goes back to waiting.
    """
    completed = 0
    while True:
        try:
            first = server.recv_new_run(timeout=idle_timeout)
        except TransportTimeout:
            return completed
        runtime = PartyRuntime(server.address, x_table=x_table,
                               expected_party_id=expected_party_id,
                               expected_master=expected_master)
        run_id = first.run_id
        try:
            _send_all(runtime.handle(first), timeout)
            while runtime.phase not in (RunPhase.DONE, RunPhase.FAILED):
                frame = server.recv(run_id, timeout)
                _send_all(runtime.handle(frame), timeout)
            if runtime.phase is RunPhase.DONE:
                completed += 1
                if on_done is not None:
                    on_done(runtime)
        except PpelmError as exc:
            if runtime.master_addr:
                try:
                    send_frame(runtime.master_addr,
                               Frame(MsgType.ABORT, run_id, Abort(str(exc)).pack()),
                               2.0)
                except TransportFailure:
                    pass
            if once:
                raise
        finally:
            server.release_run(run_id)
        if once:
            return completed
