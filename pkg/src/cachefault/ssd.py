"""Discrete-event model of one SSD.

The device is tick-driven: callers submit commands, then advance it with
tick(now) and collect completion events. Everything time-ordered inside
(program engine, read service, power transitions) is replayed exactly at its
deadline, so a device is a pure function of (config, seed, event sequence).

The volatile window that matters for failure injection: a write command is
admitted from the queue into the DRAM buffer (and acked there when
ack_on_buffer), then its sub-requests are programmed to NAND one per
program_latency_us by a single engine that round-robins across admitted
commands. A power cut persists exactly the programs that finish before the
supply reaches the unavailability voltage; the rest of the buffer is gone.
"""

from __future__ import annotations

import heapq
import math
import random
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

from .blocks import BLOCK, ZERO

POWER_ON = "on"
POWER_FALLING = "falling"
POWER_OFF = "off"
POWER_RECOVERING = "recovering"

HEALTHY = "healthy"
METADATA_CORRUPTION = "metadata_corruption"
INTERFACE_CORRUPTION = "interface_corruption"
CHIP_FAILURE = "chip_failure"


class DeviceUnavailable(RuntimeError):
    pass


class QueueFull(RuntimeError):
    pass


class DeviceStateError(RuntimeError):
    pass


@dataclass(frozen=True)
class PowerModel:
    v_full: float = 5.0
    v_unavail: float = 4.5
    t_unavail_us: int = 5_000
    t_zero_us: int = 1_900_000

    def __post_init__(self):
        if not 0 < self.t_unavail_us < self.t_zero_us:
            raise ValueError("need 0 < t_unavail_us < t_zero_us")

    def voltage(self, dt_us: int) -> float:
        """Supply voltage dt_us after a cut: linear to v_unavail, then a
        capacitor-style tail that hits exactly 0 at t_zero_us."""
        if dt_us <= 0:
            return self.v_full
        if dt_us <= self.t_unavail_us:
            frac = dt_us / self.t_unavail_us
            return self.v_full - (self.v_full - self.v_unavail) * frac
        if dt_us >= self.t_zero_us:
            return 0.0
        frac = (self.t_zero_us - dt_us) / (self.t_zero_us - self.t_unavail_us)
        return self.v_unavail * frac ** 3


@dataclass(frozen=True)
class DeadHazards:
    metadata: float = 1e-4
    interface: float = 1e-4
    chip: float = 1e-5


@dataclass(frozen=True)
class SsdConfig:
    capacity_bytes: int = 128 * 1024 * 1024
    ncq_depth: int = 32
    dram_buffer_bytes: int = 16 * 1024 * 1024
    program_latency_us: int = 500  # per sub-request (one 4 KiB block)
    read_latency_us: int = 200  # per read command
    read_block_us: int = 5  # extra per block read
    ack_on_buffer: bool = True
    plp: bool = False
    map_checkpoint_every: int = 128
    p_fly: float = 0.0005
    dead_hazards: DeadHazards = field(default_factory=DeadHazards)
    throttle_temp_c: float = 55.0
    thermal_tau_us: int = 20_000_000
    recovery_us: int = 2_000_000
    power: PowerModel = field(default_factory=PowerModel)
    idle_ma: int = 60
    read_ma: int = 240
    write_ma: int = 450
    recovery_ma: int = 320
    reliability_preset: str = "B"

    def __post_init__(self):
        for p in (self.p_fly, self.dead_hazards.metadata,
                  self.dead_hazards.interface, self.dead_hazards.chip):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must be in [0, 1]")

    @property
    def capacity_blocks(self) -> int:
        return self.capacity_bytes // BLOCK


# Named reliability presets. They differ only in the loss-mechanism scalars:
# A is the least reliable, C carries power-loss protection.
def preset(name: str, **overrides) -> SsdConfig:
    base = {
        "A": dict(p_fly=0.02, ack_on_buffer=True,
                  dead_hazards=DeadHazards(2e-4, 2e-4, 2e-5)),
        "B": dict(p_fly=0.002, ack_on_buffer=True,
                  dead_hazards=DeadHazards(1e-4, 1e-4, 1e-5)),
        "C": dict(p_fly=0.0, plp=True,
                  dead_hazards=DeadHazards(1e-5, 1e-5, 1e-6)),
        "D": dict(p_fly=0.0005, ack_on_buffer=True,
                  dead_hazards=DeadHazards(5e-5, 5e-5, 5e-6)),
    }[name.upper()]
    return SsdConfig(reliability_preset=name.upper(), **{**base, **overrides})


@dataclass
class Command:
    handle: int
    op: str  # "read" | "write"
    subs: List[Tuple[int, object]]  # (block slot, content id); cid None for reads
    version: int
    submit_t: int
    acked: bool = False
    progress: int = 0  # programmed sub count (writes)

    @property
    def blocks(self) -> int:
        return len(self.subs)


class SsdModel:
    def __init__(self, config: SsdConfig, seed: int = 0, ambient_c: float = 31.0):
        self.config = config
        self.rng = random.Random(seed)
        self.nand: Dict[int, Tuple[object, int]] = {}  # slot -> (cid, version)
        self.power = POWER_ON
        self.health = HEALTHY
        self.power_cycles = 0
        self.temperature_c = ambient_c
        self.ambient_c = ambient_c
        self._therm_t = 0

        self._ncq: List[Command] = []
        self._active: List[Command] = []  # admitted writes, not fully programmed
        self._unacked_admitted: List[Command] = []
        self._buffered: Dict[int, Dict[int, object]] = {}  # slot -> {version: cid}
        self._buffer_used = 0
        self._reads: List[Tuple[int, int, Command]] = []  # (done_t, seq, cmd)
        self._rr = 0
        self._cur_prog: Optional[Tuple[Command, int]] = None  # (cmd, end_t)
        self._engine_free_t = 0

        self._map_dirty: List[Tuple[int, object, Optional[Tuple]]] = []
        self._programs_done = 0
        self._version = 0
        self._handle = 0
        self._seq = 0
        self._cut_t: Optional[int] = None
        self._off_deadline: Optional[int] = None
        self._recover_deadline: Optional[int] = None
        self._bad_region: Optional[range] = None
        self._events: List[Tuple[int, int, str, int, object]] = []

    # -- public state helpers ------------------------------------------------

    def queue_depth(self) -> int:
        return len(self._ncq) + len(self._unacked_admitted) + len(self._reads)

    def available(self, now: int) -> bool:
        if self.health in (INTERFACE_CORRUPTION, CHIP_FAILURE):
            return False
        if self.power == POWER_ON:
            return True
        if self.power == POWER_FALLING:
            return now < self._off_deadline
        return False

    def media_cid(self, slot: int):
        """Device-visible content of one block: newest buffered, else NAND."""
        versions = self._buffered.get(slot)
        if versions:
            return versions[max(versions)]
        entry = self.nand.get(slot)
        return entry[0] if entry else ZERO

    def nand_cid(self, slot: int):
        entry = self.nand.get(slot)
        return entry[0] if entry else ZERO

    def write_media(self, slot: int, cid) -> None:
        """Direct media write, used by the scrub repair path."""
        self._version += 1
        self.nand[slot] = (cid, self._version)

    def voltage(self, now: int) -> float:
        if self._cut_t is None or self.power in (POWER_ON, POWER_RECOVERING):
            return self.config.power.v_full
        return self.config.power.voltage(now - self._cut_t)

    # -- submission ----------------------------------------------------------

    def submit(self, op: str, subs, now: int) -> int:
        """Queue a command; subs is a list of (block_slot, cid) pairs."""
        if not self.available(now):
            raise DeviceUnavailable(f"device {self.power}/{self.health}")
        if self.queue_depth() >= self.config.ncq_depth:
            raise QueueFull("command queue full")
        self._handle += 1
        self._version += 1
        cmd = Command(self._handle, op, list(subs), self._version, now)
        if self.health == METADATA_CORRUPTION and any(
                slot in self._bad_region for slot, _ in cmd.subs):
            self._emit(now, "error", cmd.handle, "metadata_region")
            return cmd.handle
        self._ncq.append(cmd)
        return cmd.handle

    # -- time advancement ----------------------------------------------------

    def next_deadline(self) -> Optional[int]:
        cands = []
        if self._cur_prog is not None:
            cands.append(self._cur_prog[1])
        if self._reads:
            cands.append(self._reads[0][0])
        if self._off_deadline is not None:
            cands.append(self._off_deadline)
        if self._recover_deadline is not None:
            cands.append(self._recover_deadline)
        return min(cands) if cands else None

    def tick(self, now: int) -> List[Tuple[int, int, str, int, object]]:
        """Advance to `now`, returning (time, seq, kind, handle, detail) events.

        kinds: "ack" (command acknowledged), "data" (read completion, detail
        is the list of content ids), "aborted" (lost to a power cut before
        acknowledgement), "error" (media error).
        """
        while True:
            t = self.next_deadline()
            if t is None or t > now:
                break
            self._step(t)
        self._advance_thermal(now)
        self._dispatch(now)
        out = self._events
        self._events = []
        out.sort(key=lambda e: (e[0], e[1]))
        return out

    def _step(self, t: int) -> None:
        if self._off_deadline is not None and t >= self._off_deadline:
            # Programs finishing strictly before unavailability persist.
            if self._cur_prog is not None and self._cur_prog[1] < self._off_deadline:
                self._finish_program()
                self._dispatch(t)
                return
            self._power_off(self._off_deadline)
            return
        if self._recover_deadline is not None and t >= self._recover_deadline:
            self._recover_deadline = None
            self.power = POWER_ON
            self._emit(t, "recovered", 0, None)
            return
        if self._reads and self._reads[0][0] <= t and (
                self._cur_prog is None or self._reads[0][0] <= self._cur_prog[1]):
            done_t, _, cmd = heapq.heappop(self._reads)
            data = [self.media_cid(slot) for slot, _ in cmd.subs]
            cmd.acked = True
            self._emit(done_t, "data", cmd.handle, data)
            self._dispatch(done_t)
            return
        if self._cur_prog is not None and self._cur_prog[1] <= t:
            self._finish_program()
            self._dispatch(self._engine_free_t)

    def _latency_scale(self) -> int:
        # Thermal throttling halves the dispatch rate.
        return 2 if self.temperature_c > self.config.throttle_temp_c else 1

    def _start_program(self, start_t: int) -> None:
        if not self._active:
            self._cur_prog = None
            return
        self._rr %= len(self._active)
        cmd = self._active[self._rr]
        end = start_t + self.config.program_latency_us * self._latency_scale()
        self._cur_prog = (cmd, end)
        self._engine_free_t = end

    def _finish_program(self) -> None:
        cmd, end = self._cur_prog
        slot, cid = cmd.subs[cmd.progress]
        self._commit(slot, cid, cmd.version, track_dirty=True)
        cmd.progress += 1
        self._buffer_used -= BLOCK
        self._drop_buffered(slot, cmd.version)
        if cmd.progress >= len(cmd.subs):
            self._active.remove(cmd)
            if not cmd.acked:
                cmd.acked = True
                self._unacked_admitted.remove(cmd)
                self._emit(end, "ack", cmd.handle, None)
        else:
            self._rr += 1
        if self._active:
            self._rr %= len(self._active)
        self._start_program(end)

    def _commit(self, slot: int, cid, version: int, track_dirty: bool) -> None:
        prior = self.nand.get(slot)
        if prior is None or prior[1] < version:
            self.nand[slot] = (cid, version)
        if track_dirty:
            self._map_dirty.append((slot, cid, prior))
            self._programs_done += 1
            if self._programs_done % self.config.map_checkpoint_every == 0:
                self._map_dirty.clear()

    def _buffer_add(self, cmd: Command) -> None:
        for slot, cid in cmd.subs:
            self._buffered.setdefault(slot, {})[cmd.version] = cid
        self._buffer_used += cmd.blocks * BLOCK

    def _drop_buffered(self, slot: int, version: int) -> None:
        versions = self._buffered.get(slot)
        if versions is not None:
            versions.pop(version, None)
            if not versions:
                del self._buffered[slot]

    def _dispatch(self, t: int) -> None:
        """Admit queued commands out of submission order (seeded pick)."""
        if self.power not in (POWER_ON, POWER_FALLING):
            return
        while self._ncq:
            room = self.config.dram_buffer_bytes - self._buffer_used
            cands = [i for i, c in enumerate(self._ncq)
                     if c.op == "read" or c.blocks * BLOCK <= room]
            if not cands:
                break
            idx = cands[self.rng.randrange(len(cands))]
            cmd = self._ncq.pop(idx)
            if cmd.op == "read":
                self._seq += 1
                scale = self._latency_scale()
                done = t + (self.config.read_latency_us
                            + self.config.read_block_us * cmd.blocks) * scale
                heapq.heappush(self._reads, (done, self._seq, cmd))
            else:
                self._buffer_add(cmd)
                self._active.append(cmd)
                if self.config.ack_on_buffer:
                    cmd.acked = True
                    self._emit(t, "ack", cmd.handle, None)
                else:
                    self._unacked_admitted.append(cmd)
                if self._cur_prog is None:
                    self._start_program(max(t, self._engine_free_t))

    # -- power ---------------------------------------------------------------

    def power_cut(self, now: int) -> None:
        if self.power != POWER_ON:
            raise DeviceStateError(f"power_cut in state {self.power}")
        self.power = POWER_FALLING
        self._cut_t = now
        self._off_deadline = now + self.config.power.t_unavail_us

    def _power_off(self, t: int) -> None:
        self.power = POWER_OFF
        self._off_deadline = None
        if self.config.plp:
            # Power-loss protection: capacitors flush the whole buffer.
            for cmd in self._active:
                for slot, cid in cmd.subs[cmd.progress:]:
                    self._commit(slot, cid, cmd.version, track_dirty=False)
        else:
            for slot, cid, prior in self._map_dirty:
                if self.config.p_fly > 0 and self.rng.random() < self.config.p_fly:
                    wrong = self.rng.randrange(self.config.capacity_blocks)
                    if wrong != slot:
                        self._version += 1
                        self.nand[wrong] = (cid, self._version)
                        if prior is None:
                            self.nand.pop(slot, None)
                        else:
                            self.nand[slot] = prior
        self._map_dirty.clear()
        for cmd in self._active:
            if not cmd.acked:
                self._emit(t, "aborted", cmd.handle, "power_loss")
        for cmd in self._ncq:
            self._emit(t, "aborted", cmd.handle, "power_loss")
        for _, _, cmd in self._reads:
            self._emit(t, "aborted", cmd.handle, "power_loss")
        self._ncq.clear()
        self._active.clear()
        self._unacked_admitted.clear()
        self._reads.clear()
        self._buffered.clear()
        self._buffer_used = 0
        self._cur_prog = None
        self.power_cycles += 1
        self._roll_dead(t)

    def _roll_dead(self, t: int) -> None:
        if self.health != HEALTHY:
            return
        h = self.config.dead_hazards
        if self.rng.random() < h.chip:
            self.health = CHIP_FAILURE
        elif self.rng.random() < h.interface:
            self.health = INTERFACE_CORRUPTION
        elif self.rng.random() < h.metadata:
            self.health = METADATA_CORRUPTION
            span = max(1, self.config.capacity_blocks // 16)
            start = self.rng.randrange(max(1, self.config.capacity_blocks - span))
            self._bad_region = range(start, start + span)

    def power_on(self, now: int) -> Optional[int]:
        """Begin recovery; returns the recovery completion time, or None for a
        device that will never be recognized again."""
        if self.power != POWER_OFF:
            raise DeviceStateError(f"power_on in state {self.power}")
        if self.health == CHIP_FAILURE:
            return None
        self.power = POWER_RECOVERING
        self._cut_t = None
        self._recover_deadline = now + self.config.recovery_us
        return self._recover_deadline

    # -- thermal / telemetry ---------------------------------------------------

    def set_ambient(self, temp_c: float, now: int) -> None:
        self._advance_thermal(now)
        self.ambient_c = temp_c

    def _advance_thermal(self, now: int) -> None:
        dt = now - self._therm_t
        if dt <= 0:
            return
        self._therm_t = now
        decay = math.exp(-dt / self.config.thermal_tau_us)
        self.temperature_c = self.ambient_c + (self.temperature_c - self.ambient_c) * decay

    def current_ma(self, now: int) -> int:
        if self.power == POWER_OFF or (
                self._off_deadline is not None and now >= self._off_deadline):
            return 0
        if self.power == POWER_RECOVERING:
            return self.config.recovery_ma
        if self._cur_prog is not None or self._active:
            return self.config.write_ma
        if self._reads:
            return self.config.read_ma
        return self.config.idle_ma

    def telemetry(self, now: int) -> dict:
        self._advance_thermal(now)
        return {
            "current_ma": self.current_ma(now),
            "temperature_c": round(self.temperature_c, 3),
            "power": self.power,
            "health": self.health,
        }

    # -- internals -------------------------------------------------------------

    def _emit(self, t: int, kind: str, handle: int, detail) -> None:
        self._seq += 1
        self._events.append((t, self._seq, kind, handle, detail))
