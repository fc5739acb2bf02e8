"""WFDB header, signal (formats 212 and 16) and MIT annotation I/O."""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

SUPPORTED_FORMATS = (212, 16)

# MIT annotation pseudo-codes
SKIP, NUM, SUB, CHN, AUX = 59, 60, 61, 62, 63
RHYTHM = 28
NOTE = 22

DANGEROUS = frozenset({"VF", "VFIB", "VFL", "VT", "ASYS", "HGEA"})


class WfdbError(ValueError):
    pass


@dataclass
class SignalSpec:
    file_name: str
    fmt: int
    gain: float = 200.0
    baseline: int = 0
    units: str = "mV"
    adc_res: int = 12
    adc_zero: int = 0
    init_value: int = 0
    checksum: int = 0
    block_size: int = 0
    description: str = ""


@dataclass
class WfdbRecord:
    name: str
    n_signals: int
    fs: float
    n_samples: int
    signals: list[SignalSpec] = field(default_factory=list)

    def __post_init__(self):
        if self.n_signals < 1:
            raise WfdbError("record needs at least one signal")
        if self.fs <= 0:
            raise WfdbError(f"sampling frequency must be positive, got {self.fs}")


_GAIN_RE = re.compile(r"^([-+0-9.eE]+)(?:\(([-+0-9]+)\))?(?:/(\S+))?$")


def _num(tok: str):
    v = float(tok)
    return int(v) if v.is_integer() and "." not in tok and "e" not in tok.lower() else v


def parse_wfdb_header(text: str | bytes) -> WfdbRecord:
    if isinstance(text, bytes):
        text = text.decode("ascii")
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise WfdbError("empty header")
    head = lines[0].split()
    if len(head) < 4:
        raise WfdbError(f"record line needs name, n_signals, fs, n_samples: {lines[0]!r}")
    name = head[0]
    try:
        n_sig = int(head[1])
        fs = float(head[2].split("/")[0])
        n_samples = int(head[3])
    except ValueError as exc:
        raise WfdbError(f"malformed record line {lines[0]!r}") from exc
    if len(lines) - 1 < n_sig:
        raise WfdbError(f"header declares {n_sig} signals but has {len(lines) - 1} signal lines")
    specs = []
    for ln in lines[1:1 + n_sig]:
        tok = ln.split()
        if len(tok) < 2:
            raise WfdbError(f"signal line needs file name and format: {ln!r}")
        fmt = int(tok[1].split("x")[0].split(":")[0].split("+")[0])
        if fmt not in SUPPORTED_FORMATS:
            raise WfdbError(f"unsupported signal format {fmt}")
        spec = SignalSpec(tok[0], fmt)
        baseline = None
        if len(tok) > 2:
            m = _GAIN_RE.match(tok[2])
            if not m:
                raise WfdbError(f"bad gain field {tok[2]!r}")
            spec.gain = float(m.group(1)) or 200.0
            if m.group(2) is not None:
                baseline = int(m.group(2))
            if m.group(3):
                spec.units = m.group(3)
        ints = ["adc_res", "adc_zero", "init_value", "checksum", "block_size"]
        for attr, t in zip(ints, tok[3:8]):
            setattr(spec, attr, int(t))
        spec.description = " ".join(tok[8:])
        spec.baseline = spec.adc_zero if baseline is None else baseline
        specs.append(spec)
    return WfdbRecord(name, n_sig, fs, n_samples, specs)


def write_wfdb_header(rec: WfdbRecord) -> str:
    fs = repr(rec.fs) if not float(rec.fs).is_integer() else str(int(rec.fs))
    out = [f"{rec.name} {rec.n_signals} {fs} {rec.n_samples}"]
    for s in rec.signals:
        gain = repr(s.gain) if not float(s.gain).is_integer() else str(int(s.gain))
        line = (f"{s.file_name} {s.fmt} {gain}({s.baseline})/{s.units} {s.adc_res} {s.adc_zero} "
                f"{s.init_value} {s.checksum} {s.block_size}")
        if s.description:
            line += f" {s.description}"
        out.append(line)
    return "\n".join(out) + "\n"


def unpack_212(raw: bytes, n_values: int) -> np.ndarray:
    """Decode ``n_values`` 12-bit two's-complement samples (3 bytes per pair)."""
    n_groups = (n_values + 1) // 2
    need = 3 * n_groups
    if len(raw) % 3:
        raise WfdbError(f"format 212 payload length {len(raw)} is not a multiple of 3")
    if len(raw) < need:
        raise WfdbError(f"truncated format 212 payload: need {need} bytes, have {len(raw)}")
    b = np.frombuffer(raw, dtype=np.uint8, count=need).reshape(-1, 3).astype(np.int32)
    s1 = b[:, 0] | ((b[:, 1] & 0x0F) << 8)
    s2 = b[:, 2] | ((b[:, 1] & 0xF0) << 4)
    out = np.empty(2 * n_groups, dtype=np.int32)
    out[0::2], out[1::2] = s1, s2
    out[out > 2047] -= 4096
    return out[:n_values]


def pack_212(values: np.ndarray) -> bytes:
    v = np.asarray(values, dtype=np.int64)
    if v.size and (v.min() < -2048 or v.max() > 2047):
        raise WfdbError("format 212 samples must lie in [-2048, 2047]")
    if v.size % 2:
        v = np.append(v, 0)
    u = (v & 0xFFF).reshape(-1, 2)
    b = np.empty((len(u), 3), dtype=np.uint8)
    b[:, 0] = u[:, 0] & 0xFF
    b[:, 1] = ((u[:, 0] >> 8) & 0x0F) | ((u[:, 1] >> 4) & 0xF0)
    b[:, 2] = u[:, 1] & 0xFF
    return b.tobytes()


def read_adc(raw: bytes, rec: WfdbRecord) -> np.ndarray:
    """Raw ADC units as an ``(n_signals, n_samples)`` int array (interleaved storage)."""
    fmts = {s.fmt for s in rec.signals}
    if len(fmts) != 1:
        raise WfdbError("mixed signal formats in one file are not supported")
    fmt = fmts.pop()
    n = rec.n_samples * rec.n_signals
    if fmt == 212:
        flat = unpack_212(raw, n)
    else:
        if len(raw) % 2:
            raise WfdbError(f"format 16 payload length {len(raw)} is odd")
        if len(raw) < 2 * n:
            raise WfdbError(f"truncated format 16 payload: need {2 * n} bytes, have {len(raw)}")
        flat = np.frombuffer(raw, dtype="<i2", count=n).astype(np.int32)
    return flat.reshape(rec.n_samples, rec.n_signals).T


def read_signal(raw: bytes, rec: WfdbRecord) -> np.ndarray:
    """Physical units: ``(adu - baseline) / gain`` per lead."""
    adc = read_adc(raw, rec).astype(np.float64)
    base = np.array([s.baseline for s in rec.signals], dtype=np.float64)[:, None]
    gain = np.array([s.gain for s in rec.signals], dtype=np.float64)[:, None]
    return (adc - base) / gain


def write_adc(adc: np.ndarray, fmt: int) -> bytes:
    adc = np.asarray(adc)
    flat = adc.T.reshape(-1)
    if fmt == 212:
        return pack_212(flat)
    if fmt == 16:
        if flat.size and (flat.min() < -32768 or flat.max() > 32767):
            raise WfdbError("format 16 samples must fit int16")
        return flat.astype("<i2").tobytes()
    raise WfdbError(f"unsupported signal format {fmt}")


# ---------------------------------------------------------------- annotations


@dataclass
class Annotation:
    sample: int
    code: int
    subtype: int = 0
    chan: int = 0
    num: int = 0
    aux: bytes = b""


@dataclass
class RhythmEvent:
    sample_index: int
    label: str

    @property
    def rhythm(self) -> str:
        return rhythm_name(self.label)

    @property
    def is_dangerous(self) -> bool:
        return self.rhythm in DANGEROUS


def rhythm_name(label: str) -> str:
    return label.strip("\x00").strip().lstrip("(").strip()


def parse_annotations(raw: bytes, n_samples: int | None = None) -> list[Annotation]:
    """Decode an MIT-format annotation stream.

    Each 16-bit little-endian word carries a 6-bit code and a 10-bit field.
    ``num``/``chan`` persist across annotations as in the WFDB library.
    """
    if len(raw) % 2:
        raise WfdbError("annotation stream has odd byte length")
    words = np.frombuffer(raw, dtype="<u2")
    anns: list[Annotation] = []
    t = 0
    num = chan = 0
    i = 0
    cur: Annotation | None = None
    nw = len(words)
    while i < nw:
        w = int(words[i])
        code, field_ = w >> 10, w & 0x3FF
        i += 1
        if code == 0 and field_ == 0:
            break
        if code == SKIP:
            if i + 2 > nw:
                raise WfdbError("truncated SKIP interval")
            hi, lo = int(words[i]), int(words[i + 1])
            i += 2
            interval = (hi << 16) | lo
            if interval >= 1 << 31:
                interval -= 1 << 32
            t += interval
        elif code == NUM:
            num = field_ if field_ < 512 else field_ - 1024
            if cur is not None:
                cur.num = num
        elif code == SUB:
            if cur is not None:
                cur.subtype = field_
        elif code == CHN:
            chan = field_
            if cur is not None:
                cur.chan = chan
        elif code == AUX:
            nbytes = field_
            nwords = (nbytes + 1) // 2
            if i + nwords > nw:
                raise WfdbError("truncated AUX payload")
            payload = words[i:i + nwords].tobytes()[:nbytes]
            i += nwords
            if cur is not None:
                cur.aux = payload
        else:
            t += field_
            if n_samples is not None and t > n_samples:
                raise WfdbError(f"annotation at sample {t} beyond record end {n_samples}")
            cur = Annotation(t, code, 0, chan, num)
            anns.append(cur)
    return anns


def write_annotations(anns: list[Annotation]) -> bytes:
    words: list[int] = []
    t = 0
    num = chan = 0
    for a in anns:
        if not 1 <= a.code <= 49:
            raise WfdbError(f"annotation code {a.code} outside 1..49")
        dt = a.sample - t
        if dt < 0 or dt > 1023:
            words += [SKIP << 10, (dt >> 16) & 0xFFFF, dt & 0xFFFF]
            dt = 0
        words.append((a.code << 10) | dt)
        t = a.sample
        if a.num != num:
            words.append((NUM << 10) | (a.num & 0x3FF))
            num = a.num
        if a.subtype:
            words.append((SUB << 10) | (a.subtype & 0x3FF))
        if a.chan != chan:
            words.append((CHN << 10) | (a.chan & 0x3FF))
            chan = a.chan
        if a.aux:
            if len(a.aux) > 1023:
                raise WfdbError("AUX string too long")
            words.append((AUX << 10) | len(a.aux))
            padded = a.aux + (b"\x00" if len(a.aux) % 2 else b"")
            words += list(np.frombuffer(padded, dtype="<u2"))
    words.append(0)
    return np.asarray(words, dtype="<u2").tobytes()


def rhythm_events(anns: list[Annotation]) -> list[RhythmEvent]:
    return [RhythmEvent(a.sample, a.aux.decode("latin-1").rstrip("\x00"))
            for a in anns if a.code == RHYTHM and a.aux]


def extract_changepoints(events: list[RhythmEvent]) -> list[int]:
    """Sample indices where the rhythm label switches into a dangerous rhythm."""
    out = []
    prev = None
    for ev in sorted(events, key=lambda e: e.sample_index):
        name = ev.rhythm
        if name in DANGEROUS and name != prev:
            out.append(ev.sample_index)
        prev = name
    return out
