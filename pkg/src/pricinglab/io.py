"""Persistence: transcripts as JSON lines, reports and solutions as JSON, tables as CSV.

A transcript file starts with a header line (market, horizon, algorithm
configs and seeds, storage mode, online statistics) followed by one record
per round: {"t", "u1", "u2", "buyer"} plus "d1"/"d2" on stored rounds.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path

import numpy as np

from .simulator import PlayerStats, Transcript
from .stage_game import MarketModel

FORMAT_VERSION = 1


class TranscriptFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def _header(tr: Transcript) -> dict:
    h = {"format_version": FORMAT_VERSION, **tr.model.describe(), "T": tr.T,
         "configs": tr.configs, "seeds": tr.seeds,
         "storage": "full" if tr.is_full else "strided",
         "tail_start": tr.tail_start, "tail_buyer": tr.tail_buyer,
         "stats": [s.to_dict() for s in tr.stats],
         "phases": [list(p) for p in tr.phases]}
    return h


def dumps_transcript(tr: Transcript) -> str:
    out = io.StringIO()
    out.write(json.dumps(_header(tr)) + "\n")
    stored = {int(r): i for i, r in enumerate(tr.rounds)}
    for t in range(1, tr.T + 1):
        rec = {"t": t, "u1": float(tr.u1[t - 1]), "u2": float(tr.u2[t - 1]),
               "buyer": float(tr.buyer[t - 1])}
        i = stored.get(t)
        if i is not None:
            rec["d1"] = tr.d1[i].tolist()
            rec["d2"] = tr.d2[i].tolist()
        out.write(json.dumps(rec) + "\n")
    return out.getvalue()


def save_transcript(tr: Transcript, path) -> Path:
    path = Path(path)
    path.write_text(dumps_transcript(tr))
    return path


def load_transcript(path) -> Transcript:
    """Parse a transcript file; format problems raise TranscriptFormatError with the byte offset."""
    data = Path(path).read_bytes()
    offset = 0
    lines = data.split(b"\n")
    if not lines or not lines[0].strip():
        raise TranscriptFormatError("missing header line", 0)
    try:
        h = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise TranscriptFormatError(f"header is not JSON: {e.msg}", e.pos) from None
    for key in ("format_version", "k", "T", "model"):
        if key not in h:
            raise TranscriptFormatError(f"header lacks {key!r}", 0)
    if h["format_version"] != FORMAT_VERSION:
        raise TranscriptFormatError(f"unsupported format version {h['format_version']}", 0)
    model = MarketModel.from_dict(h)
    T, k = int(h["T"]), model.k
    offset = len(lines[0]) + 1
    u1 = np.empty(T)
    u2 = np.empty(T)
    buyer = np.empty(T)
    rounds, d1, d2 = [], [], []
    t_expect = 1
    for raw in lines[1:]:
        if not raw.strip():
            offset += len(raw) + 1
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as e:
            raise TranscriptFormatError(f"round record is not JSON: {e.msg}", offset + e.pos) from None
        if not isinstance(rec, dict) or rec.get("t") != t_expect:
            raise TranscriptFormatError(f"expected record for round {t_expect}", offset)
        try:
            u1[t_expect - 1] = rec["u1"]
            u2[t_expect - 1] = rec["u2"]
            buyer[t_expect - 1] = rec["buyer"]
        except (KeyError, TypeError, ValueError):
            raise TranscriptFormatError(f"round {t_expect} lacks payoff fields", offset) from None
        if "d1" in rec:
            a, b = rec["d1"], rec.get("d2")
            if b is None or len(a) != k or len(b) != k:
                raise TranscriptFormatError(f"round {t_expect} has malformed distributions", offset)
            rounds.append(t_expect)
            d1.append(a)
            d2.append(b)
        t_expect += 1
        offset += len(raw) + 1
    if t_expect != T + 1:
        raise TranscriptFormatError(f"file holds {t_expect - 1} rounds, header says {T}", offset)
    configs, seeds = h.get("configs", []), h.get("seeds", [])
    phases = [tuple(p) for p in h.get("phases", [])]
    if len(rounds) == T:
        tr = Transcript.from_rounds(model, np.array(d1).reshape(-1, k), np.array(d2).reshape(-1, k),
                                    configs, seeds, phases, u1, u2)
        tr.buyer = buyer
        if "stats" in h:
            # keep the run's streaming statistics; the recomputed ones only cross-check them
            stored = [PlayerStats.from_dict(s) for s in h["stats"]]
            for p, (a, b) in enumerate(zip(stored, tr.stats), start=1):
                if abs(a.U - b.U) > 1e-9 * max(T, 1) or np.abs(a.cf - b.cf).max(initial=0) > 1e-9 * max(T, 1):
                    raise TranscriptFormatError(f"header statistics of player {p} disagree with the rounds", 0)
            tr.stats = stored
            tr.tail_buyer = float(h.get("tail_buyer", tr.tail_buyer))
        return tr
    stats = [PlayerStats.from_dict(s) for s in h["stats"]]
    return Transcript(model, T, u1, u2, buyer, np.array(rounds, dtype=int),
                      np.array(d1, dtype=float).reshape(-1, k), np.array(d2, dtype=float).reshape(-1, k),
                      stats, int(h["tail_start"]), float(h["tail_buyer"]), configs, seeds, phases)


def write_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n")
    return path


def _default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def csv_text(header: list[str], rows) -> str:
    """CSV with dot decimals and 12 significant digits for floats, independent of locale."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([f"{v:.12g}" if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
