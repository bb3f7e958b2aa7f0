"""Per-house usage summaries over a set of traces.

A device counts as used in a session if any reading is strictly positive;
shares are device energy over summed device energy (not the metered total,
which carries noise and is not guaranteed to decompose).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .io import Trace


@dataclass(frozen=True)
class DeviceUsage:
    name: str
    used: bool
    energy: float          # watt-minutes over the trace
    share: float           # of summed device energy
    minutes_on: int        # strictly positive readings


@dataclass(frozen=True)
class UsageReport:
    house: str
    total_energy: float
    devices: tuple[DeviceUsage, ...]   # ranked by energy, descending


def usage_report(house: str, trace: Trace) -> UsageReport:
    energy = trace.values.sum(axis=0)
    total = float(energy.sum())
    rows = []
    for k, name in enumerate(trace.devices):
        on = int(np.count_nonzero(trace.values[:, k] > 0.0))
        rows.append(DeviceUsage(
            name=name,
            used=on > 0,
            energy=float(energy[k]),
            share=float(energy[k] / total) if total > 0 else 0.0,
            minutes_on=on,
        ))
    rows.sort(key=lambda r: (-r.energy, r.name))
    return UsageReport(house=house, total_energy=total, devices=tuple(rows))


def report_rows(reports) -> list[dict]:
    """Flatten reports for CSV/JSON emission, one row per house-device."""
    out = []
    for rep in reports:
        for rank, d in enumerate(rep.devices, start=1):
            out.append({
                "house": rep.house,
                "device": d.name,
                "rank": rank,
                "used": int(d.used),
                "energy": d.energy,
                "share": d.share,
                "minutes_on": d.minutes_on,
            })
    return out
