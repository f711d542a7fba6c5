"""Per-config hardware costs and their aggregation over slot sequences.

Costs are data, shipped as ``data/costs.csv`` and overridable with any CSV
of the same shape.
"""
from __future__ import annotations

import csv
import io
from collections.abc import Iterable
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from . import booth

AREA_DISTINCT = "distinct"  # each config type used is instantiated once
AREA_PER_SLOT = "per_slot"  # every slot owns a multiplier instance
AREA_MODES = (AREA_DISTINCT, AREA_PER_SLOT)


@dataclass(frozen=True)
class HardwareCost:
    area: float  # um^2
    power: float  # uW
    delay: float  # ps
    pdp: float  # pJ

    def __post_init__(self):
        for name in ("area", "power", "delay", "pdp"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")


class CostTable:
    def __init__(self, rows: dict[str, HardwareCost]):
        missing = set(booth.CONFIG_IDS) - set(rows)
        if missing:
            raise ValueError(f"cost table lacks configs: {sorted(missing)}")
        self.rows = {k: rows[k] for k in booth.CONFIG_IDS}

    @classmethod
    def from_csv(cls, text: str) -> CostTable:
        lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
        rows = {}
        for rec in csv.DictReader(lines):
            cfg = booth.get_config(rec["config"]).name
            rows[cfg] = HardwareCost(
                float(rec["area_um2"]), float(rec["power_uw"]), float(rec["delay_ps"]), float(rec["pdp_pj"])
            )
        return cls(rows)

    @classmethod
    def load(cls, path: str | Path | None = None) -> CostTable:
        if path is None:
            text = resources.files("approxfp").joinpath("data/costs.csv").read_text()
        else:
            text = Path(path).read_text()
        return cls.from_csv(text)

    def cost_of(self, cfg) -> HardwareCost:
        return self.rows[booth.get_config(cfg).name]

    def pdp_benefit(self, cfg) -> float:
        """Percent PDP saving of ``cfg`` relative to the exact multiplier."""
        cfg = booth.get_config(cfg)
        if cfg.is_exact:
            raise ValueError("PDP benefit is defined for approximate configs only")
        return 100.0 * (1.0 - self.cost_of(cfg).pdp / self.rows["exact"].pdp)

    def aggregate_cost(self, seq: Iterable, area_mode: str = AREA_DISTINCT, n_slots: int | None = 198):
        """(total PDP in pJ, area in um^2) of a slot sequence.

        PDP adds up per slot.  Area depends on ``area_mode``: the distinct
        config types used (pre-built, reusable multipliers) or one instance
        per slot.
        """
        names = [booth.get_config(c).name for c in seq]
        if n_slots is not None and len(names) != n_slots:
            raise ValueError(f"sequence has {len(names)} slots, expected {n_slots}")
        counts: dict[str, int] = {}
        for nm in names:
            counts[nm] = counts.get(nm, 0) + 1
        # iterate in fixed config order so float sums do not depend on slot order
        pdp = sum(self.rows[c].pdp * counts[c] for c in booth.CONFIG_IDS if c in counts)
        if area_mode == AREA_DISTINCT:
            area = sum(self.rows[c].area for c in booth.CONFIG_IDS if c in counts)
        elif area_mode == AREA_PER_SLOT:
            area = sum(self.rows[c].area * counts[c] for c in booth.CONFIG_IDS if c in counts)
        else:
            raise ValueError(f"unknown area mode {area_mode!r}; expected one of {AREA_MODES}")
        return pdp, area

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["config", "area_um2", "power_uw", "delay_ps", "pdp_pj", "pdp_benefit_pct"])
        for name, c in self.rows.items():
            benefit = "" if name == "exact" else f"{self.pdp_benefit(name):.2f}"
            w.writerow([name, f"{c.area:.2f}", f"{c.power:.3f}", f"{c.delay:g}", f"{c.pdp:.3f}", benefit])
        return buf.getvalue()


_DEFAULT: CostTable | None = None


def default_table() -> CostTable:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = CostTable.load()
    return _DEFAULT


def cost_of(cfg) -> HardwareCost:
    return default_table().cost_of(cfg)


def pdp_benefit(cfg) -> float:
    return default_table().pdp_benefit(cfg)


def aggregate_cost(seq, area_mode: str = AREA_DISTINCT):
    return default_table().aggregate_cost(seq, area_mode)
