"""Declarative scenario files: the source of truth for every experiment.

A scenario describes one lattice world plus a source and a target demand
environment. The target is the source with demand intensities rescaled and
shifted in time while the hot/cold ranking of cells is preserved, which is
the nonstationarity the transfer penalty is designed to survive.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import jsonschema
import numpy as np
import yaml

from .transfer import ConcordanceSpec, OptimizerSettings
from .world import DemandModel, GridWorld

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["name", "grid", "horizon", "drivers", "demand"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "seed": {"type": "integer"},
        "grid": {
            "type": "object",
            "required": ["rows", "cols"],
            "additionalProperties": False,
            "properties": {
                "rows": {"type": "integer", "minimum": 1},
                "cols": {"type": "integer", "minimum": 2},
            },
        },
        "horizon": {"type": "integer", "minimum": 2},
        "pickup_radius": {"type": ["integer", "null"], "minimum": 0},
        "drivers": {"type": "integer", "minimum": 1},
        "driver_placement": {"enum": ["demand", "uniform"]},
        "revenue": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "base_fare": {"type": "number", "minimum": 0},
                "price_per_step": {"type": "number", "minimum": 0},
                "noise": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
        "cancellation": {"type": "number", "minimum": 0},
        "source_days": {"type": "integer", "minimum": 1},
        "demand": {
            "type": "object",
            "required": ["hot_block", "hot_rate", "cold_rate"],
            "additionalProperties": False,
            "properties": {
                "hot_block": {
                    "type": "array",
                    "items": {"type": "integer", "minimum": 0},
                    "minItems": 4,
                    "maxItems": 4,
                },
                "hot_rate": {"type": "number", "minimum": 0},
                "cold_rate": {"type": "number", "minimum": 0},
                "peak_window": {"type": "number"},
                "peak_width": {"type": "number", "exclusiveMinimum": 0},
                "offpeak_level": {"type": "number", "minimum": 0},
                "dest_hot_weight": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
        "target_shift": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "rate_scale": {"type": "number", "exclusiveMinimum": 0},
                "rate_offset": {"type": "number", "minimum": 0},
                "peak_shift": {"type": "number"},
                "block_shift": {
                    "type": "array",
                    "items": {"type": "integer"},
                    "minItems": 2,
                    "maxItems": 2,
                },
                "hot_ramp": {
                    "type": "array",
                    "items": {"type": "number", "exclusiveMinimum": 0},
                    "minItems": 2,
                    "maxItems": 2,
                },
            },
        },
        "transfer": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lambda": {"type": "number", "minimum": 0},
                "margin": {"type": "number", "exclusiveMinimum": 0},
                "pairs": {
                    "oneOf": [
                        {
                            "type": "object",
                            "required": ["mode"],
                            "additionalProperties": False,
                            "properties": {
                                "mode": {"const": "auto"},
                                "q": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.5},
                            },
                        },
                        {
                            "type": "array",
                            "items": {
                                "type": "array",
                                "items": {"type": "integer", "minimum": 0},
                                "minItems": 2,
                                "maxItems": 2,
                            },
                        },
                    ]
                },
            },
        },
        "optimizer": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "alpha0": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "max_iters": {"type": "integer", "minimum": 1},
                "tol": {"type": "number", "minimum": 0},
                "patience": {"type": "integer", "minimum": 1},
            },
        },
    },
}


class ScenarioError(ValueError):
    """Scenario file failed validation; message carries the offending path."""


@dataclass
class Scenario:
    raw: dict

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        try:
            jsonschema.validate(data, SCENARIO_SCHEMA)
        except jsonschema.ValidationError as e:
            path = "/".join(str(p) for p in e.absolute_path) or "<root>"
            raise ScenarioError(f"scenario field '{path}': {e.message}") from e
        return cls(raw=data)

    @classmethod
    def load(cls, path) -> "Scenario":
        with open(path, encoding="utf-8") as f:
            data = yaml.safe_load(f)
        if not isinstance(data, dict):
            raise ScenarioError(f"scenario file {path} is not a mapping")
        return cls.from_dict(data)

    # -- plain accessors ---------------------------------------------------
    @property
    def name(self) -> str:
        return self.raw["name"]

    @property
    def seed(self) -> int:
        return self.raw.get("seed", 0)

    @property
    def rows(self) -> int:
        return self.raw["grid"]["rows"]

    @property
    def cols(self) -> int:
        return self.raw["grid"]["cols"]

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    @property
    def horizon(self) -> int:
        return self.raw["horizon"]

    @property
    def pickup_radius(self) -> Optional[int]:
        return self.raw.get("pickup_radius")

    @property
    def source_days(self) -> int:
        return self.raw.get("source_days", 3)

    @property
    def lam(self) -> float:
        return self.raw.get("transfer", {}).get("lambda", 1.0)

    @property
    def margin(self) -> float:
        return self.raw.get("transfer", {}).get("margin", 1.0)

    @property
    def pair_config(self) -> Union[dict, List[Tuple[int, int]]]:
        pairs = self.raw.get("transfer", {}).get("pairs", {"mode": "auto", "q": 0.2})
        if isinstance(pairs, list):
            return [tuple(p) for p in pairs]
        return pairs

    def optimizer_settings(self) -> OptimizerSettings:
        o = self.raw.get("optimizer", {})
        return OptimizerSettings(
            alpha0=o.get("alpha0"),
            max_iters=o.get("max_iters", 250),
            tol=o.get("tol", 1e-5),
            patience=o.get("patience", 10),
        )

    # -- builders ----------------------------------------------------------
    def build_world(self) -> GridWorld:
        return GridWorld.lattice(self.rows, self.cols, self.horizon)

    def _base_rates(
        self,
        block_shift: Tuple[int, int] = (0, 0),
        hot_ramp: Optional[Tuple[float, float]] = None,
    ) -> np.ndarray:
        d = self.raw["demand"]
        r0, c0, r1, c1 = d["hot_block"]
        dr, dc = block_shift
        base = np.full(self.n_cells, float(d["cold_rate"]))
        rr = np.arange(self.n_cells) // self.cols
        cc = np.arange(self.n_cells) % self.cols
        hot = (rr >= r0 + dr) & (rr < r1 + dr) & (cc >= c0 + dc) & (cc < c1 + dc)
        if not hot.any():
            raise ScenarioError("demand.hot_block selects no cells")
        base[hot] = float(d["hot_rate"])
        if hot_ramp is not None:
            # tilt rates across the hot block (diagonal ramp, mean preserved)
            lo, hi = float(hot_ramp[0]), float(hot_ramp[1])
            pos = (rr[hot] + cc[hot]).astype(float)
            span = pos.max() - pos.min()
            if span == 0:
                ramp = np.full(pos.shape, (lo + hi) / 2.0)
            else:
                ramp = lo + (hi - lo) * (pos - pos.min()) / span
            base[hot] *= ramp / ramp.mean()
        return base

    def _time_profile(self, peak_shift: float = 0.0) -> np.ndarray:
        d = self.raw["demand"]
        peak = d.get("peak_window", self.horizon / 2) + peak_shift
        width = d.get("peak_width", self.horizon / 6)
        level = d.get("offpeak_level", 0.5)
        t = np.arange(self.horizon, dtype=float)
        profile = level + np.exp(-(((t - peak) / width) ** 2))
        return profile / profile.mean()

    def _destination_matrix(self, base: np.ndarray) -> np.ndarray:
        w = self.raw["demand"].get("dest_hot_weight", 0.75)
        n = self.n_cells
        attract = base / base.sum()
        row = w * attract + (1.0 - w) / n
        row = row / row.sum()
        return np.tile(row, (n, 1))

    def _driver_counts(self, base: np.ndarray) -> np.ndarray:
        total = self.raw["drivers"]
        placement = self.raw.get("driver_placement", "demand")
        n = self.n_cells
        if placement == "uniform":
            weights = np.full(n, 1.0 / n)
        else:
            weights = base / base.sum()
        counts = np.floor(weights * total).astype(np.int64)
        remainder = total - counts.sum()
        # largest fractional parts get the leftover drivers, ties by cell index
        frac = weights * total - counts
        for i in np.lexsort((np.arange(n), -frac))[:remainder]:
            counts[i] += 1
        return counts

    def _build_model(self, base: np.ndarray, peak_shift: float = 0.0) -> DemandModel:
        rev = self.raw.get("revenue", {})
        rates = np.outer(self._time_profile(peak_shift), base)
        return DemandModel(
            rates=rates,
            destination=self._destination_matrix(base),
            price_per_step=np.full(self.n_cells, rev.get("price_per_step", 1.0)),
            base_fare=np.full(self.n_cells, rev.get("base_fare", 0.0)),
            revenue_noise=rev.get("noise", 0.2),
            driver_counts=self._driver_counts(base),
            cancellation=self.raw.get("cancellation", 0.0),
        )

    def build_source_model(self) -> DemandModel:
        return self._build_model(self._base_rates())

    def build_target_model(self) -> DemandModel:
        shift = self.raw.get("target_shift", {})
        ramp = shift.get("hot_ramp")
        base = self._base_rates(
            tuple(shift.get("block_shift", (0, 0))),
            hot_ramp=tuple(ramp) if ramp is not None else None,
        )
        scaled = shift.get("rate_scale", 1.0) * base + shift.get("rate_offset", 0.0)
        return self._build_model(scaled, peak_shift=shift.get("peak_shift", 0.0))

    def concordance_spec(self, v_src) -> ConcordanceSpec:
        """Materialize the pair set (auto tiers need the source table)."""
        from .transfer import default_pair_set

        cfg = self.pair_config
        if isinstance(cfg, dict):
            pairs = default_pair_set(v_src, cfg.get("q", 0.2))
        else:
            pairs = cfg
        return ConcordanceSpec(pairs=pairs, lam=self.lam, margin=self.margin)


def default_scenario() -> Scenario:
    """The bundled nonstationary scenario used by the acceptance experiments."""
    return Scenario.from_dict(
        {
            "name": "default-nonstationary",
            "seed": 0,
            "grid": {"rows": 10, "cols": 10},
            "horizon": 144,
            "pickup_radius": 6,
            "drivers": 100,
            "driver_placement": "demand",
            "revenue": {"base_fare": 2.5, "price_per_step": 0.3, "noise": 0.2},
            "cancellation": 0.01,
            "source_days": 4,
            "demand": {
                "hot_block": [3, 3, 7, 7],
                "hot_rate": 1.25,
                "cold_rate": 0.04,
                "peak_window": 60,
                "peak_width": 30,
                "offpeak_level": 0.5,
                "dest_hot_weight": 0.75,
            },
            "target_shift": {"rate_scale": 1.6, "rate_offset": 0.02, "peak_shift": 36},
            "transfer": {
                "lambda": 0.5,
                "margin": 1.0,
                "pairs": {"mode": "auto", "q": 0.2},
            },
            "optimizer": {"alpha0": None, "max_iters": 250, "tol": 1e-5, "patience": 10},
        }
    )
