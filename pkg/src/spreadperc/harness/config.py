"""Experiment configuration: JSON in, validated dataclass out.

Every key is checked before any sampling starts and unknown keys are
rejected, so a typo cannot silently fall back to a default.  The schema is
documented in ``docs/config-schema.md``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

KINDS = (
    "one_arm", "half_space", "pt_to_halfspace", "phi_psi", "susceptibility", "volume_tail",
    "magnetization", "slab_moments", "pc", "lengths", "sweep", "oracle_suite",
)

TOP_KEYS = {"kind", "lattice", "master_seed", "params", "out", "workers", "description"}

# allowed params per kind: name -> (required, checker)
_POS_INT = "positive int"
_INT_LIST = "list of positive ints"
_P = "probability or pc reference"
_P_LIST = "list of probabilities or pc references"
_REAL_LIST = "list of positive reals"
_SAMPLES = "positive int or map n -> positive int"

_COMMON_PC = {"pc_file": (False, "path")}
PARAMS: dict[str, dict[str, tuple[bool, str]]] = {
    "one_arm": {"n_list": (True, _INT_LIST), "p": (True, _P_LIST), "samples": (True, _SAMPLES),
                "ambient": (False, "ambient"), "volume_cap": (False, _POS_INT),
                "max_flagged_fraction": (False, "fraction"), **_COMMON_PC},
    "half_space": {"n_list": (True, _INT_LIST), "p": (True, _P_LIST), "samples": (True, _SAMPLES),
                   "volume_cap": (False, _POS_INT), "max_flagged_fraction": (False, "fraction"),
                   **_COMMON_PC},
    "pt_to_halfspace": {"n_list": (True, _INT_LIST), "p": (True, _P_LIST),
                        "samples": (True, _SAMPLES), "volume_cap": (False, _POS_INT),
                        "max_flagged_fraction": (False, "fraction"), **_COMMON_PC},
    "phi_psi": {"n_list": (True, _INT_LIST), "p": (True, _P_LIST), "samples": (True, _SAMPLES),
                "region": (False, "region"), "volume_cap": (False, _POS_INT),
                "max_flagged_fraction": (False, "fraction"), **_COMMON_PC},
    "susceptibility": {"m": (True, _POS_INT), "p": (True, _P_LIST), "samples": (True, _POS_INT),
                       "ambient": (False, "ambient"), "volume_cap": (False, _POS_INT),
                       "max_flagged_fraction": (False, "fraction"), **_COMMON_PC},
    "volume_tail": {"caps": (True, _INT_LIST), "m": (True, _POS_INT), "p": (True, _P_LIST),
                    "samples": (True, _POS_INT), "max_flagged_fraction": (False, "fraction"),
                    **_COMMON_PC},
    "magnetization": {"h_list": (True, _REAL_LIST), "p": (True, _P_LIST),
                      "samples": (True, _POS_INT), "tol": (False, "fraction"),
                      "V": (False, _POS_INT), "max_flagged_fraction": (False, "fraction"),
                      **_COMMON_PC},
    "slab_moments": {"n_list": (True, _INT_LIST), "p": (True, _P_LIST),
                     "samples": (True, _SAMPLES), "volume_cap": (False, _POS_INT),
                     "max_flagged_fraction": (False, "fraction"), **_COMMON_PC},
    "pc": {"p_bracket": (True, "bracket"), "k_max": (True, _POS_INT), "n0": (False, _POS_INT),
           "n_max": (False, _POS_INT), "max_steps": (False, _POS_INT),
           "target_width": (False, "nonneg real"), "volume_cap": (False, _POS_INT)},
    "lengths": {"p": (True, _P_LIST), "k_max": (True, _POS_INT), "n0": (False, _POS_INT),
                "n_max": (False, _POS_INT), "threshold": (False, "fraction"),
                "volume_cap": (False, _POS_INT), **_COMMON_PC},
    "sweep": {"eps_fractions": (True, _REAL_LIST), "observables": (True, "observables"),
              "samples": (True, _POS_INT), "n_list": (False, _INT_LIST), "k_max": (False, _POS_INT),
              "n0": (False, _POS_INT), "n_max": (False, _POS_INT), "m_min": (False, _POS_INT),
              "m_factor": (False, _POS_INT), "volume_cap": (False, _POS_INT),
              "pc_ends": (False, "bool"), **_COMMON_PC},
    "oracle_suite": {"p_grid": (False, "fraction list"), "estimator_samples": (False, _POS_INT)},
}


class ConfigError(ValueError):
    pass


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _is_pref(x) -> bool:
    return isinstance(x, str) and x in ("pc:low", "pc:mid", "pc:high")


def _is_prob(x) -> bool:
    return (isinstance(x, (int, float)) and not isinstance(x, bool) and 0 <= x <= 1) or _is_pref(x)


def _check(kind: str, key: str, what: str, v: Any) -> None:
    bad = ConfigError(f"{kind}.{key}: expected {what}, got {v!r}")
    if what == _POS_INT:
        if not (_is_int(v) and v >= 1):
            raise bad
    elif what == _INT_LIST:
        if not (isinstance(v, list) and v and all(_is_int(x) and x >= 1 for x in v)):
            raise bad
        if v != sorted(set(v)):
            raise ConfigError(f"{kind}.{key}: values must be strictly increasing")
    elif what == _P_LIST:
        if _is_prob(v):
            return
        if not (isinstance(v, list) and v and all(_is_prob(x) for x in v)):
            raise bad
    elif what == _REAL_LIST:
        if not (isinstance(v, list) and v and all(isinstance(x, (int, float)) and not isinstance(x, bool)
                                                  and math.isfinite(x) and x > 0 for x in v)):
            raise bad
    elif what == _SAMPLES:
        if _is_int(v) and v >= 1:
            return
        if not (isinstance(v, dict) and v and all(
                str(k).isdigit() and _is_int(x) and x >= 1 for k, x in v.items())):
            raise bad
    elif what == "fraction":
        if not (isinstance(v, (int, float)) and not isinstance(v, bool) and 0 < v < 1):
            raise bad
    elif what == "fraction list":
        if not (isinstance(v, list) and v and all(isinstance(x, (int, float)) and 0 < x < 1 for x in v)):
            raise bad
    elif what == "nonneg real":
        if not (isinstance(v, (int, float)) and not isinstance(v, bool) and v >= 0):
            raise bad
    elif what == "bracket":
        if not (isinstance(v, list) and len(v) == 2 and all(_is_prob(x) and not _is_pref(x) for x in v)
                and v[0] < v[1]):
            raise bad
    elif what == "ambient":
        if v not in ("full", "half"):
            raise bad
    elif what == "region":
        if v not in ("halfspace", "box"):
            raise bad
    elif what == "observables":
        from ..critical import SWEEP_OBSERVABLES

        if not (isinstance(v, list) and v and all(x in SWEEP_OBSERVABLES for x in v)):
            raise bad
    elif what == "path":
        if not isinstance(v, str):
            raise bad
    elif what == "bool":
        if not isinstance(v, bool):
            raise bad
    else:  # pragma: no cover
        raise AssertionError(what)


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    d: int
    L: int
    master_seed: int
    params: dict = field(default_factory=dict)
    out: Optional[str] = None
    workers: int = 1
    description: str = ""
    base_dir: str = "."

    def samples_for(self, n: Optional[int] = None) -> int:
        s = self.params["samples"]
        if isinstance(s, dict):
            if str(n) not in s:
                raise ConfigError(f"samples: no entry for n={n}")
            return int(s[str(n)])
        return int(s)

    def p_values(self) -> list:
        p = self.params["p"]
        return p if isinstance(p, list) else [p]

    def needs_pc(self) -> bool:
        if self.kind == "sweep":
            return True
        return "p" in self.params and any(_is_pref(x) for x in self.p_values())

    def pc_path(self) -> Path:
        path = Path(self.params.get("pc_file", "results/pc_d7/pc.json"))
        return path if path.is_absolute() else Path(self.base_dir) / path

    def echo(self) -> dict:
        """The config as it would be written to disk (without ``base_dir``)."""
        d = {"kind": self.kind, "lattice": {"d": self.d, "L": self.L},
             "master_seed": self.master_seed, "params": self.params, "workers": self.workers}
        if self.out is not None:
            d["out"] = self.out
        if self.description:
            d["description"] = self.description
        return d


def parse_config(raw: dict, base_dir: str = ".") -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    kind = raw.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"kind must be one of {KINDS}, got {kind!r}")
    lat = raw.get("lattice")
    if not isinstance(lat, dict) or set(lat) != {"d", "L"}:
        raise ConfigError("lattice must be an object with exactly the keys d and L")
    d, L = lat["d"], lat["L"]
    if not (_is_int(d) and d >= 1 and _is_int(L) and L >= 1):
        raise ConfigError("lattice.d and lattice.L must be positive integers")
    seed = raw.get("master_seed")
    if not (_is_int(seed) and 0 <= seed < 1 << 64):
        raise ConfigError("master_seed must be an unsigned 64-bit integer")
    params = raw.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("params must be an object")
    allowed = PARAMS[kind]
    unknown = set(params) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown {kind} params: {sorted(unknown)}")
    for key, (required, what) in allowed.items():
        if key in params:
            _check(kind, key, what, params[key])
        elif required:
            raise ConfigError(f"missing required {kind} param {key!r}")
    if isinstance(params.get("samples"), dict) and "n_list" in params:
        missing = [n for n in params["n_list"] if str(n) not in params["samples"]]
        if missing:
            raise ConfigError(f"samples: no entry for n in {missing}")
    workers = raw.get("workers", 1)
    if not (_is_int(workers) and workers >= 1):
        raise ConfigError("workers must be a positive integer")
    out = raw.get("out")
    if out is not None and not isinstance(out, str):
        raise ConfigError("out must be a string path")
    desc = raw.get("description", "")
    if not isinstance(desc, str):
        raise ConfigError("description must be a string")
    return ExperimentConfig(kind, d, L, seed, params, out, workers, desc, base_dir)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return parse_config(raw, str(path.parent.parent if path.parent.name == "configs" else path.parent))
