"""Structured-text run configuration: parsing, defaults and strict key checking.

Configs are YAML (JSON is a subset).  Every section has a fixed key set;
unknown keys are rejected with the dotted path of the offender, so a typo
never silently falls back to a default.
"""
from __future__ import annotations

import copy
import json
import logging
import re
from pathlib import Path

import numpy as np
import yaml

from .kernel import DiagonalCovariance, GaussianMixtureKernel, RadialTabulatedKernel

LOGGER = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


ASSUMPTION_KEYS = {
    "criticality_tol": 1e-6,
    "epsilon_candidates": [1.0, 0.5, 0.25, 0.1],
    "ir_radii": 512,
    "ir_directions": 64,
    "ir_k_min": 1e-4,
    "ir_k_max": 40.0,
}
GRID_KEYS = {"m": None, "x_max": None, "sub_cells": None, "memory_budget": 2.0e9}
RADIAL_KEYS = {"order": 24, "max_panel": 0.5, "k_max": None}
SRBM_KEYS = {"dimension": 5, "alpha": 0.0, "legs": 4, "substeps": 16, "v0": 1.0, "r0": 1.0,
             "paths": 100_000, "seed": 0, "batch_size": 10_000}

SECTIONS = {
    "check-assumptions": {"J": None, "g": None, "assumptions": ASSUMPTION_KEYS},
    "walk-c": {"sigma": None, "points": None, "radial_scan": None, "rel_tol": 1e-12,
               "tail": "euler-maclaurin"},
    "solve": {"J": None, "g": None, "engine": "auto", "grid": GRID_KEYS, "radial": RADIAL_KEYS,
              "series_rel_tol": 1e-12, "criticality_tol": 1e-6, "subcritical": False,
              "check": True, "assumptions": ASSUMPTION_KEYS, "points": None, "radial_scan": None},
    "oracle": {"J": None, "g": None, "method": "quadrature", "engine": "auto", "grid": GRID_KEYS,
               "radial": RADIAL_KEYS, "series_rel_tol": 1e-12, "criticality_tol": 1e-6,
               "subcritical": False, "epsrel": 1e-10, "points": None, "radial_scan": None},
    "validate-asymptotics": {"J": None, "g": None, "engine": "auto", "grid": GRID_KEYS,
                             "radial": RADIAL_KEYS, "series_rel_tol": 1e-12,
                             "criticality_tol": 1e-6, "directions": [], "radii": None,
                             "amplitude_tol": 0.02, "spread_tol": 0.02},
    "srbm": {"srbm": SRBM_KEYS, "probes": None, "half_width": 0.15, "method": "histogram",
             "domination": None},
}
REQUIRED = {
    "check-assumptions": ("J", "g"),
    "walk-c": ("sigma",),
    "solve": ("J", "g"),
    "oracle": ("J", "g"),
    "validate-asymptotics": ("J", "g", "radii"),
    "srbm": ("probes",),
}
KERNEL_KEYS = {
    "mixture": {"type", "dimension", "components", "scale", "criticalize"},
    "gaussian": {"type", "dimension", "covariance", "variance", "weight", "criticalize"},
    "tabulated": {"type", "dimension", "file", "radii", "values", "tail_exponent", "order",
                  "criticalize"},
}
COMPONENT_KEYS = {"weight", "covariance", "variance"}
SCAN_KEYS = {"direction", "radii", "r_min", "r_max", "n", "spacing"}
DOMINATION_KEYS = {"n_max": 10, "lambda_factor": 0.95, "lam": None}


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads ``1e-6`` (no dot) as a float, as JSON does."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^[-+]?(?:[0-9][0-9_]*)(?:\.[0-9_]*)?[eE][-+]?[0-9]+$"""),
    list("-+0123456789"))


def load_document(path):
    """Read a YAML or JSON document into a dict."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from exc
    try:
        doc = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML/JSON ({exc})") from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return doc


def _check_keys(section, allowed, where):
    if not isinstance(section, dict):
        raise ConfigError(f"'{where}' must be a mapping")
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown key '{where}.{key}' (allowed: {', '.join(sorted(allowed))})"
                              if where else
                              f"unknown key '{key}' (allowed: {', '.join(sorted(allowed))})")


def _merge(defaults, given, where):
    _check_keys(given, defaults, where)
    out = {}
    for key, default in defaults.items():
        val = given.get(key, copy.deepcopy(default))
        if isinstance(default, dict) and key in given:
            if given[key] is None:
                val = copy.deepcopy(default)
            else:
                val = _merge(default, given[key], f"{where}.{key}" if where else key)
        out[key] = val
    return out


def resolve(subcommand, doc, base_dir="."):
    """Fill defaults, reject unknown keys and normalise kernel file paths."""
    if subcommand not in SECTIONS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    cfg = _merge(SECTIONS[subcommand], doc, "")
    for key in REQUIRED[subcommand]:
        if cfg.get(key) is None:
            raise ConfigError(f"missing required key '{key}'")
    for key in ("J", "g"):
        if key in cfg and cfg[key] is not None:
            cfg[key] = _resolve_kernel(cfg[key], key, base_dir)
    if "radial_scan" in cfg and cfg["radial_scan"] is not None:
        _check_keys(cfg["radial_scan"], SCAN_KEYS, "radial_scan")
    if subcommand == "srbm" and cfg["domination"] is not None:
        cfg["domination"] = _merge(DOMINATION_KEYS, cfg["domination"], "domination")
    return cfg


def _resolve_kernel(entry, where, base_dir):
    if not isinstance(entry, dict):
        raise ConfigError(f"'{where}' must be a kernel mapping")
    kind = entry.get("type")
    if kind not in KERNEL_KEYS:
        raise ConfigError(f"'{where}.type' must be one of {sorted(KERNEL_KEYS)}, got {kind!r}")
    _check_keys(entry, KERNEL_KEYS[kind], where)
    if "dimension" not in entry:
        raise ConfigError(f"missing required key '{where}.dimension'")
    entry = copy.deepcopy(entry)
    if kind == "mixture":
        comps = entry.get("components")
        if not comps:
            raise ConfigError(f"missing required key '{where}.components'")
        for i, c in enumerate(comps):
            _check_keys(c, COMPONENT_KEYS, f"{where}.components[{i}]")
    if kind == "tabulated" and "file" in entry:
        entry["file"] = str((Path(base_dir) / entry["file"]).resolve())
    return entry


def _covariance(entry, d, where):
    if "covariance" in entry and "variance" in entry:
        raise ConfigError(f"'{where}' gives both 'covariance' and 'variance'")
    if "covariance" in entry:
        cov = entry["covariance"]
        if len(cov) != d:
            raise ConfigError(f"'{where}.covariance' has {len(cov)} entries, dimension is {d}")
        return DiagonalCovariance(cov)
    if "variance" in entry:
        return DiagonalCovariance.identity(d, float(entry["variance"]))
    return DiagonalCovariance.identity(d)


def build_kernel(entry, where="kernel"):
    """Instantiate a kernel from a resolved kernel mapping."""
    from .assumptions import criticalize

    d = entry["dimension"]
    try:
        kind = entry["type"]
        if kind == "gaussian":
            k = GaussianMixtureKernel(d, [(entry.get("weight", 1.0), _covariance(entry, d, where))])
        elif kind == "mixture":
            comps = [(c.get("weight", 1.0), _covariance(c, d, f"{where}.components[{i}]"))
                     for i, c in enumerate(entry["components"])]
            k = GaussianMixtureKernel(d, comps, entry.get("scale", 1.0))
        else:
            if "tail_exponent" not in entry:
                raise ConfigError(f"missing required key '{where}.tail_exponent'")
            if "file" in entry:
                k = RadialTabulatedKernel.from_file(entry["file"], d, entry["tail_exponent"],
                                                    entry.get("order", 1))
            elif "radii" in entry and "values" in entry:
                k = RadialTabulatedKernel(d, entry["radii"], entry["values"], entry["tail_exponent"],
                                          entry.get("order", 1))
            else:
                raise ConfigError(f"'{where}' needs 'file' or both 'radii' and 'values'")
    except ConfigError:
        raise
    except (ValueError, OSError) as exc:
        raise ConfigError(f"'{where}': {exc}") from exc
    if entry.get("criticalize", False):
        k = criticalize(k)
    return k


def build_points(cfg, d):
    """Points from ``points`` or ``radial_scan``."""
    pts, scan = cfg.get("points"), cfg.get("radial_scan")
    if pts is not None and scan is not None:
        raise ConfigError("give either 'points' or 'radial_scan', not both")
    if pts is not None:
        arr = np.array(pts, dtype=float, ndmin=2)
        if arr.shape[-1] != d:
            raise ConfigError(f"'points' entries must have {d} coordinates, got {arr.shape[-1]}")
        return arr
    if scan is None:
        raise ConfigError("missing required key 'points' (or 'radial_scan')")
    e = np.asarray(scan.get("direction", [1.0] + [0.0] * (d - 1)), dtype=float)
    if e.size != d or not np.linalg.norm(e) > 0:
        raise ConfigError(f"'radial_scan.direction' must be a nonzero vector of length {d}")
    e = e / np.linalg.norm(e)
    radii = scan_radii(scan, "radial_scan")
    return radii[:, None] * e[None, :]


def scan_radii(scan, where):
    if isinstance(scan, (list, tuple)):
        return np.asarray(scan, dtype=float)
    if "radii" in scan:
        return np.asarray(scan["radii"], dtype=float)
    try:
        lo, hi, n = float(scan["r_min"]), float(scan["r_max"]), int(scan["n"])
    except KeyError as exc:
        raise ConfigError(f"'{where}' needs 'radii' or 'r_min', 'r_max' and 'n' "
                          f"(missing {exc.args[0]})") from None
    spacing = scan.get("spacing", "linear")
    if spacing == "linear":
        return np.linspace(lo, hi, n)
    if spacing == "log":
        return np.geomspace(lo, hi, n)
    raise ConfigError(f"'{where}.spacing' must be 'linear' or 'log'")


def dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable)


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not serialisable: {type(o)}")
