"""JSON scenario configuration: parsing, validation, and normalization.

The schema is documented in the README.  ``normalize_config`` materializes
every default so that a normalized config re-parses to itself bit-for-bit,
which the CLI exposes as ``check --emit-normalized``.
"""

import copy
import json

import numpy as np

from .barriers import BarrierConfig
from .dynamics import InertiaParams, PlantState, PlatformModel, symmetric_geometry
from .errors import ConfigError
from .nominal import LqrWeights
from .sim import FILTER_MODES, ScenarioConfig, WaypointSegment

EULER_CONVENTION = "zyx-yaw-pitch-roll"

GEOMETRY_DEFAULTS = {
    "base_radius": 0.20,
    "platform_radius": 0.16,
    "base_half_angle_deg": 15.0,
    "platform_half_angle_deg": 50.0,
}

MODEL_DEFAULTS = {
    "geometry": GEOMETRY_DEFAULTS,
    "mass": 2.0,
    "inertia": [0.02, 0.02, 0.04],
    "gravity": 9.81,
}

BARRIER_DEFAULTS = {
    "q_max": [None] * 6,
    "q_min": [None] * 6,
    "qdot_max": [None] * 6,
    "qdot_min": [None] * 6,
    "alpha_e": 1.0,
    "alpha_D": 1.0,
    "alpha_v": 1.0,
    "beta": 2.0e4,
    "alpha_Dj": None,
    "alpha_vk": None,
}

# Tracking gains tuned so the nominal controller is fast enough to violate
# the velocity limits unfiltered, yet settles between waypoint transitions,
# giving well-separated constraint-active regions in the filtered runs.
LQR_DEFAULTS = {
    "q_pos": [0.0044, 0.0044, 1.0, 1.0, 1.0, 1.0],
    "q_vel": [8.8674, 8.8674, 14.0, 2.0, 2.0, 2.0],
    "r": [1.0] * 6,
}

TOP_DEFAULTS = {
    "duration": 60.0,
    "dt": 1e-3,
    "filter": "cf",
    "seed": 0,
    "fallback": "damped",
    "engine": "auto",
    "euler_convention": EULER_CONVENTION,
}


def reference_scenario_dict():
    """The bundled 60 s waypoint scenario with the stock bounds and gains."""
    return {
        "model": copy.deepcopy(MODEL_DEFAULTS),
        "barrier": {
            "q_max": [0.1, 0.1, 0.5, None, None, None],
            "q_min": [None] * 6,
            "qdot_max": [2e-3, 2e-3, 10e-3, None, None, None],
            "qdot_min": [None] * 6,
            "alpha_e": 1.0,
            "alpha_D": 1.0,
            "alpha_v": 1.0,
            "beta": 2.0e4,
            "alpha_Dj": [1.0, 1.0, 1.0],
            "alpha_vk": [1.0, 1.0, 2.0],
        },
        "lqr": copy.deepcopy(LQR_DEFAULTS),
        "initial_state": {"q": [0.0, 0.0, 0.4, 0.0, 0.0, 0.0],
                          "qdot": [0.0] * 6},
        "duration": 60.0,
        "dt": 1e-3,
        "waypoints": [
            {"t_start": 0.0, "t_end": 15.0, "q_des": [0.1, 0.0, 0.4, 0.0, 0.0, 0.0]},
            {"t_start": 15.0, "t_end": 30.0, "q_des": [0.0, 0.1, 0.4, 0.0, 0.0, 0.0]},
            {"t_start": 30.0, "t_end": 45.0, "q_des": [0.0, 0.0, 0.45, 0.0, 0.0, 0.0]},
            {"t_start": 45.0, "t_end": 60.0, "q_des": [0.0, 0.0, 0.5, 0.0, 0.0, 0.0]},
        ],
        "filter": "cf",
        "seed": 0,
        "fallback": "damped",
        "engine": "auto",
        "euler_convention": EULER_CONVENTION,
    }


def _merge(defaults, given, context):
    if given is None:
        return copy.deepcopy(defaults)
    if not isinstance(given, dict):
        raise ConfigError(f"{context} section must be an object")
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        if key not in defaults:
            raise ConfigError(f"unknown key {key!r} in {context} section")
        if isinstance(defaults[key], dict):
            out[key] = _merge(defaults[key], value, f"{context}.{key}")
        else:
            out[key] = copy.deepcopy(value)
    return out


def normalize_config(raw):
    """Fill defaults and canonicalize value types; raises on unknown keys."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    known = {"model", "barrier", "lqr", "initial_state", "duration", "dt",
             "waypoints", "filter", "seed", "fallback", "engine",
             "euler_convention"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")

    out = {
        "model": _merge(MODEL_DEFAULTS, raw.get("model"), "model"),
        "barrier": _merge(BARRIER_DEFAULTS, raw.get("barrier"), "barrier"),
        "lqr": _merge(LQR_DEFAULTS, raw.get("lqr"), "lqr"),
    }
    init = raw.get("initial_state") or {"q": [0.0, 0.0, 0.4, 0.0, 0.0, 0.0],
                                        "qdot": [0.0] * 6}
    out["initial_state"] = {"q": [float(v) for v in init["q"]],
                            "qdot": [float(v) for v in init["qdot"]]}
    for key in ("duration", "dt"):
        out[key] = float(raw.get(key, TOP_DEFAULTS[key]))
    out["filter"] = str(raw.get("filter", TOP_DEFAULTS["filter"]))
    out["seed"] = int(raw.get("seed", TOP_DEFAULTS["seed"]))
    out["fallback"] = str(raw.get("fallback", TOP_DEFAULTS["fallback"]))
    out["engine"] = str(raw.get("engine", TOP_DEFAULTS["engine"]))
    if out["engine"] not in ("auto", "jit", "numpy"):
        raise ConfigError("engine must be one of ('auto', 'jit', 'numpy')")
    out["euler_convention"] = str(raw.get("euler_convention",
                                          TOP_DEFAULTS["euler_convention"]))
    if out["euler_convention"] != EULER_CONVENTION:
        raise ConfigError(f"unsupported euler_convention; expected {EULER_CONVENTION!r}")
    if out["filter"] not in FILTER_MODES:
        raise ConfigError(f"filter must be one of {FILTER_MODES}")

    waypoints = raw.get("waypoints")
    if waypoints is None:
        waypoints = [{"t_start": 0.0, "t_end": out["duration"],
                      "q_des": out["initial_state"]["q"]}]
    out["waypoints"] = [{
        "t_start": float(seg["t_start"]),
        "t_end": float(seg["t_end"]),
        "q_des": [float(v) for v in seg["q_des"]],
    } for seg in waypoints]

    def canon_bounds(vec):
        return [None if v is None else float(v) for v in vec]

    for key in ("q_max", "q_min", "qdot_max", "qdot_min"):
        out["barrier"][key] = canon_bounds(out["barrier"][key])
    for key in ("alpha_e", "alpha_D", "alpha_v", "beta"):
        out["barrier"][key] = float(out["barrier"][key])
    for key in ("alpha_Dj", "alpha_vk"):
        if out["barrier"][key] is not None:
            out["barrier"][key] = [float(v) for v in out["barrier"][key]]
    for key in ("q_pos", "q_vel", "r"):
        out["lqr"][key] = [float(v) for v in out["lqr"][key]]
    geo = out["model"]["geometry"]
    for key in geo:
        geo[key] = float(geo[key])
    out["model"]["mass"] = float(out["model"]["mass"])
    out["model"]["gravity"] = float(out["model"]["gravity"])
    out["model"]["inertia"] = [float(v) for v in out["model"]["inertia"]]
    return out


def scenario_from_dict(raw):
    """Build a validated ScenarioConfig from a (possibly partial) dict."""
    norm = normalize_config(raw)

    geo = norm["model"]["geometry"]
    geometry = symmetric_geometry(
        base_radius=geo["base_radius"], platform_radius=geo["platform_radius"],
        base_half_angle_deg=geo["base_half_angle_deg"],
        platform_half_angle_deg=geo["platform_half_angle_deg"])
    inertia_vec = norm["model"]["inertia"]
    inertia = InertiaParams(mass=norm["model"]["mass"],
                            body_inertia=np.diag(inertia_vec),
                            gravity=norm["model"]["gravity"])
    model = PlatformModel(geometry=geometry, inertia=inertia)

    bar = norm["barrier"]
    barrier = BarrierConfig(
        q_max=bar["q_max"], q_min=bar["q_min"],
        qdot_max=bar["qdot_max"], qdot_min=bar["qdot_min"],
        alpha_e=bar["alpha_e"], alpha_D=bar["alpha_D"], alpha_v=bar["alpha_v"],
        lse_beta=bar["beta"], alpha_Dj=bar["alpha_Dj"], alpha_vk=bar["alpha_vk"])

    lqr = LqrWeights.from_diagonal(norm["lqr"]["q_pos"], norm["lqr"]["q_vel"],
                                   norm["lqr"]["r"])
    initial = PlantState(norm["initial_state"]["q"], norm["initial_state"]["qdot"])
    schedule = [WaypointSegment(seg["t_start"], seg["t_end"], seg["q_des"])
                for seg in norm["waypoints"]]

    scenario = ScenarioConfig(
        initial_state=initial, duration=norm["duration"], dt=norm["dt"],
        waypoint_schedule=schedule, filter_mode=norm["filter"],
        barrier=barrier, lqr=lqr, model=model, rng_seed=norm["seed"],
        fallback=norm["fallback"], engine=norm["engine"])
    return scenario, norm


def load_config(path, overrides=None):
    """Load a scenario JSON file, apply CLI overrides, validate."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    if overrides:
        raw = {**raw, **{k: v for k, v in overrides.items() if v is not None}}
    return scenario_from_dict(raw)


def reference_scenario(**overrides):
    raw = reference_scenario_dict()
    raw.update(overrides)
    return scenario_from_dict(raw)
