"""Problem statement: geometry spec, physical parameters and discretisation.

Dimensional scenes of length L are run in the unit-length frame. Rescaling
``s -> s/L`` and ``a -> a/L`` leaves the equation unchanged provided
``eta -> eta L^2`` and ``omega -> omega L``; ``eps`` is unchanged.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from functools import cached_property

import numpy as np

from .geometry import RadiusProfile, VesselGeometry, build_centerline

MAX_EPS = 0.1


class SceneError(ValueError):
    pass


def make_radius(spec):
    family = spec.get("family", "hemisphere")
    if family == "hemisphere":
        return RadiusProfile.hemisphere(delta=float(spec.get("delta", 0.1)))
    if family == "constant":
        return RadiusProfile.constant(float(spec.get("value", 1.0)))
    raise SceneError(f"unknown radius family {family!r}")


@dataclass(frozen=True)
class VesselScene:
    name: str
    curve: dict
    radius: dict = field(default_factory=lambda: {"family": "hemisphere"})
    eps: float = 0.01
    eta: float = 0.05
    omega: float = 10.0
    p0: float = 1.0
    length: float = 1.0
    nodes: int = 400
    gamma: float = 2.0
    base_refine: float = 0.0
    theta_order: int = 0
    samples: int = 2049
    e1: tuple = (1.0, 0.0, 0.0)

    def __post_init__(self):
        if not (0 < self.eps <= MAX_EPS):
            raise SceneError(f"eps must lie in (0, {MAX_EPS}], got {self.eps}")
        if self.eta <= 0 or self.omega < 0 or self.length <= 0:
            raise SceneError("eta and length must be positive, omega nonnegative")
        if self.nodes < 16:
            raise SceneError("nodes must be >= 16")
        if self.gamma < 1:
            raise SceneError("gamma must be >= 1")
        if not 0.0 <= self.base_refine < 1.0:
            raise SceneError("base_refine must lie in [0, 1)")

    @property
    def eta_unit(self):
        return self.eta * self.length**2

    @property
    def omega_unit(self):
        return self.omega * self.length

    @cached_property
    def centerline(self):
        return build_centerline(self.curve, samples=self.samples, e1_initial=np.asarray(self.e1), check=False)

    @cached_property
    def radius_profile(self):
        return make_radius(self.radius)

    @cached_property
    def geometry(self):
        return VesselGeometry(self.centerline, self.radius_profile, float(self.eps))

    def with_(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        d = asdict(self)
        d["e1"] = list(self.e1)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known - {"outputs"}
        if unknown:
            raise SceneError(f"unknown scene keys: {sorted(unknown)}")
        if "curve" not in d or "name" not in d:
            raise SceneError("scene needs 'name' and 'curve'")
        kw = {k: v for k, v in d.items() if k in known}
        if "e1" in kw:
            kw["e1"] = tuple(float(v) for v in kw["e1"])
        try:
            return cls(**kw)
        except TypeError as exc:
            raise SceneError(str(exc)) from exc

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def physics_hash(self):
        """Hash of geometry and physical parameters; excludes p0 and discretisation."""
        key = {k: self.to_dict()[k] for k in ("curve", "radius", "eps", "eta", "omega", "length", "e1")}
        blob = json.dumps(key, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Built-in library
# ---------------------------------------------------------------------------

TEST_LENGTH = 4.7426
SLICE_LENGTH = 4.5213
VESSEL_LENGTHS = {"vessel_a": 6.4708, "vessel_b": 7.1502, "vessel_c": 11.6179}

_CURVES = {
    "straight": {"family": "straight"},
    "near_loop": {"family": "turning", "turn": 1.3 * np.pi, "start": 0.15, "end": 1.0},
    "planar": {"family": "turning", "turn": 0.5 * np.pi, "start": 0.2, "end": 0.8},
    "vessel_a": {"family": "angles", "psi": [0.0, 0.0, 1.2], "chi": [0.0, 2.0]},
    "vessel_b": {
        "family": "spline",
        "points": [[0, 0, 0], [0, 0, 1.0], [0.4, 0.3, 1.9], [1.2, 0.5, 2.5], [1.9, 0.1, 3.2], [2.3, -0.6, 3.9]],
    },
    "vessel_c": {"family": "angles", "psi": [0.0, 0.0, 2.5, -1.2], "chi": [0.0, 3.0, -1.0]},
}

_LENGTHS = {"straight": TEST_LENGTH, "near_loop": TEST_LENGTH, "planar": SLICE_LENGTH, **VESSEL_LENGTHS}


def builtin_names():
    return list(_CURVES)


def builtin(name, **overrides):
    if name not in _CURVES:
        raise SceneError(f"unknown built-in scene {name!r}; choose from {builtin_names()}")
    base = dict(name=name, curve=dict(_CURVES[name]), length=_LENGTHS[name])
    base.update(overrides)
    return VesselScene(**base)


def resolve(ref):
    """A built-in name or a path to a JSON scene file."""
    if ref in _CURVES:
        return builtin(ref)
    try:
        return VesselScene.load(ref)
    except FileNotFoundError as exc:
        raise SceneError(f"scene {ref!r} is neither built-in nor a readable file") from exc
    except json.JSONDecodeError as exc:
        raise SceneError(f"scene file {ref!r} is not valid JSON: {exc}") from exc
