"""TOML scene files.

Layout::

    [scene]          res, dx, gravity, frames, fps, cfl, transfer, kernel,
                     precision, deterministic, threads, clamp, two_pass, seed, name
    [walls]          kind = "sticky" | "slip" | "separate", thickness = 3
    [output]         snapshots, binary, every
    [materials.NAME] kind = "fixed_corotated" | "drucker_prager" | "j_fluid", parameters
    [[shapes]]       geometry = "box" | "sphere" | "cylinder", material, ppc,
                     velocity or profile, J, plus the geometry fields
    [[boundaries]]   kind, region = "halfspace" | "box", point/normal or lo/hi,
                     velocity, omega, center

Any length may be written as a fraction string such as ``"10/256"``.
"""

import sys
from fractions import Fraction
from pathlib import Path

from .dualgrid import BC_KINDS, BC_SHAPES, BoundaryCondition
from .errors import ConfigError, OutputError
from .materials import make_material
from .sim import Box, Cylinder, SceneConfig, Shape, Sphere

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

CONFIG_DIR = Path(__file__).parent / "configs"

_SCENE_KEYS = {"res", "dx", "gravity", "frames", "fps", "cfl", "transfer", "kernel", "precision",
               "deterministic", "threads", "clamp", "two_pass", "seed", "name"}


def _num(value, field):
    if isinstance(value, bool):
        raise ConfigError(field, f"expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        num, _, den = value.partition("/")
        try:
            if not den:
                return float(num)
            # Fraction keeps "10/256" exact; "2.5/256" goes through Fraction too
            return float(Fraction(num.strip()) / Fraction(den.strip()))
        except (ValueError, ZeroDivisionError):
            pass
    raise ConfigError(field, f"expected a number, got {value!r}")


def _vec(value, field, n=3):
    if isinstance(value, (int, float, str)) and not isinstance(value, bool):
        return (_num(value, field),) * n
    if not isinstance(value, (list, tuple)) or len(value) != n:
        raise ConfigError(field, f"expected {n} numbers, got {value!r}")
    return tuple(_num(v, f"{field}[{i}]") for i, v in enumerate(value))


def _int(value, field):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(field, f"expected an integer, got {value!r}")
    return value


def _check_keys(table, allowed, where):
    extra = set(table) - set(allowed)
    if extra:
        raise ConfigError(f"{where}.{sorted(extra)[0]}", "unknown key")


def _geometry(spec, where):
    kind = spec.get("geometry")
    if kind == "box":
        _check_keys(spec, _SHAPE_COMMON | {"lo", "hi"}, where)
        lo = _vec(spec.get("lo"), f"{where}.lo")
        hi = _vec(spec.get("hi"), f"{where}.hi")
        if any(a >= b for a, b in zip(lo, hi)):
            raise ConfigError(f"{where}.hi", "must exceed lo on every axis")
        return Box(lo, hi)
    if kind == "sphere":
        _check_keys(spec, _SHAPE_COMMON | {"center", "radius"}, where)
        r = _num(spec.get("radius"), f"{where}.radius")
        if not r > 0:
            raise ConfigError(f"{where}.radius", f"must be > 0, got {r}")
        return Sphere(_vec(spec.get("center"), f"{where}.center"), r)
    if kind == "cylinder":
        _check_keys(spec, _SHAPE_COMMON | {"center", "radius", "length", "axis", "inner_radius"}, where)
        r = _num(spec.get("radius"), f"{where}.radius")
        length = _num(spec.get("length"), f"{where}.length")
        inner = _num(spec.get("inner_radius", 0.0), f"{where}.inner_radius")
        axis = _int(spec.get("axis", 1), f"{where}.axis")
        if not r > 0 or not length > 0:
            raise ConfigError(f"{where}.radius", "radius and length must be > 0")
        if not 0 <= inner < r:
            raise ConfigError(f"{where}.inner_radius", "must be in [0, radius)")
        if axis not in (0, 1, 2):
            raise ConfigError(f"{where}.axis", "must be 0, 1 or 2")
        return Cylinder(_vec(spec.get("center"), f"{where}.center"), r, length, axis, inner)
    raise ConfigError(f"{where}.geometry", f"must be box, sphere or cylinder, got {kind!r}")


_SHAPE_COMMON = {"geometry", "material", "ppc", "velocity", "profile", "J"}


def _shape(spec, i):
    where = f"shapes[{i}]"
    if "material" not in spec:
        raise ConfigError(f"{where}.material", "missing")
    geom = _geometry(spec, where)
    profile = spec.get("profile")
    if profile is not None:
        if not isinstance(profile, dict):
            raise ConfigError(f"{where}.profile", "must be a table")
        _check_keys(profile, {"kind", "tip_speed", "axis", "direction"}, f"{where}.profile")
        profile = dict(profile)
        profile["tip_speed"] = _num(profile.get("tip_speed"), f"{where}.profile.tip_speed")
    return Shape(geom, str(spec["material"]), _int(spec.get("ppc", 8), f"{where}.ppc"),
                 _vec(spec.get("velocity", 0.0), f"{where}.velocity"), profile,
                 _num(spec.get("J", 1.0), f"{where}.J"))


def _material(name, spec):
    where = f"materials.{name}"
    spec = dict(spec)
    kind = spec.pop("kind", None)
    params = {}
    for k, v in spec.items():
        params[k] = _num(v, f"{where}.{k}")
    try:
        return make_material(kind, **params)
    except ConfigError as exc:
        if exc.field == "material.kind":
            field = f"{where}.kind"
        elif exc.field == "material":
            field = where
        else:
            field = f"{where}.{exc.field}"
        raise ConfigError(field, exc.message) from None


def _boundary(spec, i):
    where = f"boundaries[{i}]"
    _check_keys(spec, {"kind", "region", "point", "normal", "lo", "hi", "velocity", "omega",
                       "center"}, where)
    kind = spec.get("kind")
    if kind not in BC_KINDS:
        raise ConfigError(f"{where}.kind", f"must be one of {sorted(BC_KINDS)}, got {kind!r}")
    region = spec.get("region", "halfspace")
    if region not in BC_SHAPES:
        raise ConfigError(f"{where}.region", f"must be one of {sorted(BC_SHAPES)}")
    kw = {k: _vec(spec[k], f"{where}.{k}") for k in
          ("point", "normal", "lo", "hi", "velocity", "omega", "center") if k in spec}
    try:
        return BoundaryCondition(kind, region, **kw)
    except ValueError as exc:
        raise ConfigError(where, str(exc)) from None


def parse_config(data):
    """Build a validated ``SceneConfig`` from a parsed TOML mapping."""
    _check_keys(data, {"scene", "walls", "output", "materials", "shapes", "boundaries"}, "config")
    scene = dict(data.get("scene", {}))
    _check_keys(scene, _SCENE_KEYS, "scene")
    if "res" not in scene or "dx" not in scene:
        raise ConfigError("scene.res" if "res" not in scene else "scene.dx", "missing")
    res = scene["res"]
    res = (res,) * 3 if isinstance(res, int) and not isinstance(res, bool) else res
    if not isinstance(res, (list, tuple)) or len(res) != 3:
        raise ConfigError("scene.res", f"expected an integer or 3 integers, got {scene['res']!r}")
    kw = dict(
        res=tuple(_int(r, f"scene.res[{i}]") for i, r in enumerate(res)),
        dx=_num(scene["dx"], "scene.dx"),
        gravity=_vec(scene.get("gravity", 0.0), "scene.gravity"),
        frames=_int(scene.get("frames", 1), "scene.frames"),
        fps=_num(scene.get("fps", 24), "scene.fps"),
        cfl=_num(scene.get("cfl", 0.5), "scene.cfl"),
        transfer=str(scene.get("transfer", "pic")),
        kernel=str(scene.get("kernel", "compact")),
        precision=str(scene.get("precision", "double")),
        deterministic=bool(scene.get("deterministic", True)),
        threads=_int(scene.get("threads", 1), "scene.threads"),
        clamp=bool(scene.get("clamp", False)),
        two_pass=bool(scene.get("two_pass", False)),
        seed=_int(scene.get("seed", 0), "scene.seed"),
        name=str(scene.get("name", "scene")),
    )
    mats = data.get("materials", {})
    if not isinstance(mats, dict):
        raise ConfigError("materials", "must be a table of named materials")
    kw["materials"] = {name: _material(name, spec) for name, spec in mats.items()}
    kw["shapes"] = [_shape(s, i) for i, s in enumerate(data.get("shapes", []))]
    kw["boundaries"] = [_boundary(b, i) for i, b in enumerate(data.get("boundaries", []))]
    walls = data.get("walls")
    if walls is not None:
        _check_keys(walls, {"kind", "thickness"}, "walls")
        if walls.get("kind") not in BC_KINDS:
            raise ConfigError("walls.kind", f"must be one of {sorted(BC_KINDS)}")
        kw["walls"] = walls["kind"]
        kw["wall_thickness"] = _int(walls.get("thickness", 3), "walls.thickness")
    out = data.get("output", {})
    _check_keys(out, {"snapshots", "binary", "every"}, "output")
    kw["snapshots"] = bool(out.get("snapshots", True))
    kw["binary"] = bool(out.get("binary", False))
    kw["snapshot_every"] = _int(out.get("every", 1), "output.every")
    if kw["snapshot_every"] < 1:
        raise ConfigError("output.every", "must be >= 1")
    return SceneConfig(**kw).validate()


def loads(text):
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("toml", str(exc)) from None
    return parse_config(data)


def load_config(path):
    """Read a scene file; bare names resolve against the bundled configs."""
    p = Path(path)
    if not p.exists() and not p.suffix:
        bundled = CONFIG_DIR / f"{p.name}.toml"
        if bundled.exists():
            p = bundled
    try:
        text = p.read_text()
    except OSError as exc:
        raise OutputError(f"cannot read config {path}: {exc}") from exc
    return loads(text)


def bundled_configs():
    return sorted(f.stem for f in CONFIG_DIR.glob("*.toml"))
