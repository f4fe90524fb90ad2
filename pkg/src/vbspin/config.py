"""Run configuration: TOML files whose physical keys carry unit suffixes.

Every key is checked against a fixed schema. Unknown keys, keys missing
their unit suffix and keys with an unsupported unit are hard errors that
name the key and, when it can be located, its line in the file.
"""

from __future__ import annotations

import math
import re
import sys
from dataclasses import dataclass, field
from importlib import resources

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .bath import BathError, BathParams, LatticeSpec, areal_density, volumetric_density
from .optics import Layer, LayerStack, OpticsError, hbn_stack
from .spectrum import BroadeningSpec, SpectrumError, check_grid, default_grid
from .spin import HamiltonianParams

PRESETS = ("bulk", "flake2", "flake3")


class ConfigError(ValueError):
    def __init__(self, message, key=None, line=None, source=None):
        self.key, self.line, self.source = key, line, source
        where = ""
        if source or line:
            where = f"{source or '<config>'}" + (f":{line}" if line else "") + ": "
        super().__init__(where + message)


# section -> key -> python type; the unit is part of the key
SCHEMA = {
    "": {"seed": int},
    "spin": {
        "D_MHz": float, "d_perp_Hz_per_V_cm": float, "d_par_Hz_per_V_cm": float,
        "A_zz_MHz": float, "n_nuclei": int, "drive": str,
    },
    "bath": {
        "rho_c_per_nm3": float, "rho_c_per_nm2": float, "radius_nm": float,
        "geometry": str, "thickness_nm": float, "epsilon_r": float,
        "density_convention": str, "count_mode": str,
        "lattice_constant_nm": float, "interlayer_spacing_nm": float,
    },
    "broadening": {"profile": str, "fwhm_MHz": float},
    "grid": {"start_MHz": float, "stop_MHz": float, "step_MHz": float},
    "simulate": {"n_configs": int, "contrast": float},
    "fit": {
        "n_configs": int, "rho_c_min_per_nm3": float, "rho_c_max_per_nm3": float,
        "contrast_min": float, "contrast_max": float, "n_refits": int, "n_coarse": int,
        "float_baseline": bool, "maxiter": int,
    },
    "optics": {
        "wavelength_nm": float, "dz_nm": float, "t_min_nm": float, "t_max_nm": float,
        "t_step_nm": float, "sweep_layer": int, "profiles": bool, "layers": list,
    },
    "t1": {"t1_total_us": float, "t1_phonon_us": float},
}
LAYER_SCHEMA = {"name": str, "thickness_nm": float, "n_real": float, "n_imag": float}

_UNIT_SUFFIX = re.compile(r"_(MHz|Hz_per_V_cm|nm|nm2|nm3|per_nm2|per_nm3|us)$")


def _bare(key):
    return _UNIT_SUFFIX.sub("", key)


def _locate(text, section, key):
    """1-based line of ``key`` inside ``[section]`` (best effort)."""
    if text is None:
        return None
    pat = re.compile(r"(^|[{,\s])" + re.escape(key) + r"\s*=")
    current = ""
    fallback = None
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        head = re.match(r"^\[\[?\s*([^\]]+?)\s*\]\]?$", line)
        if head:
            current = head.group(1)
            continue
        if pat.search(line):
            if current == section or current.startswith(section + "."):
                return i
            fallback = fallback or i
    return fallback


def _check_keys(table, schema, section, text, source):
    for key, value in table.items():
        label = f"{section}.{key}" if section else key
        if key not in schema:
            line = _locate(text, section, key)
            matches = [k for k in schema if _bare(k) != k
                       and (key == _bare(k) or key.startswith(_bare(k) + "_"))]
            if matches and key == _bare(matches[0]):
                raise ConfigError(f"key {label!r} is missing its unit suffix; use {matches[0]!r}",
                                  label, line, source)
            if matches:
                raise ConfigError(f"key {label!r} has an unsupported unit; use {matches[0]!r}",
                                  label, line, source)
            raise ConfigError(f"unknown key {label!r}", label, line, source)
        want = schema[key]
        ok = isinstance(value, want) and not (want is int and isinstance(value, bool))
        if want is float and isinstance(value, int) and not isinstance(value, bool):
            ok = True
        if not ok:
            raise ConfigError(f"key {label!r} must be {want.__name__}, got {type(value).__name__}",
                              label, _locate(text, section, key), source)


@dataclass
class FitOptions:
    n_configs: int = 10_000
    rho_bounds: tuple = (0.0, 0.15)
    contrast_bounds: tuple = (0.0, 1.0)
    n_refits: int = 15
    n_coarse: int = 9
    float_baseline: bool = False
    maxiter: int = 400


@dataclass
class OpticsOptions:
    stack: LayerStack = field(default_factory=lambda: hbn_stack(20.0))
    t_min: float = 20.0
    t_max: float = 400.0
    t_step: float = 1.0
    sweep_layer: int = 1
    profiles: bool = False


@dataclass
class RunConfig:
    seed: int = 0
    spin: HamiltonianParams = field(default_factory=HamiltonianParams)
    bath: BathParams = field(default_factory=BathParams)
    lattice: LatticeSpec = field(default_factory=LatticeSpec)
    broadening: BroadeningSpec = field(default_factory=BroadeningSpec)
    grid: tuple = (3000.0, 3900.0, 1.0)
    n_configs: int = 10_000
    contrast: float = 0.06
    fit: FitOptions = field(default_factory=FitOptions)
    optics: OpticsOptions = field(default_factory=OpticsOptions)
    t1_total: float | None = None
    t1_phonon: float | None = None
    text: str | None = None
    source: str | None = None

    def grid_array(self):
        return default_grid(*self.grid)


def _get(tab, key, default):
    return tab.get(key, default)


def _build(data, text, source):
    def err(msg, section, key):
        label = f"{section}.{key}" if section else key
        return ConfigError(msg, label, _locate(text, section, key), source)

    for name, value in data.items():
        if name in SCHEMA and name != "" and not isinstance(value, dict):
            raise err(f"{name!r} must be a table", "", name)
    top = {k: v for k, v in data.items() if not isinstance(v, dict)}
    _check_keys(top, SCHEMA[""], "", text, source)
    for name, value in data.items():
        if isinstance(value, dict):
            if name not in SCHEMA:
                raise ConfigError(f"unknown section [{name}]", name, _locate_section(text, name),
                                  source)
            _check_keys(value, SCHEMA[name], name, text, source)

    cfg = RunConfig(text=text, source=source)
    cfg.seed = int(data.get("seed", 0))
    if cfg.seed < 0:
        raise err("seed must be >= 0", "", "seed")

    sp = data.get("spin", {})
    d = HamiltonianParams()
    try:
        cfg.spin = HamiltonianParams(
            D=_get(sp, "D_MHz", d.D), d_perp=_get(sp, "d_perp_Hz_per_V_cm", d.d_perp),
            d_par=_get(sp, "d_par_Hz_per_V_cm", d.d_par), A_zz=_get(sp, "A_zz_MHz", d.A_zz),
            n_nuclei=_get(sp, "n_nuclei", d.n_nuclei), drive=_get(sp, "drive", d.drive))
    except ValueError as exc:
        raise ConfigError(f"[spin]: {exc}", "spin", _locate_section(text, "spin"), source) from None

    b = data.get("bath", {})
    try:
        cfg.lattice = LatticeSpec(_get(b, "lattice_constant_nm", 0.2504),
                                  _get(b, "interlayer_spacing_nm", 0.33))
        geometry = _get(b, "geometry", "bulk-sphere")
        if "rho_c_per_nm3" in b and "rho_c_per_nm2" in b:
            raise err("give rho_c in one unit only", "bath", "rho_c_per_nm2")
        if geometry == "monolayer":
            rho = b["rho_c_per_nm2"] if "rho_c_per_nm2" in b else areal_density(
                _get(b, "rho_c_per_nm3", 0.054), cfg.lattice)
        else:
            rho = volumetric_density(b["rho_c_per_nm2"], cfg.lattice) if "rho_c_per_nm2" in b \
                else _get(b, "rho_c_per_nm3", 0.054)
        cfg.bath = BathParams(
            rho_c=float(rho), radius=_get(b, "radius_nm", 10.0), geometry=geometry,
            thickness=b.get("thickness_nm"), epsilon_r=_get(b, "epsilon_r", 3.4),
            seed=cfg.seed, density_convention=_get(b, "density_convention", "combined"),
            count_mode=_get(b, "count_mode", "poisson"))
    except (BathError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"[bath]: {exc}", "bath", _locate_section(text, "bath"), source) from None

    br = data.get("broadening", {})
    try:
        cfg.broadening = BroadeningSpec(_get(br, "profile", "lorentzian"),
                                        _get(br, "fwhm_MHz", 40.0))
    except SpectrumError as exc:
        raise ConfigError(f"[broadening]: {exc}", "broadening",
                          _locate_section(text, "broadening"), source) from None

    g = data.get("grid", {})
    cfg.grid = (float(_get(g, "start_MHz", 3000.0)), float(_get(g, "stop_MHz", 3900.0)),
                float(_get(g, "step_MHz", 1.0)))
    if not cfg.grid[2] > 0 or cfg.grid[1] <= cfg.grid[0]:
        raise ConfigError("[grid]: need step_MHz > 0 and stop_MHz > start_MHz", "grid",
                          _locate_section(text, "grid"), source)
    try:
        check_grid(cfg.grid_array())
    except SpectrumError as exc:
        raise ConfigError(f"[grid]: {exc}", "grid", _locate_section(text, "grid"), source) from None

    s = data.get("simulate", {})
    cfg.n_configs = int(_get(s, "n_configs", 10_000))
    cfg.contrast = float(_get(s, "contrast", 0.06))
    if cfg.n_configs < 1:
        raise err("n_configs must be >= 1", "simulate", "n_configs")
    if not 0 <= cfg.contrast <= 1:
        raise err("contrast must lie in [0, 1]", "simulate", "contrast")

    f = data.get("fit", {})
    fo = FitOptions()
    cfg.fit = FitOptions(
        n_configs=int(_get(f, "n_configs", fo.n_configs)),
        rho_bounds=(float(_get(f, "rho_c_min_per_nm3", 0.0)),
                    float(_get(f, "rho_c_max_per_nm3", 0.15))),
        contrast_bounds=(float(_get(f, "contrast_min", 0.0)), float(_get(f, "contrast_max", 1.0))),
        n_refits=int(_get(f, "n_refits", fo.n_refits)), n_coarse=int(_get(f, "n_coarse", fo.n_coarse)),
        float_baseline=bool(_get(f, "float_baseline", False)),
        maxiter=int(_get(f, "maxiter", fo.maxiter)))
    lo, hi = cfg.fit.rho_bounds
    if not 0 <= lo < hi:
        raise err("need 0 <= rho_c_min_per_nm3 < rho_c_max_per_nm3", "fit", "rho_c_max_per_nm3")
    clo, chi = cfg.fit.contrast_bounds
    if not 0 <= clo < chi <= 1:
        raise err("need 0 <= contrast_min < contrast_max <= 1", "fit", "contrast_max")
    for key in ("n_configs", "n_refits", "maxiter"):
        if getattr(cfg.fit, key) < 1:
            raise err(f"{key} must be >= 1", "fit", key)
    if cfg.fit.n_coarse < 2:
        raise err("n_coarse must be >= 2", "fit", "n_coarse")

    cfg.optics = _build_optics(data.get("optics", {}), text, source)

    t = data.get("t1", {})
    cfg.t1_total = t.get("t1_total_us")
    cfg.t1_phonon = t.get("t1_phonon_us")
    return cfg


def _locate_section(text, section):
    if text is None:
        return None
    for i, raw in enumerate(text.splitlines(), 1):
        if re.match(r"^\s*\[\[?\s*" + re.escape(section) + r"[\].]", raw):
            return i
    return None


def _build_optics(o, text, source):
    def err(msg, key):
        return ConfigError(msg, f"optics.{key}", _locate(text, "optics", key), source)

    wavelength = float(o.get("wavelength_nm", 532.0))
    dz = float(o.get("dz_nm", 2.0))
    t_min = float(o.get("t_min_nm", 20.0))
    t_max = float(o.get("t_max_nm", 400.0))
    t_step = float(o.get("t_step_nm", 1.0))
    if not (0 < t_min <= t_max) or not t_step > 0:
        raise err("need 0 < t_min_nm <= t_max_nm and t_step_nm > 0", "t_min_nm")
    try:
        if "layers" in o:
            layers = []
            for entry in o["layers"]:
                if not isinstance(entry, dict):
                    raise err("each layer must be a table", "layers")
                _check_keys(entry, LAYER_SCHEMA, "optics.layers", text, source)
                for need in ("thickness_nm", "n_real"):
                    if need not in entry:
                        raise err(f"layer is missing {need!r}", "layers")
                thick = float(entry["thickness_nm"])
                if math.isnan(thick):
                    raise err("layer thickness is NaN", "thickness_nm")
                layers.append(Layer(thick, complex(entry["n_real"], entry.get("n_imag", 0.0)),
                                    entry.get("name", "")))
            stack = LayerStack(layers, wavelength, dz)
        else:
            stack = hbn_stack(t_min, wavelength=wavelength, dz=dz)
    except OpticsError as exc:
        raise ConfigError(f"[optics]: {exc}", "optics", _locate_section(text, "optics"),
                          source) from None
    layer = int(o.get("sweep_layer", 1))
    if not 1 <= layer <= len(stack.layers) - 2:
        raise err("sweep_layer must index a finite layer", "sweep_layer")
    return OpticsOptions(stack, t_min, t_max, t_step, layer, bool(o.get("profiles", False)))


def parse_config(text, source=None):
    """Parse TOML ``text`` into a :class:`RunConfig`; raises :class:`ConfigError`."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"TOML syntax error: {exc}", line=int(m.group(1)) if m else None,
                          source=source) from None
    return _build(data, text, source)


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", source=str(path)) from None
    return parse_config(text, str(path))


def preset_text(name):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")
    return resources.files("vbspin.presets").joinpath(f"{name}.toml").read_text(encoding="utf-8")


def load_preset(name):
    return parse_config(preset_text(name), f"preset:{name}")
