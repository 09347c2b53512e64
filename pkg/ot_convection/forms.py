"""
Experiment configuration: INI files with one section per subcommand, validated by one Django form per subcommand.

    [aht]
    domain = box
    n = 64
    K = identity
    preset = darcy
    T = 30
    dt = 0.01

Every key is a declared form field; help_text documents it and initial holds its default. Unknown keys and every
invalid value are reported together in one ConfigError.
"""

import configparser
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Type

import numpy as np
from django import forms

from ot_convection.errors import ConfigError
from ot_convection.forcing import FORCING_KINDS, SPRING_MODELS
from ot_convection.ghb import ANCHORS, GHB_KINDS
from ot_convection.presets import (
    AHT_PRESETS, CARRIER_PROFILES, CLOUD_PRESETS, DENSITY_PROFILES, GNSB_PRESETS
)

SUBCOMMANDS = ("rearrange", "aht", "jko", "gnsb", "hf", "ghb", "crossburgers", "sweep")

_TRUE = ("1", "true", "yes", "on")
_FALSE = ("0", "false", "no", "off")


def _choices(values) -> List[tuple]:
    return [(value, value) for value in values]


def _power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


class SwitchField(forms.Field):
    def to_python(self, value):
        if isinstance(value, bool) or value is None:
            return value
        text = str(value).strip().lower()
        if text in _TRUE:
            return True
        if text in _FALSE or text == "":
            return False
        raise forms.ValidationError(f"expected one of {_TRUE + _FALSE}, got {value!r}")


class FloatListField(forms.Field):
    """ Comma separated floats. """

    def to_python(self, value):
        if value in (None, ""):
            return []
        if isinstance(value, (list, tuple)):
            return [float(v) for v in value]
        try:
            return [float(item) for item in str(value).split(",") if item.strip()]
        except ValueError:
            raise forms.ValidationError(f"expected comma separated numbers, got {value!r}")


class MatrixField(forms.Field):
    """ Rows separated by ';', entries by ','. Cleans to nested tuples; a vector field to a flat tuple. """

    def __init__(self, *args, vector: bool = False, **kwargs):
        self.vector = vector
        super().__init__(*args, **kwargs)

    def to_python(self, value):
        if isinstance(value, (np.ndarray, list, tuple)):
            array = np.asarray(value, dtype=float)
            return tuple(array.tolist()) if array.ndim == 1 else tuple(tuple(row) for row in array.tolist())
        if value is None or str(value).strip() == "":
            return None
        try:
            rows = [[float(item) for item in row.split(",")] for row in str(value).split(";") if row.strip()]
        except ValueError:
            raise forms.ValidationError(f"expected rows like '1,0;0,1', got {value!r}")
        if len({len(row) for row in rows}) != 1:
            raise forms.ValidationError("rows must all have the same length")
        if self.vector:
            if len(rows) != 1:
                raise forms.ValidationError("expected a single row")
            return tuple(rows[0])
        return tuple(tuple(row) for row in rows)


class ExperimentForm(forms.Form):
    subcommand: str = ""

    seed = forms.IntegerField(initial=0, min_value=0, required=False, help_text="Seed of the LCG used by every preset")
    output = forms.CharField(initial="", required=False,
                             help_text="Output directory (default: <DEFAULT_OUTPUT_ROOT>/<subcommand>-<seed>)")
    stride = forms.IntegerField(initial=0, min_value=0, required=False,
                                help_text="Write a snapshot every stride steps (0 disables snapshots)")

    def _require_torus_size(self, cleaned: Dict[str, Any]):
        n = cleaned.get("n")
        if cleaned.get("domain", "torus") == "torus" and n is not None and (n < 8 or not _power_of_two(n)):
            self.add_error("n", "torus grids need a power of two >= 8")


class GridForm(ExperimentForm):
    domain = forms.ChoiceField(choices=_choices(("torus", "box")), initial="torus", required=False,
                               help_text="torus (periodic, spectral) or box (unit square, K=identity only)")
    n = forms.IntegerField(min_value=1, help_text="Points per axis")
    d = forms.TypedChoiceField(choices=_choices(("1", "2")), coerce=int, initial="2", required=False,
                               help_text="Dimension, 1 or 2")
    T = forms.FloatField(min_value=0.0, help_text="Final time")
    dt = forms.FloatField(min_value=0.0, help_text="Time step (> 0)")

    def clean(self):
        cleaned = super().clean()
        self._require_torus_size(cleaned)
        if cleaned.get("dt") is not None and cleaned["dt"] <= 0.0:
            self.add_error("dt", "dt must be positive")
        if cleaned.get("domain") == "box" and cleaned.get("K") == "neg_laplacian":
            self.add_error("K", "box runs support K=identity only (K=neg_laplacian needs the torus)")
        return cleaned


class CloudForm(ExperimentForm):
    n = forms.IntegerField(min_value=1, help_text="Atoms per axis; N = n^d atoms at the cell centers of [0,1]^d")
    d = forms.TypedChoiceField(choices=_choices(("1", "2")), coerce=int, initial="2", required=False,
                               help_text="Dimension, 1 or 2")
    preset = forms.ChoiceField(choices=_choices(CLOUD_PRESETS), initial="uniform_random", required=False,
                               help_text=f"Value cloud preset: {', '.join(CLOUD_PRESETS)}")
    amplitude = forms.FloatField(initial=1.0, required=False, help_text="Preset amplitude")
    method = forms.ChoiceField(choices=_choices(("auto", "sort", "exact", "auction")), initial="auto",
                               required=False, help_text="Assignment solver (auto: sort in 1D, exact up to the cap)")


class RearrangeConfigForm(CloudForm):
    subcommand = "rearrange"

    trials = forms.IntegerField(initial=1000, min_value=0, required=False,
                                help_text="Random cycles sampled by the monotonicity certificate")
    cycle_len = forms.IntegerField(initial=4, min_value=2, required=False, help_text="Longest sampled cycle")
    tol = forms.FloatField(initial=1e-10, min_value=0.0, required=False, help_text="Monotonicity tolerance")


class JKOConfigForm(CloudForm):
    subcommand = "jko"

    h = forms.FloatField(help_text="Minimizing-movement step (> 0)")
    steps = forms.IntegerField(min_value=1, help_text="Number of minimizing-movement steps")

    def clean(self):
        cleaned = super().clean()
        if cleaned.get("h") is not None and cleaned["h"] <= 0.0:
            self.add_error("h", "h must be positive")
        return cleaned


class AHTConfigForm(GridForm):
    subcommand = "aht"

    K = forms.ChoiceField(choices=_choices(("identity", "neg_laplacian")), initial="identity", required=False,
                          help_text="Dissipation operator (strictly dissipative)")
    preset = forms.ChoiceField(choices=_choices(AHT_PRESETS), initial="random_smooth", required=False,
                               help_text=f"Initial y preset: {', '.join(AHT_PRESETS)}")
    amplitude = forms.FloatField(initial=0.5, required=False, help_text="Preset amplitude (g folded in for darcy)")
    scheme = forms.ChoiceField(choices=_choices(("euler", "midpoint")), initial="euler", required=False,
                               help_text="euler (first order) or midpoint")
    balance_constant = forms.FloatField(initial=10.0, min_value=0.0, required=False,
                                        help_text="C in the energy balance tolerance C (h^2 + dt)(1 + max|y0|^2)")
    monotone_rtol = forms.FloatField(required=False, min_value=0.0,
                                     help_text="Check transport_cost non-increasing within this relative slack")

    def clean(self):
        cleaned = super().clean()
        preset = cleaned.get("preset")
        if preset == "darcy" and cleaned.get("d") not in (None, 2):
            self.add_error("preset", "the darcy preset needs d=2")
        if preset == "gradient" and cleaned.get("domain") == "box":
            self.add_error("preset", "the gradient preset is built spectrally and needs the torus")
        return cleaned


class _ForcingFields(forms.Form):
    forcing = forms.ChoiceField(choices=_choices(FORCING_KINDS), initial="hookean", required=False,
                                help_text=f"Forcing: {', '.join(FORCING_KINDS)}")
    kappa = forms.FloatField(initial=1.0, required=False, help_text="Spring stiffness (> 0)")
    density = forms.ChoiceField(choices=_choices(DENSITY_PROFILES), initial="uniform", required=False,
                                help_text="lambda(a) profile for the spring models")
    density_delta = forms.FloatField(initial=0.5, required=False, help_text="Amplitude of the cosine lambda profile")
    friction = forms.ChoiceField(choices=_choices(DENSITY_PROFILES), initial="uniform", required=False,
                                 help_text="mu(a) profile for the spring models")
    friction_delta = forms.FloatField(initial=0.5, required=False, help_text="Amplitude of the cosine mu profile")
    carrier = forms.ChoiceField(choices=_choices(CARRIER_PROFILES), initial="zero", required=False,
                                help_text="Carrier velocity W(a) for model1")
    carrier_speed = forms.FloatField(initial=0.1, required=False, help_text="Carrier speed")
    clip_radius = forms.FloatField(required=False, help_text="Elongation clipping radius (default 10 diameters)")
    f_matrix = MatrixField(required=False, help_text="custom: A_F (d x m), rows ';' entries ','")
    f_offset = MatrixField(required=False, vector=True, help_text="custom: b_F (d)")
    g_matrix = MatrixField(required=False, help_text="custom: A_G (m x m)")
    g_offset = MatrixField(required=False, vector=True, help_text="custom: b_G (m)")
    preset = forms.ChoiceField(choices=_choices(GNSB_PRESETS), initial="anchored", required=False,
                               help_text=f"Initial y preset: {', '.join(GNSB_PRESETS)}")
    amplitude = forms.FloatField(initial=0.1, required=False, help_text="Preset amplitude")
    mean_mode_damping = SwitchField(initial=False, required=False,
                                    help_text="Zero the mean (and pure Nyquist) velocity modes on the torus")
    energy_constant = forms.FloatField(initial=10.0, min_value=0.0, required=False,
                                       help_text="C in the energy tolerance C (h^2 + dt)(1 + E0)")


def _clean_forcing(form: forms.Form, cleaned: Dict[str, Any]):
    kind = cleaned.get("forcing")
    d = cleaned.get("d")
    if kind == "model3" and d is not None and d != 2:
        form.add_error("forcing", "model3 applies J = rotation by pi/2 and needs d=2")
    if cleaned.get("carrier") == "swirl" and d is not None and d != 2:
        form.add_error("carrier", "swirl carriers need d=2")
    if cleaned.get("kappa") is not None and cleaned["kappa"] <= 0.0:
        form.add_error("kappa", "kappa must be positive")
    for key in ("density_delta", "friction_delta"):
        if cleaned.get(key) is not None and not 0.0 <= cleaned[key] <= 1.0:
            form.add_error(key, "cosine density amplitude must lie in [0, 1]")
    if kind == "custom" and cleaned.get("g_matrix") is None:
        form.add_error("g_matrix", "custom forcing needs g_matrix")
    if d is None or kind is None:
        return
    if kind == "custom":
        g_matrix = cleaned.get("g_matrix")
        m = len(g_matrix) if g_matrix else None
    else:
        m = 2 * d if kind in SPRING_MODELS else d
    preset = cleaned.get("preset")
    if preset == "buoyant" and m is not None and m != d:
        form.add_error("preset", f"the buoyant preset carries m = d components; {kind} forcing has m = {m}")
    if preset == "anchored" and m is not None and m not in (d, 2 * d):
        form.add_error("preset", f"the anchored preset needs m = d or 2d; {kind} forcing has m = {m}")
    if kind == "custom" and m is not None and m not in (d, 2 * d):
        form.add_error("g_matrix", f"y carries m = d or 2d components, got m = {m}")


class HFConfigForm(GridForm, _ForcingFields):
    subcommand = "hf"

    K = forms.ChoiceField(choices=_choices(("identity", "neg_laplacian")), initial="identity", required=False,
                          help_text="Dissipation operator (strictly dissipative)")

    def clean(self):
        cleaned = super().clean()
        _clean_forcing(self, cleaned)
        return cleaned


class GNSBConfigForm(HFConfigForm):
    subcommand = "gnsb"

    K = forms.ChoiceField(choices=_choices(("identity", "neg_laplacian", "none")), initial="identity",
                          required=False, help_text="Dissipation operator")
    eps = forms.FloatField(help_text="Inertia scale (> 0)")
    splitting = forms.ChoiceField(choices=_choices(("lie", "strang")), initial="lie", required=False,
                                  help_text="lie (first order) or strang")

    def clean(self):
        cleaned = super().clean()
        if cleaned.get("eps") is not None and cleaned["eps"] <= 0.0:
            self.add_error("eps", "eps must be positive; use the hf subcommand for the eps = 0 limit")
        return cleaned


class SweepConfigForm(HFConfigForm):
    subcommand = "sweep"

    eps_list = FloatListField(initial="1e-1,1e-2,1e-3,1e-4", required=False, help_text="Comma separated eps values")
    slope_min = forms.FloatField(initial=0.35, required=False,
                                 help_text="Lower bound on both error slopes (empty: unbounded)")
    slope_max = forms.FloatField(initial=0.65, required=False,
                                 help_text="Upper bound on the velocity-error slope (empty: unbounded)")

    def clean(self):
        cleaned = super().clean()
        eps_list = cleaned.get("eps_list")
        if eps_list is not None:
            if len(eps_list) < 2:
                self.add_error("eps_list", "a rate needs at least two eps values")
            elif any(eps <= 0.0 for eps in eps_list):
                self.add_error("eps_list", "every eps must be positive (eps = 0 is the reference itself)")
        return cleaned


class GHBConfigForm(CloudForm):
    subcommand = "ghb"

    forcing = forms.ChoiceField(choices=_choices(GHB_KINDS[:-1]), initial="rotate", required=False,
                                help_text="G preset: zero, contract, expand, rotate (d=2)")
    kappa = forms.FloatField(initial=1.0, required=False, help_text="Strength of G (> 0)")
    anchor = forms.ChoiceField(choices=_choices(ANCHORS), initial="atoms", required=False,
                               help_text="atoms: G uses a; origin: G uses 0")
    h = forms.FloatField(help_text="CR step (> 0)")
    T = forms.FloatField(min_value=0.0, help_text="Final time")
    trials = forms.IntegerField(initial=1000, min_value=0, required=False,
                                help_text="Random cycles per monotonicity certificate")
    bins = forms.IntegerField(initial=32, min_value=1, required=False, help_text="Histogram cells per axis")

    def clean(self):
        cleaned = super().clean()
        if cleaned.get("forcing") == "rotate" and cleaned.get("d") not in (None, 2):
            self.add_error("forcing", "rotate applies J and needs d=2")
        if cleaned.get("h") is not None and cleaned["h"] <= 0.0:
            self.add_error("h", "h must be positive")
        if cleaned.get("kappa") is not None and cleaned["kappa"] <= 0.0:
            self.add_error("kappa", "kappa must be positive")
        return cleaned


class CrossBurgersConfigForm(ExperimentForm):
    subcommand = "crossburgers"

    n_s = forms.IntegerField(help_text="Samples of s in [0, 2 pi), a power of two >= 4")
    alpha = forms.FloatField(initial=1.0, min_value=0.0, required=False, help_text="alpha(0) of the special family")
    beta = forms.FloatField(initial=0.0, required=False, help_text="beta(0) of the special family")
    T = forms.FloatField(min_value=0.0, help_text="Final time")
    dt = forms.FloatField(help_text="Time step (> 0)")
    scheme = forms.ChoiceField(choices=_choices(("imex", "rk2")), initial="imex", required=False,
                               help_text="imex (integrating-factor RK4) or rk2 (explicit)")
    cross = SwitchField(initial=True, required=False, help_text="Keep the cross term (off: heat equation)")
    decay_tolerance = forms.FloatField(initial=1e-6, min_value=0.0, required=False,
                                       help_text="Tolerance of the L2 decay identity residual")
    family_tolerance = forms.FloatField(initial=1e-4, min_value=0.0, required=False,
                                        help_text="Tolerance of the relative L2 error against the special family")
    invariant_tolerance = forms.FloatField(initial=1e-10, min_value=0.0, required=False,
                                           help_text="Tolerance on the drift of alpha^2 + beta^2")
    lambda_T = forms.FloatField(initial=0.0, min_value=0.0, required=False,
                                help_text="Horizon of the leapfrog lambda-energy drift check (0 skips it)")
    lambda_dt = forms.FloatField(initial=1e-3, required=False, help_text="Leapfrog step")
    lambda_tolerance = forms.FloatField(initial=1e-8, min_value=0.0, required=False,
                                        help_text="Tolerance on the shadow lambda-energy drift")

    def clean(self):
        cleaned = super().clean()
        n_s = cleaned.get("n_s")
        if n_s is not None and (n_s < 4 or not _power_of_two(n_s)):
            self.add_error("n_s", "n_s must be a power of two >= 4")
        for key in ("dt", "lambda_dt"):
            if cleaned.get(key) is not None and cleaned[key] <= 0.0:
                self.add_error(key, f"{key} must be positive")
        if (cleaned.get("lambda_T") or 0.0) > 0.0 and cleaned.get("alpha") == 0.0:
            self.add_error("alpha", "the lambda form needs alpha > 0 (lambda = log alpha)")
        return cleaned


FORMS: Dict[str, Type[ExperimentForm]] = {
    form.subcommand: form for form in (
        RearrangeConfigForm, AHTConfigForm, JKOConfigForm, GNSBConfigForm, HFConfigForm, GHBConfigForm,
        CrossBurgersConfigForm, SweepConfigForm,
    )
}


def _jsonable(value):
    if isinstance(value, tuple):
        return [_jsonable(item) for item in value]
    return value


def _format_matrix(value: tuple) -> str:
    rows = value if value and isinstance(value[0], (tuple, list)) else (value,)
    return ";".join(",".join(repr(float(x)) for x in row) for row in rows)


@dataclass(frozen=True)
class ExperimentConfig:
    """ Resolved configuration; reading a key the form does not declare is an error. """

    subcommand: str
    values: Mapping[str, Any] = field(default_factory=dict)

    def __getitem__(self, key: str):
        if key not in self.values:
            raise KeyError(f"{self.subcommand} config has no key {key!r}")
        return self.values[key]

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def serialize(self) -> dict:
        return {"subcommand": self.subcommand, "values": {k: _jsonable(v) for k, v in sorted(self.values.items())}}

    def as_raw(self) -> Dict[str, str]:
        """ key = value strings that validate back to this config. """
        raw = {}
        for key, value in self.values.items():
            if value is None:
                raw[key] = ""
            elif isinstance(value, (tuple, list)) and key in ("f_matrix", "f_offset", "g_matrix", "g_offset"):
                raw[key] = _format_matrix(tuple(value))
            elif isinstance(value, list):
                raw[key] = ",".join(repr(float(x)) for x in value)
            elif isinstance(value, float):
                raw[key] = repr(value)
            else:
                raw[key] = str(value)
        return raw


def validate_config(subcommand: str, raw: Mapping[str, Any]) -> ExperimentConfig:
    if subcommand not in FORMS:
        raise ConfigError(
            f"Unknown subcommand {subcommand!r}", errors={"subcommand": [f"expected one of {SUBCOMMANDS}"]}
        )
    form_class = FORMS[subcommand]
    data = {name: bound.initial for name, bound in form_class.base_fields.items() if bound.initial is not None}
    data.update(raw)
    form = form_class(data=data)
    errors: Dict[str, List[str]] = {}
    unknown = sorted(set(raw) - set(form_class.base_fields))
    for key in unknown:
        errors[key] = ["unknown key"]
    if not form.is_valid():
        for key, messages in form.errors.items():
            errors.setdefault(key, []).extend(str(message) for message in messages)
    if errors:
        raise ConfigError(f"Invalid {subcommand} configuration", errors=errors)
    return ExperimentConfig(subcommand, dict(form.cleaned_data))


def read_config_file(path, subcommand: Optional[str] = None) -> Dict[str, str]:
    """
    Key/value pairs of the [subcommand] section of an INI file, or the "config" echo of a run manifest (.json).
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file {path} not found", errors={"config": [f"{path} does not exist"]})
    if path.suffix == ".json":
        manifest = json.loads(path.read_text())
        config = manifest.get("config", {})
        if subcommand and config.get("subcommand") != subcommand:
            raise ConfigError(
                f"Manifest {path} is a {config.get('subcommand')} run",
                errors={"subcommand": [f"manifest holds {config.get('subcommand')}, not {subcommand}"]},
            )
        return ExperimentConfig(config["subcommand"], config.get("values", {})).as_raw()

    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.read(path)
    if subcommand not in parser:
        raise ConfigError(f"{path} has no [{subcommand}] section", errors={subcommand: ["section missing"]})
    return dict(parser[subcommand])
