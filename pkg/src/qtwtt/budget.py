"""Standard-uncertainty budget of the two-way offset (independent terms in quadrature)."""
from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import ConfigError
from .scenario import parse_lines
from .stability import sample_sd
from .twoway import theoretical_sd


@dataclass(frozen=True)
class BudgetTerm:
    name: str
    value_ps: float
    utype: str  # "A", "B" or "A&B"
    formula_note: str = ""
    label: str = ""

    def __post_init__(self):
        if not self.value_ps >= 0:
            raise ValueError(f"budget term {self.name} must be >= 0 ps")


@dataclass(frozen=True)
class UncertaintyBudget:
    terms: tuple

    @property
    def combined_ps(self) -> float:
        return math.hypot(*(t.value_ps for t in self.terms))

    def __getitem__(self, name: str) -> BudgetTerm:
        for t in self.terms:
            if t.name == name:
                return t
        raise KeyError(name)


def measurement_term(series, name: str = "measurement") -> BudgetTerm:
    return BudgetTerm(name, sample_sd(series), "A", "sample SD of t0 over valid blocks")


def calibration_term(w1, n1, w2, n2, name: str = "calibration") -> BudgetTerm:
    v = theoretical_sd(w1, n1, w2, n2)
    return BudgetTerm(name, v, "A", f"theoretical SD at widths {w1:g}/{w2:g} ps, counts {n1:g}/{n2:g}")


def fiber_nonreciprocity_term(length_km, dispersion_ps_per_nm_km, dlambda_sd_nm_per_source,
                              utype: str = "B", name: str = "fiber_link") -> BudgetTerm:
    """L * D * dlambda / 2 with dlambda = sqrt(2) * per-source SD (two independent sources)."""
    if min(length_km, dispersion_ps_per_nm_km, dlambda_sd_nm_per_source) < 0:
        raise ValueError("inputs must be >= 0")
    dl = math.sqrt(2.0) * dlambda_sd_nm_per_source
    v = length_km * dispersion_ps_per_nm_km * dl / 2.0
    note = f"L*D*dlambda/2, L={length_km:g} km, D={dispersion_ps_per_nm_km:g}, dlambda=sqrt(2)*{dlambda_sd_nm_per_source * 1e3:.3f} pm"
    return BudgetTerm(name, v, utype, note)


def dcfm_nonreciprocity_term(equiv_length_km, dispersion_ps_per_nm_km, dlambda_sd_nm,
                             utype: str = "A&B", name: str = "dcfm") -> BudgetTerm:
    t = fiber_nonreciprocity_term(equiv_length_km, dispersion_ps_per_nm_km, dlambda_sd_nm, utype, name)
    return BudgetTerm(name, t.value_ps, utype, t.formula_note.replace("L=", "L_equiv="))


def pmd_term(length_km, coeff_ps_per_sqrt_km: float = 0.05, name: str = "pmd") -> BudgetTerm:
    if length_km < 0:
        raise ValueError("length must be >= 0")
    return BudgetTerm(name, coeff_ps_per_sqrt_km * math.sqrt(length_km) / 2.0, "B",
                      f"coeff*sqrt(L)/2, coeff={coeff_ps_per_sqrt_km:g} ps/sqrt(km), L={length_km:g} km")


def sagnac_term(length_km, coeff_ps_per_km: float = 0.05, name: str = "sagnac") -> BudgetTerm:
    if length_km < 0:
        raise ValueError("length must be >= 0")
    return BudgetTerm(name, coeff_ps_per_km * length_km / 2.0, "B",
                      f"coeff*L/2, coeff={coeff_ps_per_km:g} ps/km, L={length_km:g} km")


def combine(terms) -> UncertaintyBudget:
    terms = tuple(terms)
    if not terms:
        raise ValueError("a budget needs at least one term")
    return UncertaintyBudget(terms)


def thermal_wavelength_sd_nm(sensitivity_nm_per_c=0.4, precision_c=0.05, coverage=3.0) -> float:
    """Per-source wavelength SD from a temperature-controller bound.

    The controller precision is read as a bound at ``coverage`` standard
    deviations, so SD = sensitivity * precision / coverage (6.67 pm here).
    """
    return sensitivity_nm_per_c * precision_c / coverage


def quadrature(*terms: BudgetTerm, name: str, utype: str = "A&B") -> BudgetTerm:
    v = math.hypot(*(t.value_ps for t in terms))
    note = " (+) ".join(f"{t.utype}: {t.value_ps:.3f} ps [{t.formula_note}]" for t in terms)
    return BudgetTerm(name, v, utype, note)


# ------------------------------------------------------------- spec files

def default_budget_text() -> str:
    return resources.files("qtwtt").joinpath("data/default_budget.txt").read_text()


def _group(flat: dict) -> dict:
    groups: dict = {}
    for key, val in flat.items():
        parts = key.split(".")
        if len(parts) != 3 or parts[0] != "term":
            raise ConfigError(f"budget key {key!r} must look like term.<name>.<field>")
        groups.setdefault(parts[1], {})[parts[2]] = val
    return groups


def _num(d, key, name):
    try:
        return float(d[key])
    except KeyError:
        raise ConfigError(f"budget term {name!r} needs {key}") from None
    except (TypeError, ValueError):
        raise ConfigError(f"budget term {name!r}: {key} must be a number") from None


def _evaluate(name, d, series=None) -> BudgetTerm:
    kind = d.get("kind")
    label = str(d.get("label", name))
    if kind == "measurement":
        t = measurement_term(series, name) if series is not None else BudgetTerm(
            name, _num(d, "value_ps", name), "A", "declared value (no run supplied)")
    elif kind == "calibration":
        t = calibration_term(_num(d, "w1_ps", name), _num(d, "n1", name), _num(d, "w2_ps", name),
                             _num(d, "n2", name), name)
    elif kind == "wavelength_nonreciprocity":
        L, D = _num(d, "length_km", name), _num(d, "dispersion_ps_per_nm_km", name)
        a_pm = _num(d, "type_a_pm", name)
        if d.get("type_b_pm") is None:
            b_nm = thermal_wavelength_sd_nm(_num(d, "thermal_sensitivity_nm_per_c", name),
                                            _num(d, "thermal_precision_c", name),
                                            float(d.get("thermal_coverage", 3.0)))
        else:
            b_nm = _num(d, "type_b_pm", name) * 1e-3
        ta = fiber_nonreciprocity_term(L, D, a_pm * 1e-3, "A", name + ".A")
        tb = fiber_nonreciprocity_term(L, D, b_nm, "B", name + ".B")
        t = quadrature(ta, tb, name=name)
    elif kind == "pmd":
        t = pmd_term(_num(d, "length_km", name), _num(d, "coeff_ps_per_sqrt_km", name), name)
    elif kind == "sagnac":
        t = sagnac_term(_num(d, "length_km", name), _num(d, "coeff_ps_per_km", name), name)
    elif kind == "fixed":
        t = BudgetTerm(name, _num(d, "value_ps", name), str(d.get("utype", "B")), str(d.get("note", "declared")))
    else:
        raise ConfigError(f"budget term {name!r}: unknown kind {kind!r}")
    return BudgetTerm(t.name, t.value_ps, t.utype, t.formula_note, label)


def budget_from_text(text: str, series=None, source: str = "<budget>") -> UncertaintyBudget:
    groups = _group(parse_lines(text, source))
    return combine(_evaluate(name, d, series) for name, d in groups.items())


def load_budget(path=None, series=None) -> UncertaintyBudget:
    if path is None:
        return budget_from_text(default_budget_text(), series, "default budget")
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read budget spec {path}: {exc}") from None
    return budget_from_text(text, series, str(path))


def thermal_length_note(length_km=103.0, d_dispersion_per_c=0.0025, delta_t_c=2.0, dlambda_nm=0.02) -> str:
    est = length_km * d_dispersion_per_c * delta_t_c * dlambda_nm
    return (f"fibre temperature change {delta_t_c:g} C with {dlambda_nm:g} nm wavelength difference: "
            f"~{est * 1e3:.0f} fs (L * dD/dT * dT * dlambda, dD/dT = {d_dispersion_per_c:g} ps/nm/km/C); "
            "not added as a term")
