"""Run orchestration: configuration format, unit conversion, and the three
experiment kinds (accuracy study, constant-voltage charging, cyclic
voltammetry).

Configs are flat sectioned key=value files (INI); unknown sections or keys
are hard errors because silent misconfiguration is the main reproducibility
hazard.  Every run writes a manifest holding the fully resolved configuration
and the code version, which is sufficient to reproduce the outputs byte for
byte.
"""

from __future__ import annotations

import configparser
import io
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import __version__, diagnostics, mms
from .errors import ConfigError, NonpositiveConstant, StructureViolation
from .fields import BoundaryData
from .log_midpoint import LogMidpointStepper
from .mesh import GeometrySpec, Mesh, build_electrode_domain, build_uniform_grid
from .model import LogState, ModelParams, NewtonConfig, State
from .semi_implicit import SemiImplicitStepper, initial_potential

K_BOLTZMANN = 1.380649e-23        # J/K
E_CHARGE = 1.602176634e-19        # C
N_AVOGADRO = 6.02214076e23        # 1/mol


# -- nondimensionalization ----------------------------------------------------

@dataclass(frozen=True)
class Scales:
    """Dimensional scales reported alongside a converted physical block."""

    debye_length_m: float
    time_s: float
    thermal_voltage_v: float      # k_B T0 / e
    current_density: float        # I0 = k_B T0 c0 / (nu0 L), 1/(m^2 s)
    entropy_density: float        # S0 = k_B c0 L^2, J/(K m)


@dataclass(frozen=True)
class PhysicalBlock:
    """Dimensional inputs; the unit conventions follow the config keys."""

    t0_kelvin: float
    c0_molar: float
    length_nm: float
    eps0_c_per_v_nm: float
    eps_r: float
    nu0_j_s_per_m2: float
    k_j_per_k_m_ms: float
    c_heat_molar: float


def nondimensionalize(phys: PhysicalBlock):
    """Convert a physical block into the dimensionless constants (eps, k, C_T)
    plus the scales report for the plotting layer."""
    for name, value in vars(phys).items():
        if value <= 0:
            raise NonpositiveConstant(f"{name} must be positive, got {value}")
    c0 = phys.c0_molar * 1000.0 * N_AVOGADRO            # 1/m^3
    length = phys.length_nm * 1e-9
    eps0 = phys.eps0_c_per_v_nm * 1e9                   # C/(V m)
    debye = math.sqrt(eps0 * phys.eps_r * K_BOLTZMANN * phys.t0_kelvin
                      / (E_CHARGE**2 * c0))
    tau = debye * length * phys.nu0_j_s_per_m2 / (K_BOLTZMANN * phys.t0_kelvin)
    k_si = phys.k_j_per_k_m_ms * 1e3                    # J/(K m s)
    dimensionless = {
        "eps": debye / length,
        "k": tau * k_si / (K_BOLTZMANN * c0 * length**2),
        "c_t": phys.c_heat_molar / phys.c0_molar,
    }
    scales = Scales(
        debye_length_m=debye,
        time_s=tau,
        thermal_voltage_v=K_BOLTZMANN * phys.t0_kelvin / E_CHARGE,
        current_density=K_BOLTZMANN * phys.t0_kelvin * c0
        / (phys.nu0_j_s_per_m2 * length),
        entropy_density=K_BOLTZMANN * c0 * length**2)
    return dimensionless, scales


# -- voltage protocols ---------------------------------------------------------

@dataclass(frozen=True)
class CVProtocol:
    """Triangular scan: rise at rate nu to v_max, fall back, repeat."""

    scan_rate: float
    v_max: float
    cycles: int = 1

    def __post_init__(self):
        if self.scan_rate <= 0 or self.v_max <= 0 or self.cycles < 1:
            raise ConfigError("CV protocol needs positive scan rate, peak, cycles")

    @property
    def half_period(self) -> float:
        return self.v_max / self.scan_rate

    @property
    def duration(self) -> float:
        return 2.0 * self.half_period * self.cycles

    def voltage(self, t: float) -> float:
        tau = math.fmod(t, 2.0 * self.half_period)
        if tau <= self.half_period:
            return self.scan_rate * tau
        return self.v_max - self.scan_rate * (tau - self.half_period)


def cv_voltage(t: float, protocol: CVProtocol) -> float:
    return protocol.voltage(t)


# -- configuration --------------------------------------------------------------

_SCHEMA = {
    "run": {"experiment", "scheme", "out", "deterministic", "section_x"},
    "geometry": {"kind", "nx", "ny", "x_min", "x_max", "y_min", "y_max",
                 "teeth_per_side", "tooth_width", "tooth_depth",
                 "gap_half_width"},
    "model": {"z", "nu", "epsilon", "k", "c_t", "rho_fixed"},
    "physical": {"t0_kelvin", "c0_molar", "length_nm", "eps0_c_per_v_nm",
                 "eps_r", "nu0_j_s_per_m2", "k_j_per_k_m_ms", "c_heat_molar"},
    "time": {"dt", "t_end", "snapshots"},
    "boundary": {"protocol", "psi_star", "scan_rate", "v_max", "cycles",
                 "rates"},
    "solver": {"newton_tol", "newton_tol_temperature", "newton_max_iterations",
               "max_halvings", "auto_dt_halving", "max_dt_halvings",
               "strict_structure"},
    "accuracy": {"sizes"},
}

_DEFAULTS = {
    "run": {"experiment": "charging", "scheme": "1", "out": "out",
            "deterministic": "true", "section_x": "0.0"},
    "geometry": {"kind": "electrode-comb", "nx": "64", "ny": "32",
                 "x_min": "-1.0", "x_max": "1.0", "y_min": "0.0",
                 "y_max": "1.0", "teeth_per_side": "2", "tooth_width": "0.15",
                 "tooth_depth": "0.5", "gap_half_width": "0.2"},
    "model": {"z": "1,-1", "nu": "1.0,1.0", "epsilon": "0.0974",
              "k": "7.0e5", "c_t": "194.0", "rho_fixed": "0.0"},
    "time": {"dt": "1e-3", "t_end": "0.5", "snapshots": ""},
    "boundary": {"protocol": "constant", "psi_star": "2.0", "scan_rate": "20.0",
                 "v_max": "2.0", "cycles": "3", "rates": ""},
    "solver": {"newton_tol": "1e-10", "newton_tol_temperature": "",
               "newton_max_iterations": "50", "max_halvings": "30",
               "auto_dt_halving": "true", "max_dt_halvings": "10",
               "strict_structure": "true"},
    "accuracy": {"sizes": "8,16,32,64"},
}


@dataclass
class RunConfig:
    """Fully resolved run configuration (strings parsed, units converted)."""

    experiment: str
    scheme: str
    out: str
    deterministic: bool
    section_x: float
    geometry: GeometrySpec
    params: ModelParams
    scales: Scales | None
    dt: float
    t_end: float
    snapshots: list[float]
    protocol: str
    psi_star: float
    cv: CVProtocol | None
    cv_rates: list[float]
    newton: NewtonConfig
    strict_structure: bool
    accuracy_sizes: list[int]
    resolved: dict = field(repr=False, default_factory=dict)


def _parse_floats(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok.strip() != ""]


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def parse_config(path=None, text=None, overrides=()) -> RunConfig:
    """Load, validate (unknown keys are errors), and resolve a run config."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    if text is not None:
        parser.read_string(text)
    elif path is not None:
        if not parser.read(path):
            raise ConfigError(f"cannot read config file {path}")
    else:
        raise ConfigError("need a config path or text")

    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        key_path, value = item.split("=", 1)
        section, key = key_path.split(".", 1)
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section.strip(), key.strip(), value.strip())

    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")

    def get(section, key):
        if parser.has_option(section, key):
            return parser.get(section, key)
        return _DEFAULTS.get(section, {}).get(key, "")

    resolved = {s: {k: get(s, k) for k in sorted(_SCHEMA[s])
                    if get(s, k) != "" or k in _DEFAULTS.get(s, {})}
                for s in _SCHEMA if s != "physical"}

    experiment = get("run", "experiment")
    if experiment not in ("accuracy", "charging", "cv"):
        raise ConfigError(f"unknown experiment {experiment!r}")
    scheme = get("run", "scheme")
    if scheme not in ("1", "2"):
        raise ConfigError(f"scheme must be 1 or 2, got {scheme!r}")

    geometry = GeometrySpec(
        kind=get("geometry", "kind"),
        nx=int(get("geometry", "nx")), ny=int(get("geometry", "ny")),
        x_min=float(get("geometry", "x_min")), x_max=float(get("geometry", "x_max")),
        y_min=float(get("geometry", "y_min")), y_max=float(get("geometry", "y_max")),
        teeth_per_side=int(get("geometry", "teeth_per_side")),
        tooth_width=float(get("geometry", "tooth_width")),
        tooth_depth=float(get("geometry", "tooth_depth")),
        gap_half_width=float(get("geometry", "gap_half_width")))

    z = _parse_floats(get("model", "z"))
    nu = _parse_floats(get("model", "nu"))
    scales = None
    if parser.has_section("physical"):
        phys = PhysicalBlock(
            t0_kelvin=float(get("physical", "t0_kelvin")),
            c0_molar=float(get("physical", "c0_molar")),
            length_nm=float(get("physical", "length_nm")),
            eps0_c_per_v_nm=float(get("physical", "eps0_c_per_v_nm")),
            eps_r=float(get("physical", "eps_r")),
            nu0_j_s_per_m2=float(get("physical", "nu0_j_s_per_m2")),
            k_j_per_k_m_ms=float(get("physical", "k_j_per_k_m_ms")),
            c_heat_molar=float(get("physical", "c_heat_molar")))
        dimensionless, scales = nondimensionalize(phys)
        resolved["physical"] = {k: get("physical", k)
                                for k in sorted(_SCHEMA["physical"])}
        resolved["model"].update({k: repr(v) for k, v in dimensionless.items()
                                  if k != "eps"})
        resolved["model"]["epsilon"] = repr(dimensionless["eps"])
        eps_val, k_val, ct_val = (dimensionless["eps"], dimensionless["k"],
                                  dimensionless["c_t"])
    else:
        eps_val = float(get("model", "epsilon"))
        k_val = float(get("model", "k"))
        ct_val = float(get("model", "c_t"))

    params = ModelParams(z=z, nu=nu, eps=eps_val, k=k_val, c_t=ct_val,
                         rho_fixed=float(get("model", "rho_fixed")))

    newton = NewtonConfig(
        tol=float(get("solver", "newton_tol")),
        tol_temperature=(None if get("solver", "newton_tol_temperature") == ""
                         else float(get("solver", "newton_tol_temperature"))),
        max_iterations=int(get("solver", "newton_max_iterations")),
        max_halvings=int(get("solver", "max_halvings")),
        auto_dt_halving=_parse_bool(get("solver", "auto_dt_halving")),
        max_dt_halvings=int(get("solver", "max_dt_halvings")))

    dt = float(get("time", "dt"))
    t_end = float(get("time", "t_end"))
    if dt <= 0 or t_end <= 0:
        raise ConfigError("dt and t_end must be positive")

    protocol = get("boundary", "protocol")
    if protocol not in ("constant", "cv"):
        raise ConfigError(f"unknown boundary protocol {protocol!r}")
    cv = None
    cv_rates = _parse_floats(get("boundary", "rates"))
    if protocol == "cv" or experiment == "cv":
        cv = CVProtocol(scan_rate=float(get("boundary", "scan_rate")),
                        v_max=float(get("boundary", "v_max")),
                        cycles=int(get("boundary", "cycles")))
        if not cv_rates:
            cv_rates = [cv.scan_rate]

    return RunConfig(
        experiment=experiment, scheme=scheme, out=get("run", "out"),
        deterministic=_parse_bool(get("run", "deterministic")),
        section_x=float(get("run", "section_x")),
        geometry=geometry, params=params, scales=scales, dt=dt, t_end=t_end,
        snapshots=_parse_floats(get("time", "snapshots")),
        protocol=protocol, psi_star=float(get("boundary", "psi_star")),
        cv=cv, cv_rates=cv_rates, newton=newton,
        strict_structure=_parse_bool(get("solver", "strict_structure")),
        accuracy_sizes=[int(v) for v in _parse_floats(get("accuracy", "sizes"))],
        resolved=resolved)


def manifest_text(cfg: RunConfig) -> str:
    out = io.StringIO()
    out.write(f"# generated by pnpf {__version__}; fully resolved configuration\n")
    for section in sorted(cfg.resolved):
        out.write(f"[{section}]\n")
        for key in sorted(cfg.resolved[section]):
            out.write(f"{key} = {cfg.resolved[section][key]}\n")
        out.write("\n")
    if cfg.scales is not None:
        out.write("[scales]\n")
        for name, value in vars(cfg.scales).items():
            out.write(f"{name} = {value!r}\n")
    return out.getvalue()


# -- experiment drivers ----------------------------------------------------------

def build_mesh(cfg: RunConfig) -> Mesh:
    if cfg.geometry.kind == "unit-square":
        return build_uniform_grid(cfg.geometry)
    return build_electrode_domain(cfg.geometry)


def electrode_bc_provider(mesh: Mesh, voltage_fn):
    """Dirichlet value of the biased electrode (x > 0) follows voltage_fn(t);
    the grounded electrode and the zero-charge channel walls stay at zero."""
    positive = mesh.bnd_mid[:, 0] > 0
    zeros = np.zeros(mesh.n_boundary)

    def bc(t: float) -> BoundaryData:
        dirich = np.where(positive, voltage_fn(t), 0.0)
        return BoundaryData.mixed(mesh, dirichlet=dirich, neumann=zeros)
    return bc


def neutral_initial_state(mesh: Mesh, cfg: RunConfig, bc) -> State:
    n = mesh.n_volumes
    c0 = np.ones((cfg.params.n_species, n))
    psi0 = initial_potential(mesh, c0, cfg.params, bc(0.0))
    return State(t=0.0, c=c0, psi=psi0, temp=np.ones(n), mesh=mesh)


class TrajectoryRun:
    """One sequential trajectory of either scheme with structure checks."""

    def __init__(self, mesh: Mesh, cfg: RunConfig):
        self.mesh = mesh
        self.cfg = cfg
        self.params = cfg.params
        if cfg.scheme == "1":
            self.stepper = SemiImplicitStepper(mesh, self.params, cfg.newton)
        else:
            self.stepper = LogMidpointStepper(mesh, self.params, cfg.newton)
        self.records: list[diagnostics.DiagnosticsRecord] = []
        self.reports = []
        self.mass0 = None
        self.entropy_prev = None

    def _primitive(self, state) -> State:
        return state.to_state() if isinstance(state, LogState) else state

    def march(self, state0: State, bc, t_end: float, events=(), on_event=None):
        """Fixed-step march that lands exactly on every event time and t_end."""
        cfg = self.cfg
        state = state0.to_log() if cfg.scheme == "2" else state0
        prim = state0
        self.mass0 = np.sum(self.mesh.vol * state0.c, axis=1)
        s0, _, _ = diagnostics.discrete_entropy(state0, self.params)
        self.entropy_prev = s0
        self.records.append(diagnostics.make_record(state0, self.params, 0.0,
                                                    self._current(None)))
        if on_event is not None:
            on_event(0.0, prim)
        pending = sorted(set(list(events) + [t_end]))
        pending = [t for t in pending if t > 1e-14]
        for target in pending:
            while prim.t < target - 1e-12:
                dt = min(cfg.dt, target - prim.t)
                state, report = self.stepper.step(state, bc, dt)
                prim = self._primitive(state)
                self.reports.append(report)
                self._check_and_record(prim, report)
            if on_event is not None and target <= t_end + 1e-12:
                on_event(target, prim)
        return prim

    def _current(self, report) -> float:
        if report is None:
            return 0.0
        try:
            return diagnostics.section_current(self.mesh, report.fluxes,
                                               self.params.z, self.cfg.section_x)
        except Exception:
            return float("nan")

    def _check_and_record(self, state: State, report):
        rec = diagnostics.make_record(state, self.params,
                                      report.entropy_production,
                                      self._current(report))
        self.records.append(rec)
        if self.cfg.strict_structure:
            drift = np.max(np.abs(rec.masses - self.mass0) / self.mass0)
            if drift > 1e-9:
                raise StructureViolation(f"mass drift {drift:.3e} at t={state.t:.6g}")
            if rec.min_c <= 0 or rec.min_temp <= 0:
                raise StructureViolation(f"positivity lost at t={state.t:.6g}")
            gain = rec.entropy - self.entropy_prev
            bound = report.dt * report.entropy_production \
                - 1e-8 * abs(self.entropy_prev)
            if gain < bound:
                raise StructureViolation(
                    f"entropy gain {gain:.3e} below bound {bound:.3e} "
                    f"at t={state.t:.6g}")
        self.entropy_prev = rec.entropy


def run_charging(cfg: RunConfig, out_dir: str) -> dict:
    mesh = build_mesh(cfg)
    bc = electrode_bc_provider(mesh, lambda t: cfg.psi_star)
    state0 = neutral_initial_state(mesh, cfg, bc)
    run = TrajectoryRun(mesh, cfg)

    snap_times = [t for t in cfg.snapshots if 0.0 <= t <= cfg.t_end]

    def on_event(t, state):
        if t in (0.0, *snap_times) or any(abs(t - s) < 1e-12 for s in snap_times):
            diagnostics.write_snapshot(
                os.path.join(out_dir, f"snapshot_t{t:.6g}.csv"), state)

    final = run.march(state0, bc, cfg.t_end, events=snap_times, on_event=on_event)
    diagnostics.write_timeseries(os.path.join(out_dir, "timeseries.csv"),
                                 run.records, cfg.params.n_species)
    return {"final": final, "records": run.records, "mesh": mesh}


def _fit_slope(x, y):
    """Least-squares slope and intercept of y against x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    a = np.vstack([x, np.ones_like(x)]).T
    slope, intercept = np.linalg.lstsq(a, y, rcond=None)[0]
    return float(slope), float(intercept)


def _loop_area(psi, current):
    """|integral I dpsi| around one closed scan cycle (trapezoid rule)."""
    psi = np.asarray(psi, dtype=float)
    current = np.asarray(current, dtype=float)
    return float(abs(np.sum(0.5 * (current[1:] + current[:-1])
                            * np.diff(psi))))


@dataclass
class CVRateResult:
    scan_rate: float
    chi: float                      # fitted slope of mean dT vs t
    loop_areas: list[float]         # one per cycle
    ds2_charge: list[float]         # net S2 change per charging half-cycle
    ds2_discharge: list[float]
    records: list
    iv_samples: list                # (t, psi_star, I)


def run_cv_rate(cfg: RunConfig, scan_rate: float, out_dir: str) -> CVRateResult:
    protocol = CVProtocol(scan_rate=scan_rate, v_max=cfg.cv.v_max,
                          cycles=cfg.cv.cycles)
    mesh = build_mesh(cfg)
    bc = electrode_bc_provider(mesh, protocol.voltage)
    state0 = neutral_initial_state(mesh, cfg, bc)
    run = TrajectoryRun(mesh, cfg)

    half = protocol.half_period
    boundaries = [k * half for k in range(2 * protocol.cycles + 1)]
    run.march(state0, bc, protocol.duration, events=boundaries[1:])

    times = np.array([r.time for r in run.records])
    mean_dt = np.array([r.mean_dtemp for r in run.records])
    s2 = np.array([r.entropy_ions for r in run.records])
    current = np.array([r.current for r in run.records])
    psi_star = np.array([protocol.voltage(t) for t in times])
    chi, _ = _fit_slope(times, mean_dt)

    def at_time(tb):
        return int(np.argmin(np.abs(times - tb)))

    loop_areas, ds2_charge, ds2_discharge = [], [], []
    for cycle in range(protocol.cycles):
        i0 = at_time(boundaries[2 * cycle])
        i1 = at_time(boundaries[2 * cycle + 1])
        i2 = at_time(boundaries[2 * cycle + 2])
        loop_areas.append(_loop_area(psi_star[i0:i2 + 1], current[i0:i2 + 1]))
        ds2_charge.append(float(s2[i1] - s2[i0]))
        ds2_discharge.append(float(s2[i2] - s2[i1]))

    diagnostics.write_timeseries(os.path.join(out_dir, "timeseries.csv"),
                                 run.records, cfg.params.n_species)
    with open(os.path.join(out_dir, "iv.csv"), "w", encoding="utf-8") as fh:
        fh.write("t,psi_star,I\n")
        for t, v, amp in zip(times, psi_star, current):
            fh.write(f"{t:.16e},{v:.16e},{amp:.16e}\n")
    return CVRateResult(scan_rate=scan_rate, chi=chi, loop_areas=loop_areas,
                        ds2_charge=ds2_charge, ds2_discharge=ds2_discharge,
                        records=run.records,
                        iv_samples=list(zip(times, psi_star, current)))


def run_cv(cfg: RunConfig, out_dir: str) -> dict:
    results = []
    for idx, rate in enumerate(cfg.cv_rates):
        rate_dir = os.path.join(out_dir, f"rate_{idx}")
        os.makedirs(rate_dir, exist_ok=True)
        results.append(run_cv_rate(cfg, rate, rate_dir))

    with open(os.path.join(out_dir, "cv_summary.csv"), "w", encoding="utf-8") as fh:
        fh.write("nu,cycle,loop_area,dS2_charge,dS2_discharge,chi\n")
        for res in results:
            for cycle in range(len(res.loop_areas)):
                fh.write(f"{res.scan_rate:.16e},{cycle + 1},"
                         f"{res.loop_areas[cycle]:.16e},"
                         f"{res.ds2_charge[cycle]:.16e},"
                         f"{res.ds2_discharge[cycle]:.16e},{res.chi:.16e}\n")

    slope = None
    if len(results) >= 2 and all(r.chi > 0 for r in results):
        slope, intercept = _fit_slope([math.log(r.scan_rate) for r in results],
                                      [math.log(r.chi) for r in results])
        with open(os.path.join(out_dir, "cv_fit.csv"), "w", encoding="utf-8") as fh:
            fh.write("slope,intercept\n")
            fh.write(f"{slope:.16e},{intercept:.16e}\n")
    return {"results": results, "slope": slope}


def run_accuracy(cfg: RunConfig, out_dir: str) -> dict:
    rows = mms.run_convergence_study(cfg.scheme, sizes=cfg.accuracy_sizes,
                                     t_end=cfg.t_end,
                                     newton_tol=cfg.newton.tol)
    with open(os.path.join(out_dir, "convergence.csv"), "w", encoding="utf-8") as fh:
        fh.write(mms.convergence_csv(rows))
    return {"rows": rows}


def run_experiment(cfg: RunConfig) -> dict:
    """Dispatch a resolved config; writes the manifest next to the outputs."""
    out_dir = cfg.out
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "manifest.txt"), "w", encoding="utf-8") as fh:
        fh.write(manifest_text(cfg))
    if cfg.experiment == "accuracy":
        return run_accuracy(cfg, out_dir)
    if cfg.experiment == "charging":
        return run_charging(cfg, out_dir)
    return run_cv(cfg, out_dir)
