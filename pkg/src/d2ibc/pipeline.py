"""Config-driven pipeline: gen, identify, design, simulate, certify, report.

Every stage reads its inputs from the output directory and writes its
artifacts back there, so stages can be run one at a time and resumed.
All randomness derives from the single mandatory top-level ``seed``.
"""

from __future__ import annotations

import copy
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import certify as cert_mod
from .nic import NicController, SolverConfig, rho_constants
from .signals import DataError, load_record, lp_norm, save_record
from .simloop import (
    RunConfig,
    feasible_reference,
    generate_record,
    metrics,
    plant as make_plant,
    simulate_closed_loop,
    step_reference,
)
from .sysid import IdConfig, RegressionModel, identify
from .vrft import PidController, ReferenceModel, VrftResult, design_pid

log = logging.getLogger(__name__)

STAGES = ("gen", "identify", "design", "simulate", "certify", "report")

# seed offsets per consumer
_SEED_DATA, _SEED_RUNS, _SEED_CERT = 0, 100, 1000


class ConfigError(ValueError):
    pass


class BoundViolation(RuntimeError):
    pass


class StageError(Exception):
    """Wraps a failure with the stage that raised it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineConfig:
    seed: int
    plant: dict = field(default_factory=lambda: {"name": "b", "noise_max": 0.0})
    data: dict = field(default_factory=lambda: {"L": 400, "amplitude": 1.0})
    identification: dict = field(default_factory=lambda: {"n": 2, "degree": 1, "ridge": 1e-8, "affine_in_u": True})
    nic: dict = field(default_factory=lambda: {"mu": 0.0, "grid_points": 201, "refine_tol": 1e-10})
    reference_model: dict = field(default_factory=lambda: {"lambda": 0.6})
    pid: dict = field(default_factory=lambda: {"n_theta": 1})
    runs: list = field(default_factory=list)
    certificate: dict = field(default_factory=dict)
    steady_state: dict = field(default_factory=dict)
    settle_window: int = 100
    output: str = "runs/out"

    _KEYS = None  # filled below

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a mapping")
        unknown = set(d) - set(cls._KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "seed" not in d or not isinstance(d["seed"], int) or isinstance(d["seed"], bool):
            raise ConfigError("an integer 'seed' is mandatory")
        cfg = cls(**copy.deepcopy(d))
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return {k: copy.deepcopy(getattr(self, k)) for k in self._KEYS}

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            raw = yaml.safe_load(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        return cls.from_dict(raw)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    # -- derived objects ---------------------------------------------------
    def validate(self) -> None:
        try:
            self.make_plant()
            self.id_config()
            self.solver()
            self.make_reference_model()
            for i, r in enumerate(self.runs):
                self.run_config(i, r)
            self.probe()
            self.scenario()
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc
        if int(self.pid.get("n_theta", 1)) < 0:
            raise ConfigError("pid.n_theta must be >= 0")
        if int(self.data.get("L", 0)) < 10 and not self.data.get("path"):
            raise ConfigError("data.L must be >= 10")
        if float(self.nic.get("mu", 0.0)) < 0:
            raise ConfigError("nic.mu must be >= 0")
        if int(self.settle_window) < 1:
            raise ConfigError("settle_window must be >= 1")

    def make_plant(self):
        p = dict(self.plant)
        name = p.pop("name")
        kw = {k: p[k] for k in ("u_min", "u_max") if k in p}
        if "y_domain" in p:
            kw["y_domain"] = tuple(p["y_domain"])
        extra = set(p) - {"noise_max", "u_min", "u_max", "y_domain"}
        if extra:
            raise ConfigError(f"unknown plant keys: {sorted(extra)}")
        return make_plant(name, noise_max=float(p.get("noise_max", 0.0)), **kw)

    def id_config(self) -> IdConfig:
        return IdConfig(**self.identification)

    def solver(self) -> SolverConfig:
        return SolverConfig(
            grid_points=int(self.nic.get("grid_points", 201)),
            refine_tol=float(self.nic.get("refine_tol", 1e-10)),
        )

    def make_reference_model(self) -> ReferenceModel:
        rm = self.reference_model
        if "num" in rm or "den" in rm:
            return ReferenceModel(tuple(rm["num"]), tuple(rm["den"]))
        return ReferenceModel.first_order(float(rm.get("lambda", 0.6)))

    def run_config(self, i: int, spec: dict, plant=None) -> RunConfig:
        T = int(spec["T"])
        ref = spec.get("reference", {"kind": "step"})
        kind = ref.get("kind", "step")
        amp = float(ref.get("amplitude", 1.0))
        seed = self.seed + _SEED_RUNS + 2 * i
        if kind == "step":
            r = step_reference(T, amp, int(ref.get("at", 10)), float(ref.get("base", 0.0)))
        elif kind == "constant":
            r = np.full(T + 1, amp)
        elif kind == "feasible":
            plant = plant or self.make_plant()
            r = feasible_reference(plant, T, amp, seed, float(ref.get("smooth", 0.8)))
        else:
            raise ConfigError(f"run {i}: unknown reference kind {kind!r}")
        if "disturbance" in spec:
            noise = np.full(T, float(spec["disturbance"]))
            return RunConfig(T, r, noise=noise, name=spec.get("name", f"run{i}"), seed=seed + 1)
        return RunConfig(
            T, r, noise_max=float(spec.get("noise_max", 0.0)), seed=seed + 1, name=spec.get("name", f"run{i}")
        )

    def probe(self) -> cert_mod.ProbeConfig:
        p = dict(self.certificate.get("probe", {}))
        for k in ("y_amplitudes", "r_amplitudes"):
            if k in p:
                p[k] = tuple(float(v) for v in p[k])
        return cert_mod.ProbeConfig(seed=self.seed + _SEED_CERT, **p)

    def scenario(self) -> cert_mod.StepScenario:
        return cert_mod.StepScenario(**self.steady_state)


PipelineConfig._KEYS = tuple(f for f in PipelineConfig.__dataclass_fields__ if not f.startswith("_"))


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


class Pipeline:
    def __init__(self, cfg: PipelineConfig, out: str | Path | None = None):
        self.cfg = cfg
        self.out = Path(out or cfg.output)
        self.out.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        return self.out / name

    def _need(self, name: str) -> Path:
        p = self.path(name)
        if not p.exists():
            raise DataError(f"missing artifact {p}; run the producing stage first")
        return p

    def run(self, stage: str):
        fn = getattr(self, f"stage_{stage}")
        try:
            return fn()
        except (KeyboardInterrupt, StageError):
            raise
        except Exception as exc:
            raise StageError(stage, exc) from exc

    def run_all(self):
        for s in STAGES:
            self.run(s)

    # -- stages ------------------------------------------------------------
    def stage_gen(self):
        d = self.cfg.data
        rec = generate_record(self.cfg.make_plant(), int(d["L"]), float(d.get("amplitude", 1.0)), self.cfg.seed + _SEED_DATA)
        save_record(rec, self.path("data.csv"))
        return rec

    def _record(self):
        src = self.cfg.data.get("path")
        return load_record(src if src else self._need("data.csv"))

    def stage_identify(self):
        rec = self._record()
        model = identify(rec, self.cfg.id_config())
        model.save(self.path("model.json"))
        return model

    def stage_design(self):
        rec = self._record()
        model = RegressionModel.load(self._need("model.json"))
        pl = self.cfg.make_plant()
        rho_y, rho_u = rho_constants(rec)
        nic = NicController(model, float(self.cfg.nic.get("mu", 0.0)), rho_y, rho_u, pl.u_min, pl.u_max, self.cfg.solver())
        nic.save(self.path("nic.json"))
        design = design_pid(rec, nic, self.cfg.make_reference_model(), int(self.cfg.pid.get("n_theta", 1)))
        design.result.save(self.path("pid.json"))
        return nic, design

    def _controllers(self):
        nic = NicController.load(self._need("nic.json"))
        vr = VrftResult.load(self._need("pid.json"))
        return nic, PidController(vr.theta)

    def stage_simulate(self):
        pl = self.cfg.make_plant()
        nic, pid = self._controllers()
        specs = list(enumerate(self.cfg.runs))

        def one(item):
            i, spec = item
            rc = self.cfg.run_config(i, spec, pl)
            return rc, simulate_closed_loop(pl, nic.scratch(), PidController(pid.theta), rc)

        with ThreadPoolExecutor() as ex:
            results = list(ex.map(one, specs))
        report = {}
        sw = int(self.cfg.settle_window)
        for rc, tr in results:
            tr.save_csv(self.path(f"trace_{rc.name}.csv"))
            m = metrics(tr, min(sw, max(tr.T - 1, 1)))
            m.update(
                {
                    "T": tr.T,
                    "y_linf": lp_norm(tr.y, math.inf),
                    "r_linf": lp_norm(tr.r, math.inf),
                    "xi_linf": lp_norm(tr.xi, math.inf) if tr.T else 0.0,
                    "outside_domain": tr.outside_domain,
                }
            )
            report[rc.name] = m
        _dump_json(report, self.path("metrics.json"))
        return report

    def stage_certify(self):
        pl = self.cfg.make_plant()
        nic, pid = self._controllers()
        c = self.cfg.certificate
        cert = cert_mod.certify(
            nic.model,
            pl,
            nic,
            pid,
            probe=self.cfg.probe(),
            gamma_samples=int(c.get("gamma_samples", 10_000)),
            seed=self.cfg.seed + _SEED_CERT,
            per_axis=int(c.get("per_axis", 50)),
            budget=int(c.get("budget", 200_000)),
        )
        cert.save(self.path("certificate.json"), float(c.get("r_norm", 1.0)), float(c.get("xi_norm", 0.0)))

        t2 = None
        if np.any(pid.theta):
            t2 = cert_mod.verify_theorem2(pl, nic, pid, self.cfg.scenario())
            t2.pop("traces")
            _dump_json(t2, self.path("steady_state.json"))

        if not cert.holds:
            raise cert_mod.AssumptionViolation(
                f"assumption verdicts fail: gamma_y={cert.gamma_y:.4g}, Gamma_y={cert.Gamma_y:.4g}"
            )
        checks = self._bound_checks(cert)
        _dump_json(checks, self.path("bounds.json"))
        bad = [k for k, v in checks.items() if v["violated"]]
        if bad:
            msg = f"observed norms exceed the certified bounds in runs {bad}"
            if c.get("strict", True):
                raise BoundViolation(msg)
            log.warning("%s (constants are empirical lower bounds)", msg)
        return cert, checks, t2

    def _bound_checks(self, cert) -> dict:
        mpath = self.path("metrics.json")
        if not mpath.exists():
            return {}
        runs = json.loads(mpath.read_text())
        out = {}
        for name, m in runs.items():
            yb, eb = cert_mod.theorem1_bounds(cert, m["r_linf"], m["xi_linf"])
            in_region = m["outside_domain"] == 0
            out[name] = {
                "y_linf": m["y_linf"],
                "y_bound": yb,
                "e_linf": m["linf_error"],
                "e_bound": eb,
                "in_validity_region": in_region,
                "violated": bool(in_region and (m["y_linf"] > yb or m["linf_error"] > eb)),
            }
        return out

    def stage_report(self):
        cert = json.loads(self._need("certificate.json").read_text())
        runs = json.loads(self._need("metrics.json").read_text())
        bpath = self.path("bounds.json")
        bounds = json.loads(bpath.read_text()) if bpath.exists() else {}
        t2path = self.path("steady_state.json")
        t2 = json.loads(t2path.read_text()) if t2path.exists() else None
        summary = {
            "assumptions": {
                "residue_gain_le_1": cert["residue_gain_ok"],
                "small_gain": cert["small_gain_ok"],
                "gamma_y": cert["gamma_y"],
                "Gamma_y": cert["Gamma_y"],
            },
            "runs": {},
            "steady_state": t2,
            "note": "certificate constants are empirical lower bounds",
        }
        for name, m in runs.items():
            b = bounds.get(name, {})
            summary["runs"][name] = {
                "linf_error": m["linf_error"],
                "steady_state_error": m["steady_state_error"],
                "saturation_count": m["saturation_count"],
                "y_linf": m["y_linf"],
                "y_bound": b.get("y_bound"),
                "e_bound": b.get("e_bound"),
                "bound_violated": b.get("violated"),
            }
        _dump_json(summary, self.path("summary.json"))
        self.path("summary.md").write_text(_markdown(summary))
        return summary


def _fmt(v):
    if v is None:
        return "n/a"
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def _markdown(s: dict) -> str:
    a = s["assumptions"]
    lines = [
        "# Closed-loop summary",
        "",
        f"- gamma_y = {_fmt(a['gamma_y'])} (assumption gamma_y <= 1: {_fmt(a['residue_gain_le_1'])})",
        f"- Gamma_y = {_fmt(a['Gamma_y'])} (small-gain Gamma_y < 1 - gamma_y: {_fmt(a['small_gain'])})",
        f"- {s['note']}",
        "",
        "| run | max abs e | steady-state e | saturations | max abs y | y bound | e bound |",
        "|---|---|---|---|---|---|---|",
    ]
    for name, r in s["runs"].items():
        lines.append(
            f"| {name} | {_fmt(r['linf_error'])} | {_fmt(r['steady_state_error'])} | {r['saturation_count']} "
            f"| {_fmt(r['y_linf'])} | {_fmt(r['y_bound'])} | {_fmt(r['e_bound'])} |"
        )
    if s.get("steady_state"):
        t = s["steady_state"]
        lines += [
            "",
            f"Step reference: {t['step']['verdict']} (steady-state e {_fmt(t['step']['steady_state_error'])})",
            f"Constant disturbance: {t['disturbance']['verdict']} "
            f"(steady-state e {_fmt(t['disturbance']['steady_state_error'])})",
            f"Inversion only: steady-state e {_fmt(t['nic_only']['steady_state_error'])}",
        ]
    return "\n".join(lines) + "\n"
