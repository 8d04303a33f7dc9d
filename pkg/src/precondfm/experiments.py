"""Config-driven experiment runners with deterministic CSV output.

A config is one JSON document.  ``validate_config`` turns it into an
``ExperimentConfig`` and builds every referenced object before any compute,
so a bad config fails without touching the output directory.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy

from . import __version__
from . import analytic as an
from . import gmm as gm
from .data import (SWISS_ROLL_NOISE, SWISS_ROLL_VERSION, LabeledPoints, checkerboard, gaussian_sample,
                   gmm_sample, stream, swiss_roll)
from .errors import NumericError, ValidationError
from .flowmatch import Arch, Schedule, TrainConfig, cfm_train, integrate_backward, integrate_forward
from .linalg import SpectralMatrix, cond_number, sample_covariance, sym_eig
from .metrics import empirical_condition_trajectory, mmd_rbf, sliced_distance
from .precond import (IdentityPreconditioner, NFConfig, flow_pushforward_precond, low_capacity_hidden,
                      nf_train, whitening_from_data)

EXPERIMENTS = ("gaussian_analytic", "theorem1", "gmm_bottleneck", "fm_2d", "precond_compare",
               "kappa_diagnostic", "checkerboard_swissroll")
PRECOND_KINDS = ("none", "whitening", "normalizing_flow", "flow_pushforward")
DATASET_KINDS = ("gaussian", "elongated_gaussian", "gmm", "swiss_roll", "checkerboard")
DIRECTIONS = ("z_to_x1", "x1_to_z")
ETA_RULES = {"half_inverse_lmax": an.half_inverse_lmax, "inverse_lmax": an.inverse_lmax}


# --------------------------------------------------------------------------
# CSV helpers


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([format_value(v) for v in r])
    return path


def read_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def mean_std(values) -> tuple[float, float]:
    """Mean and unbiased standard deviation (nan for a single value)."""
    v = np.asarray(values, dtype=float)
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else float("nan")


# --------------------------------------------------------------------------
# specs


def _rotation(angle_deg: float) -> np.ndarray:
    a = math.radians(angle_deg)
    return np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])


def _spd(spec: dict) -> SpectralMatrix:
    eig = np.asarray(spec["eigvals"], dtype=float)
    angle = float(spec.get("angle_deg", 0.0))
    if angle and eig.size != 2:
        raise ValidationError("angle_deg is only defined for 2x2 covariances")
    U = _rotation(angle) if angle else np.eye(eig.size)
    if np.any(eig <= 0):
        raise ValidationError("covariance eigenvalues must be positive")
    return SpectralMatrix.from_eig(eig, U)


@dataclass
class DatasetSpec:
    kind: str
    params: dict = field(default_factory=dict)
    n_train: int = 20000
    n_test: int = 4000

    @classmethod
    def parse(cls, d: dict) -> "DatasetSpec":
        if not isinstance(d, dict) or d.get("kind") not in DATASET_KINDS:
            raise ValidationError(f"dataset kind must be one of {DATASET_KINDS}")
        params = {k: v for k, v in d.items() if k not in ("kind", "n_train", "n_test")}
        spec = cls(d["kind"], params, int(d.get("n_train", 20000)), int(d.get("n_test", 4000)))
        if spec.n_train < 2 or spec.n_test < 1:
            raise ValidationError("need n_train >= 2 and n_test >= 1")
        spec.build()  # constructibility check
        return spec

    def build(self):
        """Covariance, mixture, or None for the sample-only toy sets."""
        p = self.params
        if self.kind == "gaussian":
            return _spd(p)
        if self.kind == "elongated_gaussian":
            kappa = float(p.get("kappa", 100.0))
            if kappa < 1:
                raise ValidationError("kappa must be >= 1")
            return SpectralMatrix.diagonal([1.0, kappa])
        if self.kind == "gmm":
            comps = [_spd(c) for c in p["components"]]
            try:
                return gm.ZeroMeanGmm(p["weights"], comps)
            except ValueError as exc:
                raise ValidationError(str(exc)) from exc
        if self.kind == "swiss_roll":
            if float(p.get("noise", SWISS_ROLL_NOISE)) < 0:
                raise ValidationError("noise must be nonnegative")
        return None

    @property
    def dim(self) -> int:
        obj = self.build()
        return 2 if obj is None else obj.dim

    def sample(self, n: int, seed: int, split: str) -> LabeledPoints:
        obj = self.build()
        gid = f"{self.kind}#{split}"
        if self.kind in ("gaussian", "elongated_gaussian"):
            return gaussian_sample(obj, n, seed, gid)
        if self.kind == "gmm":
            return gmm_sample(obj, n, seed, gid)
        if self.kind == "swiss_roll":
            return swiss_roll(n, float(self.params.get("noise", SWISS_ROLL_NOISE)), seed,
                              f"{SWISS_ROLL_VERSION}#{split}")
        return checkerboard(n, seed, f"checkerboard/v1#{split}")

    def sampler(self, seed: int, split: str):
        """Streaming sampler ``f(n, rng)``; only the row count is taken from the call."""
        counter = {"calls": 0}

        def draw(n, rng):
            counter["calls"] += 1
            return self.sample(n, seed, f"{split}/{counter['calls']}").points

        return draw


@dataclass
class PrecondSpec:
    kind: str
    params: dict = field(default_factory=dict)

    @property
    def name(self) -> str:
        return self.params.get("name", self.kind)

    @classmethod
    def parse(cls, d) -> "PrecondSpec":
        if d is None or d == "none":
            return cls("none")
        if isinstance(d, str):
            d = {"kind": d}
        if not isinstance(d, dict) or d.get("kind") not in PRECOND_KINDS:
            raise ValidationError(f"preconditioner kind must be one of {PRECOND_KINDS}")
        spec = cls(d["kind"], {k: v for k, v in d.items() if k != "kind"})
        spec.nf_config(0)
        spec.lowcap_config(2, 0)
        if spec.kind == "whitening" and float(spec.params.get("ridge", 0.0)) < 0:
            raise ValidationError("ridge must be >= 0")
        return spec

    def nf_config(self, seed: int) -> NFConfig:
        p = self.params
        try:
            cfg = NFConfig(n_layers=int(p.get("n_layers", 6)), hidden=tuple(p.get("hidden", (32, 32))),
                           activation=p.get("activation", "tanh"), scale_clamp=float(p.get("scale_clamp", 3.0)),
                           lr=float(p.get("lr", 2e-3)), batch=int(p.get("batch", 256)),
                           steps=int(p.get("steps", 2000)), seed=seed)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"bad normalizing-flow parameters: {exc}") from exc
        if cfg.n_layers < 2 or cfg.n_layers % 2 or cfg.steps < 1 or cfg.batch < 1:
            raise ValidationError("normalizing flow needs an even n_layers >= 2, steps >= 1, batch >= 1")
        return cfg

    def lowcap_config(self, dim: int, seed: int) -> tuple[Arch, TrainConfig, int]:
        p = self.params
        try:
            hidden = tuple(p["hidden"]) if "hidden" in p else low_capacity_hidden(dim, int(p.get("budget", 200)))
            arch = Arch(hidden, p.get("activation", "silu"))
            hyper = TrainConfig(float(p.get("lr", 2e-3)), int(p.get("batch", 256)), int(p.get("steps", 3000)),
                                p.get("optimizer", "adam"), seed)
            n_steps = int(p.get("n_steps", 100))
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"bad flow-pushforward parameters: {exc}") from exc
        if n_steps < 1 or hyper.steps < 1:
            raise ValidationError("flow pushforward needs steps >= 1 and n_steps >= 1")
        return arch, hyper, n_steps


@dataclass
class EvalSpec:
    n_eval: int = 4000
    every: int = 1000
    n_steps: int = 100
    method: str = "rk4"
    n_projections: int = 128
    bandwidths: object = "default"
    kappa_ts: tuple = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    n_pairs: int = 20000
    curve_n_eval: int = 1000  # intermediate curve points use a subset of the eval draws


@dataclass
class ExperimentConfig:
    experiment: str
    seeds: tuple
    output_dir: str = "runs"
    target: DatasetSpec | None = None
    source: DatasetSpec | None = None
    schedule: Schedule = field(default_factory=Schedule)
    arch: Arch = field(default_factory=Arch)
    hyper: TrainConfig = field(default_factory=TrainConfig)
    preconds: tuple = ()
    eval: EvalSpec = field(default_factory=EvalSpec)
    options: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()


_TRAINING_EXPERIMENTS = ("fm_2d", "precond_compare", "kappa_diagnostic", "checkerboard_swissroll")
_DEFAULT_TARGETS = {
    "fm_2d": {"kind": "swiss_roll"},
    "precond_compare": {"kind": "elongated_gaussian", "kappa": 100},
    "kappa_diagnostic": {"kind": "elongated_gaussian", "kappa": 100},
    "checkerboard_swissroll": {"kind": "swiss_roll"},
}


def validate_config(raw: dict, seed_override=None, output_dir=None) -> ExperimentConfig:
    """Parse and fully construct a config; raise ``ValidationError`` on any problem."""
    if not isinstance(raw, dict):
        raise ValidationError("config must be a JSON object")
    raw = json.loads(json.dumps(raw))
    if seed_override is not None:
        raw["seeds"] = list(seed_override)
    if output_dir is not None:
        raw["output_dir"] = str(output_dir)
    exp = raw.get("experiment")
    if exp not in EXPERIMENTS:
        raise ValidationError(f"experiment must be one of {EXPERIMENTS}, got {exp!r}")
    seeds = raw.get("seeds")
    if not isinstance(seeds, list) or not seeds:
        raise ValidationError("seeds must be a nonempty list of integers")
    if not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds):
        raise ValidationError("seeds must be nonnegative integers")
    if len(set(seeds)) != len(seeds):
        raise ValidationError("seeds must be distinct")
    known = {"experiment", "seeds", "output_dir", "target", "source", "schedule", "model", "hyper",
             "precond", "eval", "options", "description"}
    unknown = set(raw) - known
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    try:
        schedule = Schedule(raw.get("schedule", {}).get("kind", "linear"))
        m = raw.get("model", {})
        arch = Arch(tuple(int(h) for h in m.get("hidden", (64, 64))), m.get("activation", "silu"))
        h = raw.get("hyper", {})
        hyper = TrainConfig(float(h.get("lr", 1e-3)), int(h.get("batch", 256)), int(h.get("steps", 2000)),
                            h.get("optimizer", "adam"), 0)
        e = raw.get("eval", {})
        ev = EvalSpec(**e)
    except (TypeError, ValueError, AttributeError) as exc:
        raise ValidationError(f"invalid config section: {exc}") from exc
    from .autodiff import ACTIVATIONS
    if arch.activation not in ACTIVATIONS:
        raise ValidationError(f"unknown activation {arch.activation!r}")
    if hyper.optimizer not in ("adam", "sgd") or hyper.steps < 1 or hyper.batch < 1 or hyper.lr <= 0:
        raise ValidationError("hyper needs optimizer in {adam, sgd}, steps >= 1, batch >= 1, lr > 0")
    if ev.method not in ("euler", "rk4") or ev.n_steps < 1 or ev.n_eval < 2 or ev.n_projections < 1:
        raise ValidationError("eval needs method in {euler, rk4}, n_steps >= 1, n_eval >= 2, n_projections >= 1")
    if any(not 0.0 < float(t) < 1.0 for t in ev.kappa_ts):
        raise ValidationError("kappa_ts must lie in (0, 1)")
    target = source = None
    if exp in _TRAINING_EXPERIMENTS:
        target = DatasetSpec.parse(raw.get("target", _DEFAULT_TARGETS[exp]))
        src = raw.get("source", {"kind": "checkerboard"} if exp == "checkerboard_swissroll" else None)
        source = DatasetSpec.parse(src) if src is not None else None
        if source is not None and source.dim != target.dim:
            raise ValidationError("source and target dimensions differ")
    pre = raw.get("precond", ["none"])
    pre = pre if isinstance(pre, list) else [pre]
    preconds = tuple(PrecondSpec.parse(p) for p in pre)
    names = [p.name for p in preconds]
    if len(set(names)) != len(names):
        raise ValidationError("preconditioner names must be unique (set 'name' to disambiguate)")
    options = raw.get("options", {})
    if not isinstance(options, dict):
        raise ValidationError("options must be an object")
    cfg = ExperimentConfig(exp, tuple(seeds), raw.get("output_dir", "runs"), target, source, schedule, arch,
                           hyper, preconds, ev, options, raw)
    _validate_options(cfg)
    return cfg


def _validate_options(cfg: ExperimentConfig) -> None:
    o = cfg.options
    try:
        if cfg.experiment == "gaussian_analytic":
            _spd({"eigvals": o.get("eigvals", [1.0, 1000.0])})
            if not 0 < float(o.get("gd_eta_fraction", 0.4)) < 1:
                raise ValidationError("gd_eta_fraction must lie in (0, 1)")
            sgd = o.get("sgd", {})
            if sgd is not None and int(sgd.get("steps", 200000)) < 1000:
                raise ValidationError("sgd steps must be >= 1000")
        elif cfg.experiment == "theorem1":
            if o.get("eta_rule", "half_inverse_lmax") not in ETA_RULES:
                raise ValidationError(f"eta_rule must be one of {sorted(ETA_RULES)}")
            if any(float(k) < 1 for k in o.get("kappas", [10, 100, 1000])):
                raise ValidationError("kappas must be >= 1")
        elif cfg.experiment == "gmm_bottleneck":
            _default_gmm(o)
        elif cfg.experiment == "precond_compare" or cfg.experiment == "fm_2d":
            pass
    except (TypeError, ValueError, KeyError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"invalid options: {exc}") from exc


def _default_gmm(o: dict) -> gm.ZeroMeanGmm:
    spec = o.get("gmm", {"weights": [0.5, 0.5],
                         "components": [{"eigvals": [1.0, 100.0]}, {"eigvals": [1.0, 100.0], "angle_deg": 90.0}]})
    return DatasetSpec.parse({"kind": "gmm", **spec}).build()


# --------------------------------------------------------------------------
# run context


@dataclass
class RunManifest:
    config_hash: str
    experiment: str
    started: str
    finished: str
    emitted_files: list
    versions: dict
    seeds: list
    status: str = "ok"
    error: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


class _Emitter:
    def __init__(self, root: Path, quiet: bool, log: Callable[[str], None] | None):
        self.root = root
        self.files: list[Path] = []
        self.quiet = quiet
        self._log = log or (lambda msg: print(msg, flush=True))

    def csv(self, rel: str, header, rows) -> Path:
        p = write_csv(self.root / rel, header, rows)
        self.files.append(p)
        return p

    def log(self, msg: str) -> None:
        if not self.quiet:
            self._log(msg)


def _timestamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def versions() -> dict:
    return {"precondfm": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def run(cfg: ExperimentConfig, quiet: bool = False, log=None) -> RunManifest:
    """Execute ``cfg`` over all seeds and write CSVs plus ``manifest.json``.

    ``emitted_files`` lists everything written under the output directory
    except the manifest itself.

    A numeric failure still writes a manifest (status "failed") before the
    error propagates.
    """
    root = Path(cfg.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    out = _Emitter(root, quiet, log)
    started = _timestamp()
    manifest = RunManifest(cfg.config_hash(), cfg.experiment, started, "", [], versions(), list(cfg.seeds))
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(cfg.raw, indent=2, sort_keys=True) + "\n")
    out.files.append(cfg_path)
    try:
        RUNNERS[cfg.experiment](cfg, out)
    except NumericError as exc:
        manifest.status, manifest.error = "failed", str(exc)
        raise
    finally:
        manifest.finished = _timestamp()
        manifest.emitted_files = sorted(str(p.relative_to(root)) for p in out.files)
        (root / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=2) + "\n")
    return manifest


# --------------------------------------------------------------------------
# analytic experiments


def _grid(o: dict, key: str, default) -> np.ndarray:
    g = o.get(key, default)
    if isinstance(g, dict):
        return np.linspace(float(g["start"]), float(g["stop"]), int(g["num"]))
    return np.asarray(g, dtype=float)


def run_gaussian_analytic(cfg: ExperimentConfig, out: _Emitter) -> None:
    o = cfg.options
    H = _spd({"eigvals": o.get("eigvals", [1.0, 1000.0]), "angle_deg": o.get("angle_deg", 0.0)})
    model = an.GaussianTransport(H)
    ts = _grid(o, "ts", {"start": 0.0, "stop": 1.0, "num": 101})
    eps = float(o.get("eps", 1e-6))
    frac = float(o.get("gd_eta_fraction", 0.4))
    traj = an.condition_trajectory(model, ts)
    out.csv("kappa_vs_t.csv", ["t", "kappa"], traj.tolist())
    out.csv("sigma_vs_t.csv", ["t"] + [f"sigma_{i}" for i in range(model.dim)],
            [[t, *model.sigma_eigvals(t)] for t in ts])
    rows = []
    for t in ts:
        eta = frac / model.sigma_eigvals(t).max()
        rows.append([t, eta, an.predicted_gd_iterations(model, t, eta, eps),
                     an.predicted_gd_iterations(model, t, eta, eps, approx=True)])
    out.csv("predicted_iterations.csv", ["t", "eta", "k_exact", "k_approx"], rows)
    t_gd = float(o.get("gd_t", 0.9))
    eta = frac / model.sigma_eigvals(t_gd).max()
    tr = an.gd_simulate(model, t_gd, eta, int(o.get("gd_steps", 200)))
    pred = tr.predicted_errors()
    out.csv("gd_decay.csv", ["step", "mode", "sigma", "simulated", "predicted"],
            [[k, i, tr.sigmas[i], tr.per_mode_errors[i, k], pred[i, k]]
             for k in range(tr.steps + 1) for i in range(model.dim)])
    out.log(f"gaussian_analytic: kappa(1) = {traj[-1, 1]:.6g}")
    sgd = o.get("sgd", {})
    if sgd is None:
        return
    if "eigvals" in sgd:
        model = an.GaussianTransport(_spd({"eigvals": sgd["eigvals"], "angle_deg": sgd.get("angle_deg", 0.0)}))
    t_s = float(sgd.get("t", 0.8))
    eta_s = float(sgd.get("eta_fraction", 0.1)) / model.sigma_eigvals(t_s).max()
    rows = []
    for seed in cfg.seeds:
        st = an.sgd_simulate(model, t_s, eta_s, int(sgd.get("steps", 200000)), seed)
        sv, nn = st.scaled_variance(), st.noise_normalized_variance()
        for i in range(model.dim):
            rows.append([seed, i, st.sigmas[i], eta_s, st.steady_variance[i], sv[i], nn[i]])
        out.log(f"  sgd seed {seed}: var*sigma/eta = {np.array2string(sv, precision=4)}")
    out.csv("sgd_steady_state.csv",
            ["seed", "mode", "sigma", "eta", "variance", "scaled_variance", "noise_normalized_variance"], rows)


def _random_rotation(dim: int, seed: int) -> np.ndarray:
    Q, R = np.linalg.qr(stream(seed, "theorem1", "rotation").standard_normal((dim, dim)))
    return Q * np.sign(np.diag(R))


def run_theorem1(cfg: ExperimentConfig, out: _Emitter) -> None:
    o = cfg.options
    dim = int(o.get("dim", 2))
    rule = ETA_RULES[o.get("eta_rule", "half_inverse_lmax")]
    eps = float(o.get("eps", 1e-6))
    rotate = bool(o.get("rotate", False))
    rows = []
    for seed in cfg.seeds:
        for kappa in o.get("kappas", [10, 100, 1000]):
            eig = np.geomspace(1.0, float(kappa), dim)
            U = _random_rotation(dim, seed) if rotate else np.eye(dim)
            r = an.theorem1_experiment(SpectralMatrix.from_eig(eig, U), rule, eps)
            rows.append([seed, kappa, r.k_plain, r.k_whitened, r.eta_plain, r.eta_whitened,
                         r.converged_plain, r.converged_whitened])
            out.log(f"theorem1 seed {seed} kappa {kappa}: plain {r.k_plain}, whitened {r.k_whitened}")
    out.csv("theorem1.csv", ["seed", "kappa", "k_plain", "k_whitened", "eta_plain", "eta_whitened",
                             "converged_plain", "converged_whitened"], rows)


def run_gmm_bottleneck(cfg: ExperimentConfig, out: _Emitter) -> None:
    o = cfg.options
    g = _default_gmm(o)
    ts = _grid(o, "ts", {"start": 0.0, "stop": 1.0, "num": 21})
    w = gm.whitening_transforms(g)
    rows = []
    for t in ts:
        for k in range(g.n_components):
            S = gm.component_sigma_t(g, k, t).entries
            T = w.transforms[k]
            rows.append([t, k, cond_number(sym_eig(S)), cond_number(sym_eig(T @ S @ T.T)),
                         gm.whitened_optimal_gain(t)])
    out.csv("gmm_kappa.csv", ["t", "component", "kappa_raw", "kappa_whitened", "whitened_gain"], rows)
    t_gd = float(o.get("gd_t", 0.9))
    frac = float(o.get("gd_eta_fraction", 0.4))
    steps = int(o.get("gd_steps", 200))
    smax = max(gm.component_sigma_t(g, k, t_gd).eigvals.max() for k in range(g.n_components))
    raw = gm.gated_gd_simulate(g, t_gd, frac / smax, steps)
    whitened_sigma = (1 - t_gd) ** 2 + t_gd**2
    white = gm.gated_gd_simulate(g, t_gd, frac / whitened_sigma, steps, whitened=True)
    rows = [[s, k, i, raw[k].per_mode_errors[i, s], white[k].per_mode_errors[i, s]]
            for s in range(steps + 1) for k in range(g.n_components) for i in range(g.dim)]
    out.csv("gmm_gd.csv", ["step", "component", "mode", "raw_error", "whitened_error"], rows)
    k, i = gm.slowest_mode(raw)
    out.log(f"gmm_bottleneck: slowest raw mode component {k} mode {i}, "
            f"factor {raw[k].contraction_factors[i]:.6g}")
    n = int(o.get("n_pairs", 20000))
    rows = []
    for seed in cfg.seeds:
        pts = gmm_sample(g, n, seed, "gmm#bottleneck")
        x0 = stream(seed, "gmm#bottleneck", "x0").standard_normal((n, g.dim))
        for t in ts[(ts > 0) & (ts < 1)]:
            xt = t * pts.points + (1 - t) * x0
            xw = w.transform(xt, pts.labels)
            for k in range(g.n_components):
                sel = pts.labels == k
                if sel.sum() <= g.dim:
                    continue
                rows.append([seed, t, k, cond_number(sym_eig(sample_covariance(xt[sel]))),
                             cond_number(sym_eig(sample_covariance(xw[sel])))])
    out.csv("gmm_empirical_kappa.csv", ["seed", "t", "component", "kappa_hat_raw", "kappa_hat_whitened"], rows)


# --------------------------------------------------------------------------
# training pipelines


@dataclass
class PipelineResult:
    name: str
    precond: object
    field: object
    mmd_curve: list
    distances: dict
    final_mmd: float
    precond_log: list
    precond_params: int
    kappa: np.ndarray | None = None


def fit_preconditioner(spec: PrecondSpec, train: LabeledPoints, seed: int):
    """Returns (preconditioner, training log, trainable parameter count)."""
    if spec.kind == "none":
        return IdentityPreconditioner(), [], 0
    if spec.kind == "whitening":
        p = whitening_from_data(train.points, float(spec.params.get("ridge", 0.0)),
                                bool(spec.params.get("centered", False)))
        return p, [], 0
    if spec.kind == "normalizing_flow":
        flow = nf_train(train.points, spec.nf_config(seed))
        return flow, flow.train_log, int(flow.params.size)
    arch, hyper, n_steps = spec.lowcap_config(train.dim, seed)
    lowcap = cfm_train(train.points, Schedule("linear"), arch, hyper)
    return flow_pushforward_precond(lowcap, n_steps), lowcap.train_log, int(lowcap.model.param_count)


def _source_draw(cfg: ExperimentConfig, n: int, seed: int, purpose: str, dim: int) -> np.ndarray:
    if cfg.source is None:
        return stream(seed, "source#eval", purpose).standard_normal((n, dim))
    return cfg.source.sample(n, seed, f"eval/{purpose}").points


def run_pipeline(cfg: ExperimentConfig, spec: PrecondSpec, seed: int, train: LabeledPoints,
                 test: LabeledPoints, with_curve: bool = True, with_kappa: bool = False) -> PipelineResult:
    """Precondition the target, train the main field on it, and score samples in data space."""
    ev = cfg.eval
    dim = train.dim
    P, plog, pcount = fit_preconditioner(spec, train, seed)
    train_t = P.forward(train.points)
    if not np.all(np.isfinite(train_t)):
        raise NumericError("preconditioned training set is not finite", where=f"precond:{spec.name}")
    z = _source_draw(cfg, ev.n_eval, seed, "z", dim)
    source = None
    if cfg.source is not None:
        source = cfg.source.sampler(seed, "train")
    curve = []

    def generate(f, n=None):
        return P.inverse(integrate_forward(f, z[:n], ev.n_steps, ev.method).x_end)

    def callback(step, f):
        m = min(ev.curve_n_eval, ev.n_eval)
        curve.append((step, mmd_rbf(generate(f, m), test.points[:m], ev.bandwidths).value))

    hyper = TrainConfig(cfg.hyper.lr, cfg.hyper.batch, cfg.hyper.steps, cfg.hyper.optimizer, seed)
    fld = cfm_train(train_t, cfg.schedule, cfg.arch, hyper, source=source,
                    callback=callback if with_curve else None, callback_every=ev.every)
    x_hat = generate(fld)
    final_mmd = mmd_rbf(x_hat, test.points, ev.bandwidths).value
    if with_curve and (not curve or curve[-1][0] != hyper.steps):
        callback(hyper.steps, fld)
    pushed = integrate_backward(fld, P.forward(test.points), ev.n_steps, ev.method)
    ref = _source_draw(cfg, test.points.shape[0], seed, "reference", dim)
    dist = {
        "z_to_x1": sliced_distance(x_hat, test.points, ev.n_projections, seed).value,
        "x1_to_z": sliced_distance(pushed, ref, ev.n_projections, seed).value,
    }
    kappa = None
    if with_kappa:
        kappa = empirical_condition_trajectory(train_t, cfg.schedule, ev.kappa_ts, ev.n_pairs, seed)
    return PipelineResult(spec.name, P, fld, curve, dist, final_mmd, plog, pcount, kappa)


def _split(cfg: ExperimentConfig, seed: int):
    return (cfg.target.sample(cfg.target.n_train, seed, "train"),
            cfg.target.sample(cfg.target.n_test, seed, "test"))


def _run_methods(cfg: ExperimentConfig, out: _Emitter, with_kappa: bool) -> None:
    dist_rows, mmd_rows, summary = [], [], {}
    for seed in cfg.seeds:
        train, test = _split(cfg, seed)
        for spec in cfg.preconds:
            res = run_pipeline(cfg, spec, seed, train, test, with_curve=True, with_kappa=with_kappa)
            d = f"seed_{seed}/{res.name}"
            out.csv(f"{d}/loss.csv", ["step", "loss"], res.field.train_log)
            out.csv(f"{d}/mmd_curve.csv", ["step", "mmd"], res.mmd_curve)
            if res.precond_log:
                out.csv(f"{d}/precond_loss.csv", ["step", "loss"], res.precond_log)
            if res.kappa is not None:
                out.csv(f"{d}/kappa_vs_t.csv", ["t", "kappa_hat"], res.kappa.tolist())
            mmd_rows += [[seed, res.name, s, v] for s, v in res.mmd_curve]
            for direction in DIRECTIONS:
                dist_rows.append([seed, res.name, direction, res.distances[direction]])
            dist_rows.append([seed, res.name, "mmd", res.final_mmd])
            for key, v in [*res.distances.items(), ("mmd", res.final_mmd)]:
                summary.setdefault((res.name, key), []).append(v)
            out.log(f"{cfg.experiment} seed {seed} {res.name}: mmd {res.final_mmd:.4e}, "
                    f"z->x1 {res.distances['z_to_x1']:.4e}, x1->z {res.distances['x1_to_z']:.4e}")
    out.csv("distances.csv", ["seed", "method", "direction", "value"], dist_rows)
    out.csv("mmd_curves.csv", ["seed", "method", "step", "mmd"], mmd_rows)
    rows = []
    for (name, key), vals in summary.items():
        m, s = mean_std(vals)
        rows.append([name, key, m, s, len(vals)])
    out.csv("summary.csv", ["method", "metric", "mean", "std", "n_seeds"], rows)
    curves = {}
    for seed, name, step, v in mmd_rows:
        curves.setdefault(name, {}).setdefault(step, []).append(v)
    rows = []
    for name, by_step in curves.items():
        steps = sorted(by_step)
        means = np.array([np.mean(by_step[s]) for s in steps])
        rows.append([name, *plateau_stats(np.array(steps), means)])
    out.csv("plateau.csv", ["method", "total_improvement", "late_improvement", "late_fraction"], rows)


def plateau_stats(steps: np.ndarray, values: np.ndarray) -> tuple[float, float, float]:
    """Improvement over the whole curve, over its last quarter of steps, and their ratio."""
    total = float(values[0] - values[-1])
    cut = steps[0] + 0.75 * (steps[-1] - steps[0])
    late = float(np.interp(cut, steps, values) - values[-1])  # curve value at the cut, linearly interpolated
    frac = late / total if total != 0 else float("nan")
    return total, late, frac


def run_precond_compare(cfg: ExperimentConfig, out: _Emitter) -> None:
    _run_methods(cfg, out, with_kappa=True)


def run_fm_2d(cfg: ExperimentConfig, out: _Emitter) -> None:
    _run_methods(cfg, out, with_kappa=False)
    seed = cfg.seeds[0]
    train, test = _split(cfg, seed)
    out.csv(f"seed_{seed}/target_test.csv", ["x0", "x1"], test.points.tolist())


def run_checkerboard_swissroll(cfg: ExperimentConfig, out: _Emitter) -> None:
    _run_methods(cfg, out, with_kappa=False)


def run_kappa_diagnostic(cfg: ExperimentConfig, out: _Emitter) -> None:
    """Empirical kappa of x_t for raw and preconditioned targets, no main training."""
    ev = cfg.eval
    obj = cfg.target.build()
    analytic = None
    if isinstance(obj, SpectralMatrix) and cfg.schedule.kind == "linear":
        analytic = an.condition_trajectory(an.GaussianTransport(obj), ev.kappa_ts)[:, 1]
    rows = []
    for seed in cfg.seeds:
        train, _ = _split(cfg, seed)
        for spec in cfg.preconds:
            P, _, _ = fit_preconditioner(spec, train, seed)
            kh = empirical_condition_trajectory(P.forward(train.points), cfg.schedule, ev.kappa_ts, ev.n_pairs, seed)
            for j, (t, k) in enumerate(kh):
                rows.append([seed, spec.name, t, k, analytic[j] if analytic is not None else float("nan")])
            out.log(f"kappa_diagnostic seed {seed} {spec.name}: kappa_hat(0.9) = {kh[-1, 1]:.4g}")
    out.csv("kappa_diagnostic.csv", ["seed", "method", "t", "kappa_hat", "kappa_analytic"], rows)


RUNNERS = {
    "gaussian_analytic": run_gaussian_analytic,
    "theorem1": run_theorem1,
    "gmm_bottleneck": run_gmm_bottleneck,
    "fm_2d": run_fm_2d,
    "precond_compare": run_precond_compare,
    "kappa_diagnostic": run_kappa_diagnostic,
    "checkerboard_swissroll": run_checkerboard_swissroll,
}


# --------------------------------------------------------------------------
# cross-run distance table

REFERENCE_TABLE = {
    "none": {"z_to_x1": 1.11e-1, "x1_to_z": 8.1e-1},
    "normalizing_flow": {"z_to_x1": 5.8e-2, "x1_to_z": 3.1e-1},
    "flow_pushforward": {"z_to_x1": 7.2e-2, "x1_to_z": 3.4e-1},
}
COMPARE_HEADER = ["method", "z_to_x1_mean", "z_to_x1_std", "x1_to_z_mean", "x1_to_z_std", "n_seeds",
                  "reference_z_to_x1", "reference_x1_to_z", "beats_baseline"]


def compare(manifest_paths, baseline: str = "none") -> list[list]:
    """One row per method with per-seed mean/std in both directions.

    ``beats_baseline`` is true when a method's mean is strictly below the
    baseline's in both directions; it is empty for the baseline itself or
    when no baseline ran.
    """
    per = {}
    order = []
    for mp in manifest_paths:
        mp = Path(mp)
        if not mp.exists():
            raise FileNotFoundError(f"manifest not found: {mp}")
        m = json.loads(mp.read_text())
        if m.get("status") != "ok":
            raise ValidationError(f"run {mp} did not complete")
        if "distances.csv" not in m["emitted_files"]:
            raise ValidationError(f"run {mp} has no distances.csv")
        for r in read_csv(mp.parent / "distances.csv"):
            if r["direction"] not in DIRECTIONS:
                continue
            if r["method"] not in per:
                order.append(r["method"])
            per.setdefault(r["method"], {}).setdefault(r["direction"], []).append(float(r["value"]))
    stats = {name: {d: mean_std(per[name].get(d, [float("nan")])) for d in DIRECTIONS} for name in order}
    rows = []
    for name in order:
        ref = REFERENCE_TABLE.get(name, {})
        if name == baseline or baseline not in stats:
            beats = ""
        else:
            beats = all(stats[name][d][0] < stats[baseline][d][0] for d in DIRECTIONS)
        n = len(per[name].get("z_to_x1", []))
        rows.append([name, *stats[name]["z_to_x1"], *stats[name]["x1_to_z"], n,
                     ref.get("z_to_x1", ""), ref.get("x1_to_z", ""), beats])
    return rows
