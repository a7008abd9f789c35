"""Episode runner, success-rate metric, and multi-seed suite orchestration.

One episode runs the full reverse-diffusion loop: particles start as pure
noise, every step applies one-step denoising, the ancestral update, and
measurement guidance; at scheduled steps (while budget remains) the policy
scores the unmeasured locations, one is revealed, and the reward model is
refit on everything revealed so far. The scene lives on [0, 1] cell values
while the sampler runs on [-1, 1]; revealed contents are mapped into sampler
space for guidance and kept raw for the reward dataset.

The per-task success metric divides the collected target ratio by
min(budget, number of target locations); a suite averages it over seeds and
reports mean, population std, and runtime per (policy, budget) row.
"""

from __future__ import annotations

import concurrent.futures
import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from gridseek.belief import BeliefConfig, ParticleBatch, marginal_entropy, score_field
from gridseek.diffusion import (
    GaussianMixturePrior,
    GuidanceConfig,
    ancestral_step,
    gmm_score,
    gmm_score_hessian,
    guidance_step,
    make_schedule,
    tweedie_denoise,
)
from gridseek.env import (
    Scene,
    gen_gmm_scene,
    load_grid_dir,
    load_scene,
    make_blob_prior,
    measure,
)
from gridseek.policy import (
    EpisodeState,
    PolicyConfig,
    build_measurement_schedule,
    combined_score,
    kappa,
    select_from_field,
)
from gridseek.reward import RewardNet, predict, train

__all__ = [
    "ConfigError",
    "ScheduleSpec",
    "SceneSpec",
    "RewardSpec",
    "ExperimentConfig",
    "StepRecord",
    "EpisodeResult",
    "run_episode",
    "success_rate",
    "run_suite",
    "write_suite_csv",
    "default_benchmark_config",
]


class ConfigError(ValueError):
    """Raised before any computation when a configuration key is invalid."""


def to_engine(values: np.ndarray) -> np.ndarray:
    """Map unit-interval cell values onto the sampler's [-1, 1] range."""
    return 2.0 * np.asarray(values, dtype=float) - 1.0


def to_unit(values: np.ndarray) -> np.ndarray:
    return (np.asarray(values, dtype=float) + 1.0) / 2.0


@dataclass
class ScheduleSpec:
    steps: int = 200
    beta_min: float = 1e-4
    beta_max: float = 0.02
    curve: str = "linear"
    sigma_mode: str = "posterior"

    def build(self):
        return make_schedule(self.steps, self.beta_min, self.beta_max,
                             self.curve, self.sigma_mode)


@dataclass
class SceneSpec:
    """Where scenes come from: a synthetic mixture or a grid file."""

    kind: str = "blobs"
    # blobs
    rows: int = 16
    cols: int = 16
    components: int = 8
    blobs_per_component: int = 2
    background: float = 0.1
    amplitude: float = 0.8
    radius: float = 2.0
    variance: float = 0.0016
    threshold: float = 0.5
    layout_seed: int = 0
    # file
    path: str | None = None
    format: str | None = None
    target: str = "auto"
    # shared
    block: int = 1
    noise: tuple[float, float] | None = None

    def validate(self) -> None:
        if self.kind not in ("blobs", "file"):
            raise ConfigError(f"scene.kind must be 'blobs' or 'file', got {self.kind!r}")
        if self.kind == "blobs":
            if self.rows < 1 or self.cols < 1:
                raise ConfigError("scene.rows and scene.cols must be positive")
            if self.components < 1:
                raise ConfigError("scene.components must be >= 1")
            if not 0.0 < self.threshold < 1.0:
                raise ConfigError("scene.threshold must lie in (0, 1)")
        elif self.path is None:
            raise ConfigError("scene.path is required when scene.kind is 'file'")
        if self.block < 1:
            raise ConfigError("scene.block must be >= 1")
        if self.noise is not None and len(self.noise) != 2:
            raise ConfigError("scene.noise must be [mu, sigma]")


@dataclass
class RewardSpec:
    hidden: tuple[int, ...] = (16, 8)
    epochs: int = 3
    lr: float = 0.01

    def validate(self) -> None:
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ConfigError("reward.hidden must list positive layer widths")
        if self.epochs < 1:
            raise ConfigError("reward.epochs must be >= 1")
        if not self.lr >= 0.0:
            raise ConfigError("reward.lr must be non-negative")


@dataclass
class ExperimentConfig:
    scene: SceneSpec = field(default_factory=SceneSpec)
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    budget: int = 32
    particles: int = 8
    zeta: float = 1.0
    jacobian_mode: str = "scaled-identity"
    sigma_x2: float = 1.0
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    reward: RewardSpec = field(default_factory=RewardSpec)
    seeds: list[int] = field(default_factory=lambda: [1])
    out_dir: str = "results"
    prior: dict | None = None

    def validate(self) -> None:
        self.scene.validate()
        self.reward.validate()
        if self.budget < 1:
            raise ConfigError("budget must be >= 1")
        if self.particles < 2:
            raise ConfigError("particles must be >= 2")
        if self.schedule.steps < 1:
            raise ConfigError("schedule.steps must be >= 1")
        if self.budget > self.schedule.steps:
            raise ConfigError(
                f"budget {self.budget} exceeds schedule.steps {self.schedule.steps}"
            )
        if not self.sigma_x2 > 0.0:
            raise ConfigError("sigma_x2 must be positive")
        if not (math.isfinite(self.zeta) and self.zeta >= 0.0):
            raise ConfigError("zeta must be finite and non-negative")
        if self.jacobian_mode not in ("scaled-identity", "exact"):
            raise ConfigError(f"jacobian_mode {self.jacobian_mode!r} unknown")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.scene.kind == "file" and self.prior is None:
            raise ConfigError("prior is required for file scenes")
        try:
            PolicyConfig(**vars(self.policy))
        except ValueError as exc:
            raise ConfigError(f"policy: {exc}") from exc

    # ---------------------------------------------------------- dict round trip

    def to_dict(self) -> dict:
        doc = {
            "scene": {k: (list(v) if isinstance(v, tuple) else v)
                      for k, v in vars(self.scene).items()},
            "schedule": dict(vars(self.schedule)),
            "budget": self.budget,
            "particles": self.particles,
            "zeta": self.zeta,
            "jacobian_mode": self.jacobian_mode,
            "sigma_x2": self.sigma_x2,
            "policy": dict(vars(self.policy)),
            "reward": {"hidden": list(self.reward.hidden),
                       "epochs": self.reward.epochs, "lr": self.reward.lr},
            "seeds": list(self.seeds),
            "out_dir": self.out_dir,
        }
        if self.prior is not None:
            doc["prior"] = self.prior
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        def sub(section, maker, current):
            raw = doc.get(section)
            if raw is None:
                return current
            if not isinstance(raw, dict):
                raise ConfigError(f"{section} must be an object")
            known = vars(current)
            for key in raw:
                if key not in known:
                    raise ConfigError(f"unknown key {section}.{key}")
            return maker(**{**known, **raw})

        cfg = cls()
        known = set(vars(cfg))
        for key in doc:
            if key not in known:
                raise ConfigError(f"unknown key {key}")
        scene = sub("scene", SceneSpec, cfg.scene)
        if scene.noise is not None:
            scene.noise = tuple(scene.noise)
        schedule = sub("schedule", ScheduleSpec, cfg.schedule)
        try:
            policy = sub("policy", PolicyConfig, cfg.policy)
        except ValueError as exc:
            raise ConfigError(f"policy: {exc}") from exc
        reward = sub("reward", RewardSpec, cfg.reward)
        reward.hidden = tuple(reward.hidden)
        return cls(
            scene=scene,
            schedule=schedule,
            budget=int(doc.get("budget", cfg.budget)),
            particles=int(doc.get("particles", cfg.particles)),
            zeta=float(doc.get("zeta", cfg.zeta)),
            jacobian_mode=doc.get("jacobian_mode", cfg.jacobian_mode),
            sigma_x2=float(doc.get("sigma_x2", cfg.sigma_x2)),
            policy=policy,
            reward=reward,
            seeds=[int(s) for s in doc.get("seeds", cfg.seeds)],
            out_dir=doc.get("out_dir", cfg.out_dir),
            prior=doc.get("prior"),
        )

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(doc)


def build_unit_prior(cfg: ExperimentConfig) -> GaussianMixturePrior:
    """The engine's scene prior on [0, 1] cell values."""
    if cfg.scene.kind == "blobs":
        return make_blob_prior(
            (cfg.scene.rows, cfg.scene.cols),
            n_components=cfg.scene.components,
            layout_seed=cfg.scene.layout_seed,
            blobs_per_component=cfg.scene.blobs_per_component,
            background=cfg.scene.background,
            amplitude=cfg.scene.amplitude,
            radius=cfg.scene.radius,
            variance=cfg.scene.variance,
        )
    spec = cfg.prior
    kind = spec.get("kind") if isinstance(spec, dict) else None
    if kind == "json":
        return GaussianMixturePrior.from_json(spec["path"])
    if kind == "dir":
        grids = load_grid_dir(spec["path"])
        return GaussianMixturePrior.from_grids(grids, float(spec.get("variance", 1e-3)))
    raise ConfigError("prior.kind must be 'json' or 'dir'")


def build_scene(cfg: ExperimentConfig, prior_unit: GaussianMixturePrior,
                rng: np.random.Generator) -> Scene:
    if cfg.scene.kind == "blobs":
        return gen_gmm_scene(
            prior_unit, cfg.scene.threshold, rng,
            shape=(cfg.scene.rows, cfg.scene.cols),
            block=cfg.scene.block, noise=cfg.scene.noise,
        )
    return load_scene(cfg.scene.path, fmt=cfg.scene.format,
                      target=cfg.scene.target, block=cfg.scene.block,
                      noise=cfg.scene.noise)


@dataclass(frozen=True)
class StepRecord:
    t: int
    tau: int
    location: int
    expl: float
    likeli: float
    reward_sum: float
    exploit: float
    combined: float
    y: float
    entropy: float


TRACE_HEADER = "t,tau,location,expl,likeli,reward,exploit,combined,y,entropy"


@dataclass
class EpisodeResult:
    policy: str
    seed: int
    budget: int
    u: int
    records: list[StepRecord]
    r_total: float
    wall_time: float

    @property
    def sr_term(self) -> float:
        """Collected ratio over min(budget, target locations); 1 if nothing to find."""
        if self.u == 0:
            return 1.0
        return self.r_total / min(self.budget, self.u)

    def trace_csv(self) -> str:
        lines = [TRACE_HEADER]
        for r in self.records:
            lines.append(
                f"{r.t},{r.tau},{r.location},{r.expl!r},{r.likeli!r},"
                f"{r.reward_sum!r},{r.exploit!r},{r.combined!r},{r.y!r},{r.entropy!r}"
            )
        return "\n".join(lines) + "\n"

    def write_trace(self, path) -> None:
        Path(path).write_text(self.trace_csv())


def run_episode(cfg: ExperimentConfig, seed: int,
                field_sink=None) -> EpisodeResult:
    """Play one full episode under the configured policy.

    ``field_sink``, if given, receives (t, tau, ScoreField) right after each
    measurement's scores are computed, for score-field dumps.
    """
    cfg.validate()
    ss = np.random.SeedSequence(seed)
    children = ss.spawn(4 + cfg.particles)
    scene_rng = np.random.default_rng(children[0])
    noise_rng = np.random.default_rng(children[1])
    policy_rng = np.random.default_rng(children[2])
    reward_seed = int(children[3].generate_state(1)[0])
    particle_rngs = [np.random.default_rng(c) for c in children[4:]]

    prior_unit = build_unit_prior(cfg)
    scene = build_scene(cfg, prior_unit, scene_rng)
    if prior_unit.dimension != scene.n_cells:
        raise ConfigError(
            f"prior dimension {prior_unit.dimension} does not match scene "
            f"cells {scene.n_cells}"
        )
    prior = prior_unit.affine(2.0, -1.0)
    sched = cfg.schedule.build()
    score_fn = lambda x, tau: gmm_score(x, tau, prior, sched)
    hessian_fn = None
    if cfg.jacobian_mode == "exact":
        hessian_fn = lambda x, tau: gmm_score_hessian(x, tau, prior, sched)
    gcfg = GuidanceConfig(zeta=cfg.zeta, jacobian_mode=cfg.jacobian_mode)
    bcfg = BeliefConfig(sigma_x2=cfg.sigma_x2)
    schedule_set = build_measurement_schedule(sched.T, cfg.budget)

    patch_area = scene.block**2
    net = RewardNet.create([patch_area, *cfg.reward.hidden, 1], reward_seed)
    state = EpisodeState.fresh(scene, cfg.budget)
    coord_table = scene.all_location_cells()

    dim = scene.n_cells
    particles = np.stack([r.standard_normal(dim) for r in particle_rngs])
    records: list[StepRecord] = []

    start = time.perf_counter()
    for tau in range(sched.T, 0, -1):
        x_hat = tweedie_denoise(particles, tau, score_fn, sched)
        z = np.stack([r.standard_normal(dim) for r in particle_rngs])
        x_prime = ancestral_step(particles, x_hat, tau, z, sched)
        particles = guidance_step(x_prime, particles, state.log, tau, gcfg,
                                  score_fn, sched, hessian_fn, x_hat=x_hat)

        if tau in schedule_set and state.budget_left > 0 and state.candidates:
            snapshot = ParticleBatch.of(to_unit(x_hat), tau)
            reward_fn = lambda patches: predict(net, np.clip(patches, 0.0, 1.0))
            cands = list(state.candidates)
            field_now = score_field(snapshot, cands, coord_table[cands], bcfg,
                                    reward_fn)
            kval = cfg.policy.kappa_override
            if kval is None:
                kval = kappa(cfg.budget, state.t, cfg.policy.alpha)
            field_now.combined = combined_score(
                field_now, kval, cfg.policy.combine_mode, cfg.policy.normalize
            )
            location = select_from_field(cfg.policy, state, field_now, policy_rng)
            if field_sink is not None:
                field_sink(state.t, tau, field_now)
            picked = cands.index(location)
            m = measure(scene, location, noise_rng, step=state.t,
                        measured=set(state.log.locations))
            state.apply(m, to_engine(m.content))
            net = train(net, state.dataset, cfg.reward.epochs, cfg.reward.lr)
            records.append(StepRecord(
                t=state.t, tau=tau, location=location,
                expl=float(field_now.exploration[picked]),
                likeli=float(field_now.likelihood[picked]),
                reward_sum=float(field_now.reward[picked]),
                exploit=float(field_now.exploitation[picked]),
                combined=float(field_now.combined[picked]),
                y=m.y, entropy=marginal_entropy(snapshot, bcfg),
            ))
    wall = time.perf_counter() - start

    return EpisodeResult(
        policy=cfg.policy.kind, seed=seed, budget=cfg.budget,
        u=scene.n_target_locations, records=records,
        r_total=state.r_total, wall_time=wall,
    )


def success_rate(results, B: int) -> float:
    """Mean over tasks of collected ratio / min(B, targets present)."""
    if not results:
        raise ValueError("success_rate needs at least one episode result")
    terms = []
    for r in results:
        if r.u == 0:
            terms.append(1.0)
        else:
            terms.append(r.r_total / min(B, r.u))
    return float(np.mean(terms))


def _suite_cell(args):
    cfg, seed = args
    return run_episode(cfg, seed)


def run_suite(cfg: ExperimentConfig, policies=None, budgets=None, jobs: int = 1):
    """Run the (policy x budget x seed) matrix and aggregate per cell.

    Returns (rows, failures): rows are dicts sorted by (policy, budget),
    failures list (policy, budget, seed, message) without aborting the rest.
    """
    cfg.validate()
    if policies is None:
        policies = [cfg.policy.kind]
    if budgets is None:
        budgets = [cfg.budget]
    cells = []
    for kind in policies:
        for budget in budgets:
            sub = replace(
                cfg, policy=replace(cfg.policy, kind=kind), budget=budget
            )
            sub.validate()
            cells.append((kind, budget, sub))

    tasks = [(kind, budget, sub, seed)
             for kind, budget, sub in cells for seed in cfg.seeds]
    outcomes: dict[tuple, EpisodeResult] = {}
    failures: list[tuple] = []

    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            futs = {
                pool.submit(_suite_cell, (sub, seed)): (kind, budget, seed)
                for kind, budget, sub, seed in tasks
            }
            for fut in concurrent.futures.as_completed(futs):
                key = futs[fut]
                try:
                    outcomes[key] = fut.result()
                except Exception as exc:  # noqa: BLE001 - reported, not fatal
                    failures.append((*key, str(exc)))
    else:
        for kind, budget, sub, seed in tasks:
            try:
                outcomes[(kind, budget, seed)] = run_episode(sub, seed)
            except Exception as exc:  # noqa: BLE001
                failures.append((kind, budget, seed, str(exc)))

    rows = []
    for kind, budget, _ in cells:
        got = [outcomes[(kind, budget, s)] for s in cfg.seeds
               if (kind, budget, s) in outcomes]
        if not got:
            continue
        terms = np.array([r.sr_term for r in got])
        rows.append({
            "policy": kind,
            "B": budget,
            "mean_SR": float(terms.mean()),
            "std_SR": float(terms.std()),
            "n_seeds": len(got),
            "mean_runtime": float(np.mean([r.wall_time for r in got])),
        })
    rows.sort(key=lambda r: (r["policy"], r["B"]))
    failures.sort()
    return rows, failures


def write_suite_csv(rows, path) -> None:
    lines = ["policy,B,mean_SR,std_SR,n_seeds,mean_runtime"]
    for r in rows:
        lines.append(
            f"{r['policy']},{r['B']},{r['mean_SR']!r},{r['std_SR']!r},"
            f"{r['n_seeds']},{r['mean_runtime']!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def default_benchmark_config() -> ExperimentConfig:
    """The shipped synthetic benchmark: 16x16 scenes from an 8-way mixture."""
    return ExperimentConfig(
        scene=SceneSpec(kind="blobs", rows=16, cols=16, components=8,
                        blobs_per_component=2, background=0.1, amplitude=0.8,
                        radius=2.0, variance=0.0016, threshold=0.5,
                        layout_seed=0),
        schedule=ScheduleSpec(steps=200),
        budget=32,
        particles=8,
        zeta=1.0,
        sigma_x2=1.0,
        policy=PolicyConfig(kind="diffatd"),
        reward=RewardSpec(),
        seeds=list(range(1, 25)),
    )
