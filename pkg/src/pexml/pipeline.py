"""End-to-end orchestration: spaces, stability, dataset, reduction,
training, and evaluation, with every stage persisted and resumable.

Artifacts land in one output directory:

    field.pexf            coefficient field
    spaces.pexs           both coarse bases
    stability.txt         gamma / step-bound report
    manifest.json         per-stage seeds and sampled parameter vectors
    trajectories/         training runs (train_%04d.pext)
    pod.pexp              snapshot basis
    model.pexm            trained network
    train_loss.csv        epoch,loss
    errors.csv            step,t,e1,e2,e3,e4 averaged over the test set
    summary.txt           time-averaged errors and run metadata

Stages pull prerequisites from disk when present, so any stage can run
stand-alone after its predecessors (the CLI maps one subcommand per stage).
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np

from . import errors as err
from . import field as fld
from . import mlp, pod, sources, stepping
from .config import ExperimentConfig
from .grid import build_coarse_decomposition, build_fine_grid
from .spaces import (
    SpacesConfig,
    assemble_spaces,
    build_operators,
    load_spaces,
    save_spaces,
)
from .stability import stability_report


class PipelineError(RuntimeError):
    """A stage failure, tagged with the stage name."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def _stage(name):
    def wrap(fn):
        def run(ctx, *args, **kwargs):
            try:
                return fn(ctx, *args, **kwargs)
            except PipelineError:
                raise
            except Exception as exc:
                raise PipelineError(name, str(exc)) from exc
        run.__name__ = fn.__name__
        run.__doc__ = fn.__doc__
        return run
    return wrap


class PipelineContext:
    """Lazily built shared state of one configured run."""

    def __init__(self, config: ExperimentConfig, out_dir):
        self.config = config
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self._cache = {}

    def path(self, name: str) -> Path:
        return self.out / name

    @property
    def grid(self):
        if "grid" not in self._cache:
            self._cache["grid"] = build_fine_grid(self.config.n)
        return self._cache["grid"]

    @property
    def dec(self):
        if "dec" not in self._cache:
            self._cache["dec"] = build_coarse_decomposition(
                self.grid, self.config.Nc, self.config.layers
            )
        return self._cache["dec"]

    @property
    def kappa(self):
        if "kappa" not in self._cache:
            cfg = self.config
            saved = self.path("field.pexf")
            if saved.exists():
                value = fld.load_field(saved, expected_count=self.grid.tri_count)
            elif cfg.field_path:
                value = fld.load_field(cfg.field_path, expected_count=self.grid.tri_count)
            else:
                value = fld.generate_channel_field(
                    self.grid, cfg.background, cfg.contrast
                )
            self._cache["kappa"] = value
        return self._cache["kappa"]

    @property
    def ops(self):
        if "ops" not in self._cache:
            self._cache["ops"] = build_operators(
                self.dec, self.kappa, self.config.kappa_rule
            )
        return self._cache["ops"]

    @property
    def spaces(self):
        if "spaces" not in self._cache:
            saved = self.path("spaces.pexs")
            if saved.exists():
                self._cache["spaces"] = load_spaces(saved)
            else:
                self._cache["spaces"] = stage_spaces(self)
        return self._cache["spaces"]

    @property
    def initial_state(self):
        return sources.default_initial_condition(self.grid, self.config.u0_amplitude)

    @property
    def stability(self):
        if "stability" not in self._cache:
            self._cache["stability"] = stage_gamma(self)
        return self._cache["stability"]

    def manifest(self) -> dict:
        saved = self.path("manifest.json")
        if "manifest" not in self._cache:
            if saved.exists():
                self._cache["manifest"] = json.loads(saved.read_text())
            else:
                self._cache["manifest"] = stage_manifest(self)
        return self._cache["manifest"]

    def source_load(self, w, with_spaces=True) -> sources.BlockSourceLoad:
        spec = sources.make_source(self.config.example_id, w, self.config.final_time)
        return sources.BlockSourceLoad(
            spec, self.grid, self.spaces if with_spaces else None
        )

    def _scheme_kwargs(self) -> dict:
        cfg = self.config
        return dict(
            stiffness=None if cfg.nonlinear else self.ops.stiffness,
            grid=self.grid if cfg.nonlinear else None,
            kappa=self.kappa if cfg.nonlinear else None,
            nonlinear=cfg.nonlinear,
        )

    @property
    def stepper(self) -> stepping.SplitStepper:
        """Shared split-step machinery (factorizations reused across runs)."""
        if "stepper" not in self._cache:
            cfg = self.config
            self._cache["stepper"] = stepping.SplitStepper(
                self.spaces, self.ops.mass, cfg.dt, picard=cfg.picard,
                **self._scheme_kwargs(),
            )
        return self._cache["stepper"]

    @property
    def first_step(self) -> stepping.CombinedFirstStep:
        if "first_step" not in self._cache:
            cfg = self.config
            self._cache["first_step"] = stepping.CombinedFirstStep(
                self.spaces, self.ops.mass, cfg.dt, picard=cfg.picard,
                **self._scheme_kwargs(),
            )
        return self._cache["first_step"]

    def run_split(self, w, dt_max=None) -> stepping.Trajectory:
        cfg = self.config
        load = self.source_load(w)
        return stepping.run_partially_explicit(
            self.spaces, self.ops.mass, load, self.initial_state, cfg.dt, cfg.nsteps,
            picard=cfg.picard, dt_max=dt_max, reduced_load=load.reduced,
            stepper=self.stepper, first_step=self.first_step,
            **self._scheme_kwargs(),
        )


@_stage("spaces")
def stage_spaces(ctx: PipelineContext):
    """Build grid, field and both coarse bases; persist field + spaces."""
    cfg = ctx.config
    if not ctx.path("field.pexf").exists():
        fld.save_field(ctx.kappa, ctx.path("field.pexf"))
    spaces = assemble_spaces(
        ctx.dec,
        ctx.kappa,
        SpacesConfig(
            aux_per_element=cfg.aux_per_element,
            second_per_element=cfg.second_per_element,
            kappa_rule=cfg.kappa_rule,
        ),
        ops=ctx.ops,
    )
    save_spaces(spaces, ctx.path("spaces.pexs"))
    ctx._cache["spaces"] = spaces
    return spaces


@_stage("gamma")
def stage_gamma(ctx: PipelineContext):
    """Subspace-angle constant and explicit-step bound for the built spaces."""
    cfg = ctx.config
    safety = 0.5 if cfg.nonlinear else 1.0
    report = stability_report(
        ctx.ops.stiffness, ctx.ops.mass, ctx.spaces, cfg.dt, safety=safety
    )
    ctx.path("stability.txt").write_text(report.as_text())
    ctx._cache["stability"] = report
    return report


@_stage("dataset")
def stage_manifest(ctx: PipelineContext) -> dict:
    """Sample the training and testing parameter sets (seeded fan-out)."""
    cfg = ctx.config
    lo, hi = cfg.bounds
    train = mlp.ParameterSampler(cfg.param_count, lo, hi, seed=cfg.seed + 1)
    test = mlp.ParameterSampler(cfg.param_count, lo, hi, seed=cfg.seed + 2)
    manifest = {
        "seed": cfg.seed,
        "stage_seeds": {"train_w": cfg.seed + 1, "test_w": cfg.seed + 2,
                        "mlp": cfg.seed + 3},
        "w_train": train.sample(cfg.train_samples).tolist(),
        "w_test": test.sample(cfg.test_samples).tolist(),
    }
    ctx.path("manifest.json").write_text(json.dumps(manifest, indent=1))
    ctx._cache["manifest"] = manifest
    return manifest


@_stage("dataset")
def stage_dataset(ctx: PipelineContext):
    """Run the split scheme for every training sample and persist the runs."""
    manifest = ctx.manifest()
    traj_dir = ctx.path("trajectories")
    traj_dir.mkdir(exist_ok=True)
    report = ctx.stability
    trajectories = []
    for m, w in enumerate(manifest["w_train"]):
        target = traj_dir / f"train_{m:04d}.pext"
        if target.exists():
            trajectories.append(stepping.load_trajectory(target))
            continue
        traj = ctx.run_split(np.asarray(w), dt_max=report.dt_max)
        stepping.save_trajectory(traj, target)
        trajectories.append(traj)
    return trajectories


@_stage("pod")
def stage_pod(ctx: PipelineContext):
    """Snapshot matrix of the training runs -> orthonormal reduction basis."""
    cfg = ctx.config
    trajectories = stage_dataset(ctx)
    snapshots = pod.build_snapshot_matrix(trajectories)
    basis = pod.compute_pod(
        snapshots, retain=cfg.pod_retain, energy_tol=cfg.pod_energy_tol
    )
    pod.save_pod(basis, ctx.path("pod.pexp"))
    return basis, trajectories


@_stage("train")
def stage_train(ctx: PipelineContext):
    """Fit the network on reduced coordinates of the training runs."""
    cfg = ctx.config
    basis_path = ctx.path("pod.pexp")
    if basis_path.exists():
        basis = pod.load_pod(basis_path)
        trajectories = stage_dataset(ctx)
    else:
        basis, trajectories = stage_pod(ctx)
    manifest = ctx.manifest()
    inputs = np.asarray(manifest["w_train"])
    targets = np.stack(
        [basis.project(traj.c1[2:].T).T.ravel() for traj in trajectories]
    )
    train_config = mlp.TrainConfig(
        learning_rate=cfg.learning_rate, beta1=cfg.beta1, beta2=cfg.beta2,
        eps=cfg.eps, batch_size=cfg.batch_size, epochs=cfg.epochs,
        seed=cfg.seed + 3, hidden=cfg.hidden, bounds=cfg.bounds,
    )
    model, history = mlp.train(inputs, targets, train_config)
    mlp.save_model(model, ctx.path("model.pexm"))
    with open(ctx.path("train_loss.csv"), "w") as fh:
        fh.write("epoch,loss\n")
        for epoch, loss in history:
            fh.write(f"{epoch},{loss:.12g}\n")
    return model, history


@_stage("eval")
def stage_eval(ctx: PipelineContext):
    """Errors of the learned scheme against computed and reference runs."""
    cfg = ctx.config
    model_path = ctx.path("model.pexm")
    model = mlp.load_model(model_path) if model_path.exists() else stage_train(ctx)[0]
    basis = pod.load_pod(ctx.path("pod.pexp"))
    manifest = ctx.manifest()
    report = ctx.stability

    fine_solver = stepping.FineHeatSolver(
        ctx.grid, ctx.kappa, cfg.dt, nonlinear=cfg.nonlinear
    )
    u0 = ctx.initial_state
    series = []
    for w in manifest["w_test"]:
        w = np.asarray(w)
        load = ctx.source_load(w)
        computed = ctx.run_split(w, dt_max=report.dt_max)
        fine = np.empty((cfg.nsteps + 1, ctx.grid.node_count))
        fine[0] = u0
        for n in range(cfg.nsteps):
            fine[n + 1] = fine_solver.step(fine[n], (n + 1) * cfg.dt, load)
        reference = stepping.Trajectory(dt=cfg.dt, c1=fine)

        predicted = mlp.predict_trajectory(model, basis, w, cfg.bounds)
        start = (computed.c1[0], computed.c2[0], computed.c1[1], computed.c2[1])
        learned = stepping.run_explicit_with_given_implicit(
            ctx.spaces, ctx.ops.mass, load, cfg.dt, predicted, start,
            reduced_load=load.reduced, stepper=ctx.stepper,
            history_c1=computed.c1 if cfg.history_mode == "mixed" else None,
            **ctx._scheme_kwargs(),
        )
        series.append(
            err.compute_errors(learned, computed, reference, ctx.spaces, ctx.ops.mass)
        )
    averaged = err.average_series(series)
    err.write_errors_csv(averaged, ctx.path("errors.csv"))
    summary = {
        "avg_e1": averaged.avg_e1,
        "avg_e2": averaged.avg_e2,
        "avg_e3": averaged.avg_e3,
        "avg_e4": averaged.avg_e4,
        "avg_abs_e1_minus_e2": float(np.nanmean(np.abs(averaged.e1 - averaged.e2))),
        "gamma": report.gamma,
        "dt_max": report.dt_max,
        "dt": cfg.dt,
        "test_samples": len(series),
    }
    with open(ctx.path("summary.txt"), "w") as fh:
        for key, value in summary.items():
            fh.write(f"{key}={value:.6g}\n" if isinstance(value, float) else f"{key}={value}\n")
    return averaged, summary


@_stage("simulate")
def stage_simulate(ctx: PipelineContext, w=None):
    """One sample end to end: split run + fine reference, persisted."""
    cfg = ctx.config
    if w is None:
        lo, hi = cfg.bounds
        w = np.full(cfg.param_count, 0.5 * (lo + hi))
    w = np.asarray(w, dtype=np.float64)
    report = ctx.stability
    split = ctx.run_split(w, dt_max=report.dt_max)
    stepping.save_trajectory(split, ctx.path("traj_split.pext"))
    load = ctx.source_load(w, with_spaces=False)
    fine = stepping.backward_euler_fine(
        ctx.grid, ctx.kappa, load, ctx.initial_state, cfg.dt, cfg.nsteps,
        nonlinear=cfg.nonlinear,
    )
    stepping.save_trajectory(fine, ctx.path("traj_fine.pext"))
    return split, fine


def run_pipeline(config: ExperimentConfig, out_dir) -> dict:
    """Execute every stage in order; returns the evaluation summary."""
    ctx = PipelineContext(config, out_dir)
    started = time.perf_counter()
    stage_spaces(ctx)
    stage_gamma(ctx)
    stage_manifest(ctx)
    stage_dataset(ctx)
    stage_pod(ctx)
    stage_train(ctx)
    _, summary = stage_eval(ctx)
    summary["wall_seconds"] = time.perf_counter() - started
    (ctx.path("config.echo.txt")).write_text(config.to_text())
    return summary
