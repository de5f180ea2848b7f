import numpy as np
import pytest

from pexml.config import ExperimentConfig
from pexml.errors import read_errors_csv
from pexml.mlp import load_model
from pexml.pipeline import (
    PipelineContext,
    run_pipeline,
    stage_dataset,
    stage_eval,
    stage_gamma,
    stage_simulate,
)
from pexml.pod import load_pod
from pexml.stepping import load_trajectory


SMOKE = {
    "grid.n": "8",
    "grid.Nc": "2",
    "spaces.L": "2",
    "spaces.J": "1",
    "spaces.layers": "1",
    "time.N": "3",
    "samples.train": "2",
    "samples.test": "2",
    "train.epochs": "40",
    "train.hidden": "8,8",
    "pod.l": "2",
    "field.contrast": "100",
    "seed": "11",
}


@pytest.fixture(scope="module")
def smoke_summary(tmp_path_factory):
    out = tmp_path_factory.mktemp("smoke")
    config = ExperimentConfig.from_mapping(SMOKE)
    summary = run_pipeline(config, out)
    return out, summary


def test_smoke_pipeline_emits_all_artifacts(smoke_summary):
    out, summary = smoke_summary
    for name in (
        "field.pexf", "spaces.pexs", "stability.txt", "manifest.json",
        "pod.pexp", "model.pexm", "train_loss.csv", "errors.csv", "summary.txt",
    ):
        assert (out / name).exists(), name
    assert (out / "trajectories" / "train_0000.pext").exists()
    assert (out / "trajectories" / "train_0001.pext").exists()
    assert summary["test_samples"] == 2
    assert np.isfinite(summary["avg_e3"])


def test_smoke_errors_csv_rows(smoke_summary):
    out, _ = smoke_summary
    series = read_errors_csv(out / "errors.csv")
    assert np.array_equal(series.steps, [2, 3])


def test_smoke_artifacts_parse(smoke_summary):
    out, _ = smoke_summary
    basis = load_pod(out / "pod.pexp")
    assert basis.retained == 2
    model = load_model(out / "model.pexm")
    assert model.output_dim == 2 * 2  # l * (N-1)
    traj = load_trajectory(out / "trajectories" / "train_0000.pext")
    assert traj.nsteps == 3
    lines = (out / "stability.txt").read_text().splitlines()
    assert lines[0].startswith("gamma=")


def test_stage_resumability(smoke_summary, tmp_path):
    out, _ = smoke_summary
    config = ExperimentConfig.from_mapping(SMOKE)
    # a fresh context over the same artifacts reuses them without rebuilding
    ctx = PipelineContext(config, out)
    report = stage_gamma(ctx)
    assert 0.0 < report.gamma < 1.0
    runs = stage_dataset(ctx)
    assert len(runs) == 2
    _, summary = stage_eval(ctx)
    assert np.isfinite(summary["avg_e4"])


def test_simulate_stage(tmp_path):
    config = ExperimentConfig.from_mapping(SMOKE)
    ctx = PipelineContext(config, tmp_path)
    split, fine = stage_simulate(ctx)
    assert (tmp_path / "traj_split.pext").exists()
    assert (tmp_path / "traj_fine.pext").exists()
    assert split.nsteps == fine.nsteps == 3
    assert fine.c2 is None


def test_learned_explicit_update_residual(smoke_summary):
    # substituting the predicted implicit component still solves the explicit
    # equation exactly
    out, _ = smoke_summary
    config = ExperimentConfig.from_mapping(SMOKE)
    ctx = PipelineContext(config, out)
    import json

    from pexml.mlp import predict_trajectory
    from pexml.stepping import (
        reduced_blocks,
        run_explicit_with_given_implicit,
        split_step_residual,
    )

    manifest = json.loads((out / "manifest.json").read_text())
    w = np.asarray(manifest["w_test"][0])
    model = load_model(out / "model.pexm")
    basis = load_pod(out / "pod.pexp")
    load = ctx.source_load(w)
    computed = ctx.run_split(w)
    predicted = predict_trajectory(model, basis, w, config.bounds)
    start = (computed.c1[0], computed.c2[0], computed.c1[1], computed.c2[1])
    learned = run_explicit_with_given_implicit(
        ctx.spaces, ctx.ops.mass, load, config.dt, predicted, start,
        stiffness=ctx.ops.stiffness, reduced_load=load.reduced,
    )
    blocks = reduced_blocks(ctx.spaces, ctx.ops.stiffness, ctx.ops.mass)
    for n in range(1, config.nsteps):
        g1, g2 = load.reduced(n * config.dt)
        _, res2 = split_step_residual(
            blocks, config.dt, learned.c1[n], learned.c2[n],
            learned.c1[n - 1], learned.c2[n - 1],
            learned.c1[n + 1], learned.c2[n + 1], g1, g2,
        )
        assert np.max(np.abs(res2)) < 1e-10 * max(np.abs(g2).max(), 1.0)


def test_oracle_surrogate_isolates_truncation_error(tmp_path):
    # replacing the network with the exact reduced-basis truncation of the
    # computed implicit component leaves only the compression error
    import warnings

    from pexml import errors as err
    from pexml.pod import build_snapshot_matrix, compute_pod
    from pexml.stepping import FineHeatSolver, Trajectory, run_explicit_with_given_implicit

    config = ExperimentConfig.from_mapping({
        "grid.n": "16", "grid.Nc": "4", "spaces.L": "2", "spaces.J": "1",
        "spaces.layers": "1", "time.N": "48", "samples.train": "6",
        "samples.test": "1", "field.contrast": "100", "pod.l": "4", "seed": "3",
    })
    ctx = PipelineContext(config, tmp_path)
    report = stage_gamma(ctx)
    assert config.dt <= report.dt_max  # stable configuration for this check
    runs = stage_dataset(ctx)
    basis = compute_pod(build_snapshot_matrix(runs), retain=4)

    w = np.asarray(ctx.manifest()["w_test"][0])
    computed = ctx.run_split(w)
    load = ctx.source_load(w)
    truncated = (basis.matrix @ (basis.matrix.T @ computed.c1[2:].T)).T
    start = (computed.c1[0], computed.c2[0], computed.c1[1], computed.c2[1])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        oracle_run = run_explicit_with_given_implicit(
            ctx.spaces, ctx.ops.mass, load, config.dt, truncated, start,
            stiffness=ctx.ops.stiffness, reduced_load=load.reduced,
        )
    solver = FineHeatSolver(ctx.grid, ctx.kappa, config.dt)
    fine = np.empty((config.nsteps + 1, ctx.grid.node_count))
    fine[0] = ctx.initial_state
    for n in range(config.nsteps):
        fine[n + 1] = solver.step(fine[n], (n + 1) * config.dt, load)
    series = err.compute_errors(
        oracle_run, computed, Trajectory(dt=config.dt, c1=fine),
        ctx.spaces, ctx.ops.mass,
    )
    # the implicit-component error is exactly the truncation error ...
    r1 = ctx.spaces.basis_implicit
    leftover = (computed.c1[2:] - truncated) @ r1.T
    full = computed.c1[2:] @ r1.T
    direct = 100.0 * np.sqrt(
        np.einsum("nd,nd->n", leftover, (ctx.ops.mass @ leftover.T).T)
        / np.einsum("nd,nd->n", full, (ctx.ops.mass @ full.T).T)
    )
    assert np.allclose(series.e3, direct, rtol=1e-10, atol=1e-12)
    # ... and the full-state error stays at the same scale
    assert series.avg_e4 <= 5.0 * max(series.avg_e3, 1e-9)


def test_cli_stages(tmp_path):
    from pexml.cli import main

    cfg_path = tmp_path / "cfg.txt"
    cfg_path.write_text(
        "\n".join(f"{k} = {v}" for k, v in SMOKE.items()) + "\n"
    )
    out = tmp_path / "out"
    for stage in ("spaces", "gamma", "dataset", "pod", "train", "eval"):
        assert main([stage, "--config", str(cfg_path), "--out", str(out)]) == 0
    assert (out / "errors.csv").exists()
    assert main(["simulate", "--config", str(cfg_path), "--out", str(out),
                 "--w", "2,3,4,5"]) == 0
    assert (out / "traj_split.pext").exists()


def test_cli_bad_config(tmp_path, capsys):
    from pexml.cli import main

    bad = tmp_path / "bad.txt"
    bad.write_text("grid.unknown = 3\n")
    assert main(["gamma", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "unknown configuration key" in capsys.readouterr().err
