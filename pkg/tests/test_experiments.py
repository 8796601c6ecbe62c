import json

import pytest

from resvm.experiments import (
    HISTOGRAM_HEADER,
    TRAJECTORY_HEADER,
    convergence_experiment,
    emit_results,
    excursion_report,
    histogram_experiment,
    read_trajectories_csv,
    regularization_ablation,
    write_experiment_dir,
)
from resvm.optimizer import Method, ResConfig, TrajectoryLog


def _cfgs():
    return ResConfig(), ResConfig(batch_size=1)


def test_convergence_zero_budget():
    logs = convergence_experiment(4, 100, *_cfgs(), budget_samples=0, seeds=[0, 1])
    assert len(logs) == 4
    for lg in logs:
        assert lg.entries == [(0, 0, 1.0)]


def test_convergence_shares_training_set_and_aligns_samples():
    logs = convergence_experiment(3, 200, *_cfgs(), budget_samples=50, seeds=[5])
    res, sgd = logs
    assert res.method is Method.RES and sgd.method is Method.SGD
    assert res.entries[0][2] == sgd.entries[0][2]
    assert res.samples[-1] == sgd.samples[-1] == 50
    assert res.config.max_iters == 10 and sgd.config.max_iters == 50


def test_convergence_rejects_indivisible_budget():
    with pytest.raises(ValueError):
        convergence_experiment(3, 200, *_cfgs(), budget_samples=52, seeds=[0])


def test_histogram_single_replication():
    res = histogram_experiment(4, 100, 50, ResConfig(), "res", replications=1, base_seed=3)
    assert sum(res.counts) == 1
    assert res.replications == 1
    assert res.mean == res.accuracies[0]
    assert len(res.bin_edges) == 51
    assert res.bin_edges[1] == pytest.approx(0.02)


def test_histogram_is_order_independent():
    cfg = ResConfig()
    whole = histogram_experiment(2, 50, 40, cfg, "sgd", replications=4, base_seed=10)
    parts = [histogram_experiment(2, 50, 40, cfg, "sgd", replications=1, base_seed=10 + r) for r in (3, 1, 0, 2)]
    by_seed = {p.base_seed: p.accuracies[0] for p in parts}
    assert whole.accuracies == [by_seed[10 + r] for r in range(4)]


def test_histogram_records_faults_as_zero():
    from resvm.optimizer import Constant

    cfg = ResConfig(schedule=Constant(1e300), batch_size=1)
    res = histogram_experiment(2, 20, 20, cfg, "sgd", replications=2)
    assert res.accuracies == [0.0, 0.0]
    assert res.faults == [0, 1]


def test_ablation_runs_three_methods_on_shared_set():
    logs = regularization_ablation(n=3, N=100, budget_samples=100, base_seed=2)
    assert [lg.method for lg in logs] == [Method.SGD, Method.RES, Method.RES_UNREGULARIZED]
    assert len({lg.entries[0][2] for lg in logs}) == 1
    assert all(lg.samples[-1] == 100 or lg.fault for lg in logs)


def _log(values, L=5, fault=None):
    entries = [(t, L * t, v) for t, v in enumerate(values)]
    return TrajectoryLog(Method.RES, entries, ResConfig(), 0, fault=fault)


def test_excursion_report():
    lg = _log([1.0, 0.5, 0.1, 0.05, 0.04, 0.5, 0.04, 0.04, 0.04, 0.04])
    rep = excursion_report(lg, budget_samples=45)
    assert rep.max_ratio_to_running_min == pytest.approx(0.5 / 0.04)
    assert rep.exceeds(10.0)
    calm = excursion_report(_log([1.0, 0.5, 0.1, 0.05, 0.04, 0.06, 0.04, 0.04, 0.04, 0.04]), 45)
    assert not calm.exceeds(10.0)
    faulted = excursion_report(_log([1.0, 0.5], fault=(2, "non-finite iterate")), 45)
    assert faulted.faulted and faulted.exceeds(10.0)


def test_trajectory_csv_round_trip(tmp_path):
    logs = convergence_experiment(3, 100, *_cfgs(), budget_samples=15, seeds=[0, 1])
    path = tmp_path / "t.csv"
    emit_results(logs, path)
    groups = read_trajectories_csv(path)
    assert [(m, s) for m, s, _ in groups] == [(lg.method.value, lg.seed) for lg in logs]
    for (_, _, entries), lg in zip(groups, logs):
        assert entries == lg.entries


def test_empty_log_list_is_header_only(tmp_path):
    path = tmp_path / "e.csv"
    emit_results([], path)
    assert path.read_text().strip() == ",".join(TRAJECTORY_HEADER)


def test_three_entry_log_rows(tmp_path):
    lg = _log([1.0, 0.5, 0.25])
    path = tmp_path / "three.csv"
    emit_results([lg], path)
    lines = path.read_text().strip().splitlines()
    assert lines[1:] == ["res,0,0,0,1", "res,0,1,5,0.5", "res,0,2,10,0.25"]


def test_seventeen_digit_output(tmp_path):
    lg = _log([1 / 3])
    path = tmp_path / "p.csv"
    emit_results([lg], path)
    value = path.read_text().strip().splitlines()[1].split(",")[-1]
    assert value == "0.33333333333333331"
    assert float(value) == 1 / 3


def test_histogram_outputs(tmp_path):
    res = histogram_experiment(2, 20, 20, ResConfig(), "res", replications=3)
    path = tmp_path / "h.csv"
    emit_results(res, path)
    rows = path.read_text().strip().splitlines()
    assert rows[0] == ",".join(HISTOGRAM_HEADER)
    assert len(rows) == 51
    assert sum(int(r.split(",")[2]) for r in rows[1:]) == 3
    sidecar = json.loads(path.with_suffix(".json").read_text())
    assert sidecar["mean"] == res.mean and sidecar["seeds"] == [0, 1, 2]
    emit_results(res, tmp_path / "h.json", format="json")
    assert json.loads((tmp_path / "h.json").read_text())["replications"] == 3


def test_experiment_dir_layout(tmp_path):
    logs = convergence_experiment(3, 100, *_cfgs(), budget_samples=10, seeds=[7])
    manifest = write_experiment_dir(tmp_path, "convergence", logs, {"seeds": [7]})
    assert (tmp_path / "convergence" / "res_seed7.csv").exists()
    assert (tmp_path / "convergence" / "sgd_seed7.csv").exists()
    data = json.loads(manifest.read_text())
    assert data["generator"] == "numpy.random.PCG64"
    assert data["runs"][0]["config"]["lambda"] == 1e-3
    assert "numpy" in data["versions"]


def test_emit_rejects_unknown_format(tmp_path):
    with pytest.raises(ValueError):
        emit_results([], tmp_path / "x", format="xml")
