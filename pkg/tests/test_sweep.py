import math

import numpy as np
import pytest

from oracles import pareto_bruteforce
from spatialnmf.metrics import MetricReport, read_reports_csv, reports_to_csv
from spatialnmf.sweep import (DEFAULT_K_GRID, DEFAULT_RHO_GRID, SweepConfig, canonical_method, dominates,
                              export_table, load_sweep_config, pareto_front, point_seed, run_sweep, sort_reports)


def fake(chaos, moran, sil, dbi, k=5, rho=0.1, method="hsnmf"):
    return MetricReport(method, k, rho, 3, chaos, moran, sil, dbi)


def random_reports(rng, n, coarse=False):
    vals = rng.integers(0, 3, (n, 4)).astype(float) if coarse else rng.random((n, 4))
    return [fake(*v, k=i, rho=0.1 * (i % 3 + 1)) for i, v in enumerate(vals)]


@pytest.fixture(scope="module")
def default_sweep(small_synth):
    _, ds, _ = small_synth
    return run_sweep(ds, SweepConfig(), workers=4)


def test_small_grid_cardinality_and_order(small_synth):
    _, ds, _ = small_synth
    cfg = SweepConfig(k_grid=(4, 3), rho_grid=(0.5, 0.2))
    reports = run_sweep(ds, cfg)
    assert [(r.k, r.resolution) for r in reports] == [(4, 0.5), (4, 0.2), (3, 0.5), (3, 0.2)]
    assert all(r.method == "hsnmf" and not r.failed for r in reports)


def test_default_grid(default_sweep):
    assert len(default_sweep) == len(DEFAULT_K_GRID) * len(DEFAULT_RHO_GRID) == 88
    assert not any(r.failed for r in default_sweep)
    front = pareto_front(default_sweep)
    assert front
    assert [r.row() for r in front] == [r.row() for r in pareto_bruteforce(default_sweep)]


def test_sweep_deterministic_across_workers(small_synth):
    _, ds, _ = small_synth
    cfg = SweepConfig(method="snmf", k_grid=(3, 4, 5), rho_grid=(0.3, 0.9), seed=7)
    a = reports_to_csv(run_sweep(ds, cfg, workers=1))
    b = reports_to_csv(run_sweep(ds, cfg, workers=3))
    assert a == b


def test_point_seeds_differ_per_point():
    seeds = {point_seed(0, k, r) for k in DEFAULT_K_GRID for r in DEFAULT_RHO_GRID}
    assert len(seeds) == 88
    assert point_seed(1, 5, 0.1) != point_seed(0, 5, 0.1)
    assert point_seed(0, 5, 0.1) == point_seed(0, 5, 0.1)


def test_resume_reuses_checkpoints(small_synth, tmp_path):
    _, ds, _ = small_synth
    cfg = SweepConfig(k_grid=(3, 4), rho_grid=(0.2, 0.6, 1.0))
    full = run_sweep(ds, cfg, checkpoint_dir=tmp_path / "a")
    files = sorted((tmp_path / "a").glob("*.json"))
    assert len(files) == 6
    # simulate an interruption: keep only two finished points
    for f in files[2:]:
        f.unlink()
    resumed = run_sweep(ds, cfg, checkpoint_dir=tmp_path / "a", resume=True)
    assert reports_to_csv(resumed) == reports_to_csv(full)
    # stored points are read, not recomputed
    target = tmp_path / "a" / "hsnmf_k3_rho0.2.json"
    doctored = fake(9.0, 0.0, 0.0, 9.0, k=3, rho=0.2)
    target.write_text(doctored.to_json() + "\n")
    again = run_sweep(ds, cfg, checkpoint_dir=tmp_path / "a", resume=True)
    assert again[0].chaos == 9.0
    fresh = run_sweep(ds, cfg, checkpoint_dir=tmp_path / "a", resume=False)
    assert fresh[0].chaos == full[0].chaos


def test_failed_points_become_error_rows(small_synth):
    _, ds, _ = small_synth
    cfg = SweepConfig(method="nmf", k_grid=(3, 500), rho_grid=(0.5,))
    reports = run_sweep(ds, cfg)
    assert not reports[0].failed
    assert reports[1].failed and reports[1].clusters == 0 and math.isnan(reports[1].chaos)
    assert pareto_front(reports) == [reports[0]]


def test_sweep_config_validation_and_aliases():
    assert SweepConfig(method="nmf_plain").method == "nmf"
    assert canonical_method("snmf") == "snmf"
    with pytest.raises(ValueError):
        SweepConfig(method="pca")
    with pytest.raises(ValueError):
        SweepConfig(k_grid=())
    with pytest.raises(ValueError):
        SweepConfig(rho_grid=(0.0,))
    with pytest.raises(ValueError):
        SweepConfig(alpha=1.5)
    assert len(SweepConfig(k_grid=(5, 10), rho_grid=(0.1, 0.2)).points) == 4


def test_load_sweep_config(tmp_path):
    path = tmp_path / "s.toml"
    path.write_text('[sweep]\nmethod = "nmf_plain"\nk_grid = [5, 10]\nrho_grid = [0.4]\nseed = 3\n')
    cfg = load_sweep_config(path)
    assert cfg == SweepConfig(method="nmf", k_grid=(5, 10), rho_grid=(0.4,), seed=3)
    assert load_sweep_config(path, seed=9, alpha=None).seed == 9
    flat = tmp_path / "f.toml"
    flat.write_text("alpha = 0.25\n")
    assert load_sweep_config(flat).alpha == 0.25
    bad = tmp_path / "b.toml"
    bad.write_text("gamma = 1\n")
    with pytest.raises(ValueError, match="gamma"):
        load_sweep_config(bad)


# -- Pareto -------------------------------------------------------------------------------

def test_pareto_basic_cases():
    a = fake(0.1, 0.9, 0.5, 0.5)
    b = fake(0.2, 0.8, 0.4, 0.6)
    assert pareto_front([a]) == [a]
    assert pareto_front([b, a]) == [a]
    assert dominates(a, b) and not dominates(b, a) and not dominates(a, a)
    tie = fake(0.1, 0.9, 0.5, 0.5, k=10)
    assert pareto_front([a, tie]) == [a, tie]
    nan = fake(float("nan"), 1.0, 1.0, 0.0)
    assert pareto_front([nan, b]) == [b]
    assert pareto_front([]) == []


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("coarse", [False, True])
def test_pareto_matches_oracle(seed, coarse):
    rng = np.random.default_rng(seed)
    reports = random_reports(rng, 20, coarse)
    front = pareto_front(reports)
    assert front == pareto_bruteforce(reports)
    # certificate: everything excluded is dominated by a front member
    for r in reports:
        if r not in front:
            assert any(dominates(f, r) for f in front)


@pytest.mark.parametrize("seed", range(5))
def test_pareto_permutation_and_dominated_additions(seed):
    rng = np.random.default_rng(seed)
    reports = random_reports(rng, 25, coarse=seed % 2 == 0)
    front = {id(r) for r in pareto_front(reports)}
    shuffled = [reports[i] for i in rng.permutation(25)]
    assert {id(r) for r in pareto_front(shuffled)} == front
    worst = max(reports, key=lambda r: r.chaos)
    extra = fake(worst.chaos + 1, worst.morans_i - 1, worst.silhouette - 1, worst.dbi + 1)
    assert {id(r) for r in pareto_front(reports + [extra])} == front


# -- export -------------------------------------------------------------------------------

def test_export_table_sorted_round_trip_and_stable(tmp_path):
    reports = [fake(0.1, 0.9, 0.5, 0.5, k=10, rho=0.2), fake(0.2, 0.8, 0.4, 0.6, k=5, rho=1.2),
               fake(0.3, 0.7, 0.3, 0.7, k=5, rho=0.4, method="snmf"), fake(0.1, 0.9, 0.5, 0.5, k=5, rho=0.3)]
    path = export_table(reports, tmp_path / "t.csv")
    back = read_reports_csv(path)
    assert [r.row() for r in back] == [r.row() for r in sort_reports(reports)]
    assert [(r.method, r.k, r.resolution) for r in back] == [
        ("hsnmf", 5, 0.3), ("hsnmf", 5, 1.2), ("hsnmf", 10, 0.2), ("snmf", 5, 0.4)]
    first = path.read_bytes()
    export_table(list(reversed(reports)), path)
    assert path.read_bytes() == first


def test_export_empty_front(tmp_path):
    path = export_table(pareto_front([]), tmp_path / "p.csv")
    assert path.read_text() == "method,k,resolution,clusters,chaos,morans_i,silhouette,dbi,cmc,mer,enrichment\n"
