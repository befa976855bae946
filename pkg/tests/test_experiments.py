import math

import numpy as np
import pytest

from rsma_mmf.experiments import (
    CSV_HEADER,
    ConfigError,
    ResultRow,
    SweepConfig,
    budget_from_snr,
    csv_text,
    generate_rayleigh,
    gnuplot_tables,
    load_config,
    parse_config,
    read_csv,
    relative_gain,
    run_sweep,
    write_outputs,
)


def small_config(**kw):
    base = dict(snr_db_list=(0.0, 10.0, 20.0), blocklength_list=(500.0,), realizations=4,
                schemes=("rsma", "noma"), seed=3)
    base.update(kw)
    return SweepConfig(**base)


def test_rayleigh_deterministic():
    a = generate_rayleigh(3, 10, 42)
    b = generate_rayleigh(3, 10, 42)
    assert all(np.array_equal(x.gains, y.gains) for x, y in zip(a, b))
    c = generate_rayleigh(3, 10, 43)
    assert not np.array_equal(a[0].gains, c[0].gains)


def test_rayleigh_prefix_sharing():
    small = generate_rayleigh(2, 5, 7)
    large = generate_rayleigh(5, 5, 7)
    for s, l in zip(small, large):
        assert np.array_equal(s.gains, l.gains[:2])


def test_rayleigh_exponential_statistics():
    gains = np.concatenate([ch.gains for ch in generate_rayleigh(10, 10_000, 0)])
    assert gains.size == 100_000
    assert 0.98 <= gains.mean() <= 1.02
    assert 0.625 <= np.mean(gains <= 1.0) <= 0.640


def test_rayleigh_rejects_zero_users():
    with pytest.raises(ValueError):
        generate_rayleigh(0, 1, 0)


def test_relative_gain():
    assert relative_gain(1.0, 1.0) == 0.0
    assert relative_gain(1.08, 1.0) == pytest.approx(8.0)
    assert relative_gain(0.9, 1.0) == pytest.approx(-10.0)
    with pytest.raises(ZeroDivisionError):
        relative_gain(1.0, 0.0)


def test_budget_from_snr():
    assert budget_from_snr(20.0) == pytest.approx(100.0)
    assert budget_from_snr(0.0, noise_power=2.0) == pytest.approx(2.0)


@pytest.mark.parametrize("kw", [
    dict(snr_db_list=()),
    dict(realizations=0),
    dict(schemes=("oma",)),
    dict(split_counts=(3,)),
    dict(order_policy="random"),
    dict(num_users=6, split_counts=(2,), order_policy="exhaustive"),
    dict(epsilon=2.0),
])
def test_config_invariants(kw):
    with pytest.raises(ConfigError):
        small_config(**kw)


def test_row_cardinality():
    result = run_sweep(small_config(realizations=100, blocklength_list=(math.inf,)))
    assert len(result.rows) == 2 * 3 * 1 * 100


def test_rows_ordered_and_paired():
    result = run_sweep(small_config())
    keys = [(r.snr_db, r.blocklength, r.realization) for r in result.rows]
    assert keys == sorted(keys)
    for snr in (0.0, 10.0, 20.0):
        rsma = result.values("rsma", 1, snr, 500.0)
        noma = result.values("noma", 0, snr, 500.0)
        assert np.all(rsma >= noma - 1e-3)


def test_sweep_is_byte_identical():
    cfg = small_config()
    assert csv_text(run_sweep(cfg).rows) == csv_text(run_sweep(cfg).rows)


def test_parallel_matches_serial():
    cfg = small_config(realizations=3)
    assert csv_text(run_sweep(cfg, jobs=2).rows) == csv_text(run_sweep(cfg).rows)


def test_csv_format_and_roundtrip(tmp_path):
    cfg = small_config(blocklength_list=(math.inf, 250.0), snr_db_list=(10.0,), realizations=2)
    result = run_sweep(cfg)
    paths = write_outputs(result, tmp_path)
    text = (tmp_path / "results.csv").read_text()
    lines = text.splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert ",inf," in lines[1]
    assert all(line.endswith(",0.000") for line in lines[1:])
    rows = read_csv(tmp_path / "results.csv")
    assert [r.min_rate for r in rows] == [r.min_rate for r in result.rows]
    assert {p.name for p in paths} == {"results.csv", "table_Ninf.dat", "table_N250.dat"}


def test_gnuplot_table_layout():
    result = run_sweep(small_config())
    table = gnuplot_tables(result)[500.0].splitlines()
    assert table[0] == "# snr_db rsma_J1 noma"
    assert len(table) == 4
    means = result.cell_means()
    cols = table[3].split()
    assert float(cols[0]) == 20.0
    assert float(cols[2]) == pytest.approx(means[("noma", 0, 20.0, 500.0)], abs=1e-6)


def test_failed_cells_recorded(monkeypatch):
    from rsma_mmf import experiments

    def boom(*args, **kwargs):
        raise RuntimeError("solver exploded")

    monkeypatch.setattr(experiments, "tin_solve", boom)
    result = run_sweep(small_config(schemes=("noma", "tin"), realizations=2))
    assert len(result.rows) == 2 * 3 * 2
    failed = result.failed
    assert len(failed) == 6 and all(r.scheme == "tin" for r in failed)
    assert all(math.isnan(r.min_rate) for r in failed)
    assert math.isnan(result.cell_means()[("tin", 0, 0.0, 500.0)])


def test_timing_fills_wall_ms():
    rows = run_sweep(small_config(timing=True, realizations=1)).rows
    assert all(r.wall_ms > 0 for r in rows)


def test_result_row_rejects_negative_rate():
    with pytest.raises(ValueError):
        ResultRow("noma", 2, 0, 0.0, 250.0, 1e-5, 0, 0, -0.1, True, 1)


def test_exhaustive_order_never_worse():
    cfg = small_config(snr_db_list=(20.0,), realizations=3)
    heur = run_sweep(cfg)
    exh = run_sweep(SweepConfig(**{**cfg.__dict__, "order_policy": "exhaustive"}))
    for a, b in zip(heur.rows, exh.rows):
        assert b.min_rate >= a.min_rate - 1e-9


def test_parse_config():
    cfg = parse_config("""
        # comment
        snr_db = 0, 10, 20
        blocklength = 250, inf
        users = 3
        split_counts = 1,2
        schemes = rsma, noma
        realizations = 5
        timing = yes
    """)
    assert cfg.snr_db_list == (0.0, 10.0, 20.0)
    assert cfg.blocklength_list == (250.0, math.inf)
    assert cfg.split_counts == (1, 2)
    assert cfg.timing is True
    assert parse_config("seed = 1", seed=9).seed == 9


@pytest.mark.parametrize("text", [
    "colour = red",
    "snr_db 0",
    "users = two",
    "seed = 1\nseed = 2",
    "realizations = 0",
])
def test_parse_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.cfg")


def test_default_snr_grid():
    assert SweepConfig().snr_db_list == (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)
    assert SweepConfig().epsilon == 1e-5
