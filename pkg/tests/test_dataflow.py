import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pgsgan.dataflow import (
    Batcher,
    DataError,
    batcher,
    derive_rng,
    discretize_stream,
    load_orders,
    make_windows,
    save_orders,
    temporal_split,
)
from pgsgan.orderdomain import discretize
from pgsgan.synth import SynthConfig, SynthMarket, synth_market

HEADER = "seq,side,action,is_mo,price,volume,best_bid,best_ask\n"


def stream_of(n, seed=0):
    return synth_market(SynthConfig(n_orders=n, seed=seed))[0]


def write_csv(tmp_path, rows, meta="tick_size=1.0\nmin_volume_unit=100.0\ninstrument=X\n"):
    path = tmp_path / "o.csv"
    path.write_text(HEADER + "".join(rows))
    path.with_suffix(".meta").write_text(meta)
    return path


def row(i, price=101, bid=100, ask=101):
    return f"{i},0,0,0,{price},100,{bid},{ask}\n"


# -- loading ----------------------------------------------------------------------------
def test_load_empty_file(tmp_path):
    path = write_csv(tmp_path, [])
    path.write_text("")
    with pytest.raises(DataError, match="empty"):
        load_orders(path)


def test_load_header_only_is_empty_stream(tmp_path):
    with pytest.raises(DataError, match="21"):
        load_orders(write_csv(tmp_path, []))


def test_21_rows_one_window(tmp_path):
    s = load_orders(write_csv(tmp_path, [row(i) for i in range(21)]))
    assert len(make_windows(s)) == 1


def test_off_grid_price_cites_row(tmp_path):
    rows = [row(i) for i in range(21)]
    rows[6] = row(6, price=101.5)
    with pytest.raises(DataError, match="row 7, field price"):
        load_orders(write_csv(tmp_path, rows))


def test_unparseable_field_cites_row(tmp_path):
    rows = [row(i) for i in range(5)]
    rows[2] = "2,0,0,0,abc,100,100,101\n"
    with pytest.raises(DataError, match="row 3, field price"):
        load_orders(write_csv(tmp_path, rows))


def test_missing_meta(tmp_path):
    path = write_csv(tmp_path, [row(0)])
    path.with_suffix(".meta").unlink()
    with pytest.raises(DataError, match="sidecar"):
        load_orders(path)


def test_bad_header(tmp_path):
    path = write_csv(tmp_path, [row(0)])
    path.write_text("a,b\n1,2\n")
    with pytest.raises(DataError, match="header"):
        load_orders(path)


def test_seq_must_increase(tmp_path):
    with pytest.raises(DataError, match="row 2"):
        load_orders(write_csv(tmp_path, [row(1), row(1)]))


def test_save_load_roundtrip_lossless(tmp_path):
    s = stream_of(300)
    save_orders(s, tmp_path / "s.csv")
    back = load_orders(tmp_path / "s.csv")
    for col in ("seq", "side", "action", "is_mo", "price", "volume", "best_bid", "best_ask"):
        assert np.array_equal(getattr(back, col), getattr(s, col))
    save_orders(back, tmp_path / "t.csv")
    assert (tmp_path / "s.csv").read_bytes() == (tmp_path / "t.csv").read_bytes()


# -- splitting ----------------------------------------------------------------------------
@pytest.mark.parametrize("n, sizes", [(100, (80, 10, 10)), (105, (84, 10, 11)), (30, (24, 3, 3))])
def test_temporal_split_sizes(n, sizes):
    parts = temporal_split(stream_of(n))
    assert tuple(len(p) for p in parts) == sizes


def test_temporal_split_order():
    tr, va, te = temporal_split(stream_of(200))
    assert tr.seq.max() < va.seq.min() and va.seq.max() < te.seq.min()
    assert len(tr) + len(va) + len(te) == 200


def test_temporal_split_too_short():
    with pytest.raises(DataError):
        temporal_split(stream_of(29))


# -- windows ---------------------------------------------------------------------------------
@pytest.mark.parametrize("n, pairs", [(21, 1), (40, 20)])
def test_window_counts(n, pairs):
    assert len(make_windows(stream_of(n))) == pairs


def test_window_target_is_entry_k_plus_20():
    s = stream_of(60)
    w = make_windows(s)
    for k in (0, 7, 39):
        cond, target = w[k]
        assert tuple(target) == tuple(discretize(s.raw_order(k + 20)))
        assert cond.history.shape == (20, 7)


def test_window_history_matches_encode_condition():
    from pgsgan.orderdomain import encode_condition

    s = stream_of(50)
    w = make_windows(s)
    k = 13
    c = encode_condition([s.raw_order(i) for i in range(k, k + 20)], s.best_bid[k + 20], s.best_ask[k + 20])
    assert np.allclose(w.history[k], c.history) and np.allclose(w.quotes[k], c.quotes)


def test_discretize_stream_matches_scalar():
    s = stream_of(200)
    vec = discretize_stream(s)
    assert all(tuple(vec[i]) == tuple(discretize(s.raw_order(i))) for i in range(len(s)))


def test_window_too_short():
    with pytest.raises(DataError):
        make_windows(stream_of(20))


# -- batching --------------------------------------------------------------------------------
@pytest.mark.parametrize("n, training, count", [(4096, True, 2), (5000, True, 2), (5000, False, 3)])
def test_batch_counts(n, training, count):
    b = Batcher(n, 2048, seed=0)
    assert len(b.epoch(0, training)) == count == b.batches_per_epoch(training)


def test_batcher_deterministic_and_epoch_dependent():
    b = Batcher(100, 10, seed=3)
    assert all(np.array_equal(x, y) for x, y in zip(b.epoch(1), Batcher(100, 10, seed=3).epoch(1)))
    assert not np.array_equal(b.epoch(1)[0], b.epoch(2)[0])


def test_batcher_covers_everything_in_eval():
    b = Batcher(103, 10, seed=0)
    assert sorted(np.concatenate(b.epoch(0, training=False))) == list(range(103))


def test_batcher_windows():
    w = make_windows(stream_of(80))
    batches = batcher(w, 16, seed=1)
    assert len(batches) == 3 and all(len(x) == 16 for x in batches)


def test_batcher_rejects_tiny_batch():
    with pytest.raises(ValueError):
        Batcher(10, 1, 0)


def test_derive_rng_streams_independent():
    a = derive_rng(0, "critic", 1).random()
    assert a == derive_rng(0, "critic", 1).random()
    assert a != derive_rng(0, "critic", 2).random() != derive_rng(1, "critic", 1).random()


# -- synthetic market ---------------------------------------------------------------------------
def test_synth_deterministic():
    a, b = stream_of(500, 7), stream_of(500, 7)
    assert np.array_equal(a.price, b.price) and np.array_equal(a.best_bid, b.best_bid)
    assert not np.array_equal(a.price, stream_of(500, 8).price)


def test_synth_tables_normalised():
    m = SynthMarket(SynthConfig())
    assert np.allclose(m.cond.sum(axis=1), 1, atol=1e-9)
    assert abs(m.ground_truth.sum() - 1) < 1e-9


def test_synth_degenerate_one_class():
    cfg = SynthConfig(
        n_orders=200, p_same_side=1.0, p_cancel_narrow=1.0, p_cancel_wide=1.0, price_decay=0.0,
        volume_decay_buy=0.0, volume_decay_sell=0.0, start_side=1,
    )
    s, truth = synth_market(cfg)
    orders = discretize_stream(s)
    assert (orders == orders[0]).all()
    assert np.count_nonzero(truth) == 1
    assert np.all(s.best_bid == s.best_bid[0]) and np.all(s.best_ask == s.best_ask[0])


def test_synth_stream_valid():
    s = stream_of(5000)
    s.validate()
    spread = s.ticks("best_ask") - s.ticks("best_bid")
    assert spread.min() >= 1 and spread.max() <= SynthConfig().max_spread


def test_synth_frequencies_match_ground_truth():
    s, truth = synth_market(SynthConfig(n_orders=1_000_000, seed=11))
    counts = np.bincount(discretize_stream(s) @ np.array([6400, 3200, 1600, 40, 1]), minlength=12800)
    tv = 0.5 * np.abs(counts / counts.sum() - truth).sum()
    assert tv < 0.01


def test_synth_config_rejects_bad_values(tmp_path):
    with pytest.raises(DataError):
        SynthConfig(p_same_side=1.5).validate()
    with pytest.raises(DataError, match="unknown"):
        SynthConfig.from_dict({"bogus": "1"})
    SynthConfig(n_orders=10).save(tmp_path / "c.conf")
    assert SynthConfig.load(tmp_path / "c.conf").n_orders == 10


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.05, 0.95), st.floats(0.0, 0.9))
def test_synth_truth_is_distribution(seed, p_same, decay):
    m = SynthMarket(SynthConfig(seed=seed, p_same_side=p_same, price_decay=decay))
    assert abs(m.ground_truth.sum() - 1) < 1e-9 and (m.ground_truth >= 0).all()
