import numpy as np
import pytest

from popshm.errors import (
    DuplicateRecordError,
    InvalidInputError,
    NotFoundError,
    RecordShapeError,
    SynchronisationError,
)
from popshm.fibre import Fibre, find_stratum, load_fibre, save_fibre, stratum_to_csv
from popshm.operators import o_demean, o_dft, o_mean, o_welch

N_T = 64
F_S = 64.0
DTAU = 600.0


def make_fibre(n_s=4, n_r=6) -> Fibre:
    return Fibre("S1", n_s=n_s, n_t=N_T, n_r=n_r, f_s=F_S, delta_tau=DTAU)


def fill(fibre, channels, acquisitions, rng=None):
    for k in acquisitions:
        for j in channels:
            if rng is None:
                samples = np.full(N_T, float(10 * j + k))
            else:
                samples = rng.normal(size=N_T)
            fibre.ingest(j, k, samples, start_time=k * DTAU)
    return fibre


# ---------------------------------------------------------------------------
# Ingest
# ---------------------------------------------------------------------------

def test_ingest_single_record_populates_one_cell():
    fibre = make_fibre()
    fibre.ingest(0, 0, np.zeros(N_T), start_time=0.0)
    assert fibre.record_count == 1


def test_ingest_rejects_wrong_length():
    fibre = make_fibre()
    with pytest.raises(RecordShapeError):
        fibre.ingest(0, 0, np.zeros(N_T - 1), start_time=0.0)


def test_ingest_rejects_desynchronised_sibling():
    fibre = make_fibre()
    fibre.ingest(1, 5, np.zeros(N_T), start_time=5 * DTAU)
    with pytest.raises(SynchronisationError):
        fibre.ingest(2, 5, np.zeros(N_T), start_time=5 * DTAU + 1.0)


def test_ingest_enforces_periodic_schedule():
    fibre = make_fibre()
    fibre.ingest(0, 0, np.zeros(N_T), start_time=0.0)
    with pytest.raises(SynchronisationError):
        fibre.ingest(0, 1, np.zeros(N_T), start_time=DTAU / 2)
    fibre.ingest(0, 1, np.zeros(N_T), start_time=DTAU)


def test_ingest_duplicate_cell():
    fibre = make_fibre()
    samples = np.arange(N_T, dtype=float)
    fibre.ingest(0, 0, samples, start_time=0.0)
    # identical re-ingest is a no-op
    fibre.ingest(0, 0, samples, start_time=0.0)
    assert fibre.record_count == 1
    with pytest.raises(DuplicateRecordError):
        fibre.ingest(0, 0, samples + 1.0, start_time=0.0)


def test_ingest_range_checks():
    fibre = make_fibre(n_s=2, n_r=3)
    with pytest.raises(InvalidInputError):
        fibre.ingest(2, 0, np.zeros(N_T), start_time=0.0)
    with pytest.raises(InvalidInputError):
        fibre.ingest(0, 3, np.zeros(N_T), start_time=3 * DTAU)


# ---------------------------------------------------------------------------
# Projections
# ---------------------------------------------------------------------------

def test_project_channel_orders_by_acquisition():
    fibre = fill(make_fibre(), channels=(1, 2), acquisitions=(0, 1, 2))
    records = fibre.project_channel(0, 1)
    assert [r.acquisition for r in records] == [0, 1, 2]
    assert all(r.channel == 1 for r in records)
    assert fibre.project_channel(0, 3) == []


def test_project_time_gathers_channels():
    fibre = fill(make_fibre(), channels=(0, 1), acquisitions=(2,))
    records = fibre.project_time(0, 2)
    assert [r.channel for r in records] == [0, 1]
    assert fibre.project_time(0, 5) == []


def test_project_cell_and_errors():
    fibre = fill(make_fibre(), channels=(0,), acquisitions=(0,))
    record = fibre.project_cell(0, 0, 0)
    assert record.start_time == 0.0
    with pytest.raises(NotFoundError):
        fibre.project_cell(0, 1, 0)
    with pytest.raises(NotFoundError):
        fibre.project_channel(3, 0)


def test_projection_algebra_on_full_grid(rng):
    fibre = fill(make_fibre(n_s=4, n_r=5), channels=range(4),
                 acquisitions=range(5), rng=rng)
    grid_cells = set()
    for j in range(4):
        for record in fibre.project_channel(0, j):
            grid_cells.add((record.channel, record.acquisition))
    assert grid_cells == {(j, k) for j in range(4) for k in range(5)}
    # pi_jk is the unique record in pi_j intersect pi_k
    for j in range(4):
        for k in range(5):
            via_j = {(r.channel, r.acquisition): r for r in fibre.project_channel(0, j)}
            via_k = {(r.channel, r.acquisition): r for r in fibre.project_time(0, k)}
            common = set(via_j) & set(via_k)
            assert common == {(j, k)}
            direct = fibre.project_cell(0, j, k)
            assert np.array_equal(direct.samples, via_j[(j, k)].samples)
    # direct-sum reconstruction both ways
    for j in range(4):
        assert [r.acquisition for r in fibre.project_channel(0, j)] == list(range(5))
    for k in range(5):
        assert [r.channel for r in fibre.project_time(0, k)] == list(range(4))


def test_dimension_bookkeeping(rng):
    fibre = fill(make_fibre(n_s=3, n_r=4), channels=range(3),
                 acquisitions=range(4), rng=rng)
    total = sum(len(fibre.project_cell(0, j, k).samples)
                for j in range(3) for k in range(4))
    assert total == 3 * 4 * N_T  # N_S * N_R * N_T for the full grid


# ---------------------------------------------------------------------------
# Derived strata and provenance
# ---------------------------------------------------------------------------

def test_project_stratum_and_apply_operator(rng):
    fibre = fill(make_fibre(), channels=(0, 1), acquisitions=(0, 1), rng=rng)
    assert fibre.project_stratum(0).index == 0
    m1 = fibre.apply_operator(0, o_demean())
    assert m1 == 1
    stratum = fibre.project_stratum(m1)
    assert len(stratum.chain) == 1
    assert stratum.record_dim == N_T
    with pytest.raises(NotFoundError):
        fibre.project_stratum(5)


def test_apply_operator_is_append_only_and_cellwise(rng):
    fibre = fill(make_fibre(), channels=(0,), acquisitions=(0, 1), rng=rng)
    before = {key: arr.copy() for key, arr in fibre.project_stratum(0).grid.items()}
    m1 = fibre.apply_operator(0, o_mean())
    for key, arr in before.items():
        assert np.array_equal(fibre.project_stratum(0).grid[key], arr)
        assert fibre.project_cell(m1, *key).samples[0] == pytest.approx(arr.mean())
    assert set(fibre.project_stratum(m1).grid) == set(before)


def test_identical_chains_are_deduplicated(rng):
    fibre = fill(make_fibre(), channels=(0,), acquisitions=(0,), rng=rng)
    m1 = fibre.apply_operator(0, o_demean())
    m2 = fibre.apply_operator(0, o_demean())
    assert m1 == m2
    assert fibre.stratum_count == 2


def test_provenance_chain_and_replay(rng):
    fibre = fill(make_fibre(), channels=(0, 1), acquisitions=(0, 1, 2), rng=rng)
    assert fibre.provenance(0) == ()
    m1 = fibre.apply_operator(0, o_demean())
    m2 = fibre.apply_operator(m1, o_dft())
    chain = fibre.provenance(m2)
    assert [spec.name for spec in chain] == ["demean", "dft"]
    # replaying the chain from stratum 0 reproduces stratum m2 byte for byte
    replay = Fibre("replay", n_s=4, n_t=N_T, n_r=6, f_s=F_S, delta_tau=DTAU)
    for (j, k) in fibre.project_stratum(0).cells():
        rec = fibre.project_cell(0, j, k)
        replay.ingest(j, k, rec.samples, rec.start_time)
    m = 0
    for spec in chain:
        m = replay.apply_operator(m, spec)
    for key in fibre.project_stratum(m2).cells():
        a = fibre.project_stratum(m2).grid[key]
        b = replay.project_stratum(m).grid[key]
        assert a.tobytes() == b.tobytes()


def test_demean_then_mean_is_zero_through_fibre(rng):
    fibre = fill(make_fibre(), channels=(0,), acquisitions=(0,), rng=rng)
    m1 = fibre.apply_operator(0, o_demean())
    m2 = fibre.apply_operator(m1, o_mean())
    assert abs(fibre.project_cell(m2, 0, 0).samples[0]) < 1e-12


def test_find_stratum_by_chain(rng):
    fibre = fill(make_fibre(), channels=(0,), acquisitions=(0,), rng=rng)
    m1 = fibre.apply_operator(0, o_demean())
    m2 = fibre.apply_operator(m1, o_welch(32))
    assert find_stratum(fibre, ("demean", "welch")) == m2
    with pytest.raises(NotFoundError):
        find_stratum(fibre, ("welch",))


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def test_fibre_round_trips_through_directory(tmp_path, rng):
    fibre = fill(make_fibre(n_s=2, n_r=3), channels=(0, 1),
                 acquisitions=(0, 2), rng=rng)
    fibre.channels = {0: "s1", 1: "s2"}
    m1 = fibre.apply_operator(0, o_demean())
    fibre.apply_operator(m1, o_welch(32))
    save_fibre(fibre, tmp_path / "S1")
    back = load_fibre(tmp_path / "S1")
    assert back.structure_id == fibre.structure_id
    assert back.channels == fibre.channels
    assert back.stratum_count == fibre.stratum_count
    for m in range(fibre.stratum_count):
        ours = fibre.project_stratum(m)
        theirs = back.project_stratum(m)
        assert ours.cells() == theirs.cells()
        assert ours.chain == theirs.chain
        for key in ours.cells():
            assert ours.grid[key].tobytes() == theirs.grid[key].tobytes()


def test_stratum_csv_export(tmp_path):
    fibre = fill(make_fibre(n_s=2, n_r=2), channels=(0, 1), acquisitions=(0,))
    target = tmp_path / "raw.csv"
    stratum_to_csv(fibre, 0, target)
    lines = target.read_text().strip().splitlines()
    assert lines[0].startswith("channel,acquisition,")
    assert len(lines) == 1 + 2
