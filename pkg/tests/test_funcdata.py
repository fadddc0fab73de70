import numpy as np
import pytest

from curvereg.errors import (CurveTooShort, DataError, DuplicateTimeWithinCurve,
                             EmptyDataset, InvalidInput, MissingColumn, NonNumericCell)
from curvereg.funcdata import (Curve, FunctionalDataset, IncompletenessMode, from_arrays,
                               load_csv, write_curves)


def write_text(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_normalizes_affinely(tmp_path):
    p = write_text(tmp_path / "d.csv", "id,t,y\na,0,1.0\na,5,2.0\na,10,3.0\n")
    ds = load_csv(p)
    assert len(ds) == 1
    np.testing.assert_allclose(ds.curves[0].times, [0.0, 0.5, 1.0], atol=1e-15)
    assert ds.raw_domain == (0.0, 10.0)
    np.testing.assert_allclose(ds.curves[0].values, [1.0, 2.0, 3.0])


def test_load_groups_and_sorts_interleaved(tmp_path):
    p = write_text(tmp_path / "d.csv",
                   "id,t,y\nb,2,20\na,1,1\nb,1,10\na,3,3\na,2,2\nb,3,30\n")
    ds = load_csv(p)
    assert sorted(ds.ids()) == ["a", "b"]
    for c in ds:
        assert np.all(np.diff(c.times) > 0)
        assert np.all(np.diff(c.values) > 0)  # values co-sorted with time here


def test_load_rejects_non_numeric(tmp_path):
    p = write_text(tmp_path / "d.csv", "id,t,y\na,0,1\na,1,NA\n")
    with pytest.raises(NonNumericCell):
        load_csv(p)


def test_load_requires_columns(tmp_path):
    p = write_text(tmp_path / "d.csv", "id,time,y\na,0,1\n")
    with pytest.raises(MissingColumn):
        load_csv(p)


def test_load_rejects_duplicate_times(tmp_path):
    p = write_text(tmp_path / "d.csv", "id,t,y\na,0,1\na,0,2\na,1,3\n")
    with pytest.raises(DuplicateTimeWithinCurve):
        load_csv(p)


def test_load_rejects_short_curves(tmp_path):
    p = write_text(tmp_path / "d.csv", "id,t,y\na,0,1\nb,0,1\nb,1,2\n")
    with pytest.raises(CurveTooShort):
        load_csv(p)


def test_round_trip(tmp_path, rng):
    ids = [f"c{i}" for i in range(5)]
    times = [np.sort(rng.uniform(0, 30, size=rng.integers(4, 12))) for _ in ids]
    values = [rng.normal(size=t.size) for t in times]
    ds = from_arrays(ids, times, values, normalize=True)
    assert ds.raw_domain[0] == min(t.min() for t in times)

    out = tmp_path / "out.csv"
    write_curves(ds, out)
    back = load_csv(out)
    assert sorted(back.ids()) == sorted(ds.ids())
    for cid in ds.ids():
        c0 = next(c for c in ds if c.id == cid)
        c1 = next(c for c in back if c.id == cid)
        assert c0.n == c1.n
        np.testing.assert_array_equal(c0.values, c1.values)
        np.testing.assert_allclose(c0.times, c1.times, atol=1e-12)


def test_write_denormalizes(tmp_path):
    ds = from_arrays(["a"], [np.array([0.0, 15.0, 30.0])], [np.zeros(3)], normalize=True)
    out = tmp_path / "out.csv"
    write_curves(ds, out)
    lines = out.read_text().strip().splitlines()
    emitted = [float(line.split(",")[1]) for line in lines[1:]]
    np.testing.assert_allclose(emitted, [0.0, 15.0, 30.0], atol=1e-12)


def test_normalization_hits_exact_bounds(rng):
    times = [np.sort(rng.uniform(3, 9, size=6)) for _ in range(4)]
    ds = from_arrays(list("abcd"), times, [np.zeros(6)] * 4, normalize=True)
    pooled = np.concatenate([c.times for c in ds])
    assert pooled.min() == 0.0
    assert pooled.max() == 1.0


def test_empty_dataset_refused():
    with pytest.raises(EmptyDataset):
        FunctionalDataset(curves=(), mode=IncompletenessMode.COMPLETE)
    with pytest.raises(DataError):
        from_arrays([], [], [])


def test_unique_ids_required():
    c = Curve("a", np.array([0.0, 1.0]), np.array([1.0, 2.0]))
    with pytest.raises(InvalidInput):
        FunctionalDataset(curves=(c, c))


def test_mode_helpers():
    assert IncompletenessMode.parse("trailing") is IncompletenessMode.TRAILING
    assert IncompletenessMode.COMPLETE.pins_start and IncompletenessMode.COMPLETE.pins_end
    assert IncompletenessMode.LEADING.pins_end and not IncompletenessMode.LEADING.pins_start
    assert IncompletenessMode.TRAILING.pins_start and not IncompletenessMode.TRAILING.pins_end
    assert not (IncompletenessMode.FULL.pins_start or IncompletenessMode.FULL.pins_end)
    with pytest.raises(InvalidInput):
        IncompletenessMode.parse("partial")


def test_values_never_transformed(tmp_path):
    # negative values load fine; family validity is a fit-time concern
    p = write_text(tmp_path / "d.csv", "id,t,y\na,0,-5\na,1,0\n")
    ds = load_csv(p)
    np.testing.assert_array_equal(ds.curves[0].values, [-5.0, 0.0])
