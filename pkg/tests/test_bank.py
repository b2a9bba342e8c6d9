import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tactile_filter.bank import PegImageBank, pack_levels, packed_l1, quantize
from tactile_filter.geometry import Pose2D, SensorWindow, glyph_library, glyph_shape, make_pose_grid, rasterize

W = SensorWindow()


@pytest.fixture(scope="module")
def tiny_bank():
    grid = make_pose_grid("custom", x=[-4, 0, 4], y=[0, 4], theta=[-30, 0, 30])
    return PegImageBank.build(glyph_library(["A", "E"], "small"), grid)


def brute_nearest(bank, c, pose):
    """Independent lookup: scan every grid pose for the nearest one per axis."""
    g = bank.grid
    out = []
    for vals, v in zip((g.x_values, g.y_values, g.theta_values), pose):
        vals = np.array(vals)
        d = np.abs(vals - v)
        j = int(np.flatnonzero(d == d.min())[0])
        half = (vals[1] - vals[0]) / 2 if len(vals) > 1 else 1e-9
        if v < vals[0] - half - 1e-12 or v > vals[-1] + half + 1e-12:
            return bank.no_contact_index
        out.append(j)
    nx, ny, nt = g.dims
    return ((c * nx + out[0]) * ny + out[1]) * nt + out[2]


def test_layout(small_bank):
    assert small_bank.n_entries == 12 * 175 == 2100
    assert small_bank.patches.shape == (2101, 48, 64)
    assert not small_bank.patches[-1].any()
    cat, pose = small_bank.entry(0)
    assert cat == "A" and pose == Pose2D(-8, -8, -90)
    assert small_bank.entry(2099)[0] == "L"
    with pytest.raises(IndexError):
        small_bank.entry(2100)


def test_entries_are_rasters(tiny_bank):
    for i in range(tiny_bank.n_entries):
        cat, pose = tiny_bank.entry(i)
        assert np.array_equal(tiny_bank.patches[i], rasterize(tiny_bank.shapes[cat], pose, W))
        assert tiny_bank.index_of(cat, pose) == i


def test_entry_arrays_match_entry(tiny_bank):
    cats, poses = tiny_bank.entry_categories(), tiny_bank.entry_poses()
    for i in range(tiny_bank.n_entries):
        cat, pose = tiny_bank.entry(i)
        assert tiny_bank.categories[cats[i]] == cat
        assert tuple(poses[i]) == pose.as_tuple()


@settings(max_examples=200, deadline=None)
@given(
    st.integers(0, 1),
    st.floats(-12, 12, allow_nan=False),
    st.floats(-6, 10, allow_nan=False),
    st.floats(-80, 80, allow_nan=False),
)
def test_lookup_matches_brute_force(tiny_bank, c, x, y, t):
    got = int(tiny_bank.lookup([c], [(x, y, t)])[0])
    assert got == brute_nearest(tiny_bank, c, (x, y, t))


def test_lookup_examples(small_bank):
    a = small_bank.category_index("A")
    assert small_bank.lookup([a], [(8, 0, 0)])[0] == small_bank.index_of("A", Pose2D(8, 0, 0))
    # 4 mm past the last column is off the bank
    assert small_bank.lookup([a], [(12, 0, 0)])[0] == small_bank.no_contact_index
    assert small_bank.lookup([a], [(9.9, 0, 0)])[0] == small_bank.index_of("A", Pose2D(8, 0, 0))


def test_lookup_outer_matches_lookup(small_bank):
    rng = np.random.default_rng(0)
    grid = small_bank.grid.poses_array()
    cats = rng.integers(12, size=30)
    poses = grid[rng.integers(len(grid), size=30)]
    shifts = grid[rng.integers(len(grid), size=40)] - grid[rng.integers(len(grid), size=40)]
    outer = small_bank.lookup_outer(cats, poses, shifts)
    moved = poses[:, None, :] + shifts[None, :, :]
    moved[..., 2] = (moved[..., 2] + 180) % 360 - 180
    flat = small_bank.lookup(np.repeat(cats, 40), moved.reshape(-1, 3)).reshape(30, 40)
    assert np.array_equal(outer, flat)


def test_quantize_and_pack():
    p = rasterize(glyph_shape("K", 16, 12), Pose2D(1, 2, 30), W)
    q = quantize(p, 4)
    assert q is not None and q.max() <= 4
    assert quantize(p + 0.1, 4) is None
    other = rasterize(glyph_shape("B", 16, 12), Pose2D(-3, 0, 0), W)
    pa, pb = pack_levels(q, 4), pack_levels(quantize(other, 4), 4)
    assert packed_l1(pa, pb, 4) == pytest.approx(np.abs(p.astype(float) - other).sum())


def test_pair_l1_matches_dense(small_bank):
    rng = np.random.default_rng(1)
    ia = rng.integers(small_bank.n_entries + 1, size=500)
    ib = rng.integers(small_bank.n_entries + 1, size=500)
    ia[:5] = small_bank.no_contact_index
    dense = np.abs(small_bank.flat[ia].astype(float) - small_bank.flat[ib]).sum(axis=1)
    assert np.allclose(small_bank.pair_l1(ia, ib), dense, rtol=0, atol=1e-9)
    # second call is served from the memo and must agree
    assert np.allclose(small_bank.pair_l1(ib, ia), dense, rtol=0, atol=1e-9)


def test_pair_l1_off_lattice_fallback(tiny_bank):
    rng = np.random.default_rng(2)
    patches = tiny_bank.patches.copy()
    patches[:-1] = np.clip(patches[:-1] + rng.random(patches[:-1].shape).astype(np.float32) * 0.01, 0, 1)
    bank = PegImageBank(tiny_bank.categories, tiny_bank.grid, W, patches)
    assert bank.packed is None
    ia, ib = np.arange(5), np.arange(5, 10)
    dense = np.abs(patches[ia].astype(np.float64) - patches[ib]).sum(axis=(1, 2))
    assert np.allclose(bank.pair_l1(ia, ib), dense)


def test_bad_shapes_rejected(tiny_bank):
    with pytest.raises(ValueError):
        PegImageBank(tiny_bank.categories, tiny_bank.grid, W, tiny_bank.patches[:-1])
    bad = tiny_bank.patches.copy()
    bad[-1, 0, 0] = 1.0
    with pytest.raises(ValueError):
        PegImageBank(tiny_bank.categories, tiny_bank.grid, W, bad)
    with pytest.raises(KeyError):
        tiny_bank.category_index("Z")


def test_save_load_round_trip(tiny_bank, tmp_path):
    man = tiny_bank.save(tmp_path / "bank")
    meta = json.loads(man.read_text())
    assert meta["entries"] == tiny_bank.n_entries and meta["categories"] == ["A", "E"]
    loaded = PegImageBank.load(tmp_path / "bank")
    assert np.array_equal(loaded.patches, tiny_bank.patches)
    assert loaded.grid == tiny_bank.grid and loaded.digest() == tiny_bank.digest()
    assert set(loaded.shapes) == {"A", "E"}


def test_load_detects_tampering(tiny_bank, tmp_path):
    tiny_bank.save(tmp_path / "bank")
    path = tmp_path / "bank" / "entry_000003.tfp"
    raw = bytearray(path.read_bytes())
    raw[-1] ^= 0x01
    path.write_bytes(bytes(raw))
    with pytest.raises(ValueError, match="digest"):
        PegImageBank.load(tmp_path / "bank")


def test_plate_bank_round_trip(tmp_path):
    grid = make_pose_grid("custom", x=[0], y=[0], theta=[0, 30])
    bank = PegImageBank.build(glyph_library(["C"], "small"), grid, plate_margin=2.0)
    assert bank.plates is not None
    comp = bank.complement(np.arange(2))
    assert np.all((comp >= 0) & (comp <= 1))
    bank.save(tmp_path / "b")
    again = PegImageBank.load(tmp_path / "b")
    assert np.array_equal(again.plates, bank.plates)


def test_subset(small_bank):
    sub = small_bank.subset(["C", "A"])
    assert sub.categories == ("C", "A") and sub.n_entries == 350
    p = Pose2D(4, -4, 60)
    assert np.array_equal(sub.patches[sub.index_of("C", p)], small_bank.patches[small_bank.index_of("C", p)])
    assert not sub.patches[-1].any()
