import numpy as np
import pytest

from traildiff.data import (
    DATASET_VERSION,
    LABELS,
    Dataset,
    DatasetSpec,
    NormStats,
    abs_to_rel,
    apply_norm,
    fit_norm,
    generate_dataset,
    generate_sequence,
    invert_norm,
    load_dataset,
    rel_to_abs,
    save_dataset,
    split_dataset,
)
from traildiff.errors import ConstructionFailure, InvalidArgument, InvalidState
from traildiff.seq import ABS, NORM, RAW, REL, MotionSeq


def slip(arr):
    """mean |speed channel - actual per-frame displacement| in raw units."""
    a = np.asarray(arr, dtype=np.float64)
    step = np.linalg.norm(np.diff(a[1:3], axis=1), axis=0)
    return float(np.mean(np.abs(a[3, :-1] - step)))


@pytest.fixture(scope="module")
def ds():
    return generate_dataset(DatasetSpec(n_per_label=20, seed=0))


# -- spec and generation --------------------------------------------------------

def test_spec_validation():
    with pytest.raises(InvalidArgument):
        DatasetSpec(n_per_label=0)
    with pytest.raises(InvalidArgument):
        DatasetSpec(n_per_label=1, n_frames=1)
    with pytest.raises(InvalidArgument):
        DatasetSpec(n_per_label=1, n_channels=5)
    with pytest.raises(InvalidArgument):
        DatasetSpec(n_per_label=1, noise_sigma=-0.1)
    with pytest.raises(InvalidArgument):
        DatasetSpec(n_per_label=1, seed=-1)


def test_shapes_labels_dtype(ds):
    assert ds.data.shape == (120, 17, 64)
    assert ds.data.dtype == np.float32
    assert ds.labels.tolist() == [i % 6 for i in range(120)]
    assert ds.label_name(1) == "left-turn"
    s = ds.seq(0)
    assert isinstance(s, MotionSeq) and s.frame == ABS and s.space == RAW


def test_determinism_bit_identical(ds):
    again = generate_dataset(DatasetSpec(n_per_label=20, seed=0))
    assert np.array_equal(ds.data, again.data)
    assert np.array_equal(ds.labels, again.labels)
    other = generate_dataset(DatasetSpec(n_per_label=20, seed=1))
    assert not np.array_equal(ds.data, other.data)


def test_sequences_seeded_independently(ds):
    # row i depends only on (seed, i), not on the rest of the dataset
    seq, lab = generate_sequence(DatasetSpec(n_per_label=20, seed=0), 37)
    assert lab == 37 % 6
    assert np.array_equal(ds.data[37], seq.astype(np.float32))


def test_straight_label_constant_heading_colinear(ds):
    for i in range(0, 120, 6):
        arr = ds.data[i].astype(np.float64)
        assert np.ptp(arr[0]) == 0.0
        p = arr[1:3] - arr[1:3, :1]
        direction = np.array([np.cos(arr[0, 0]), np.sin(arr[0, 0])])
        cross = p[0] * direction[1] - p[1] * direction[0]
        assert np.max(np.abs(cross)) < 0.05


def test_circle_label_total_heading_near_full_turn(ds):
    for i in range(3, 120, 6):
        total = abs(float(ds.data[i, 0, -1] - ds.data[i, 0, 0]))
        assert abs(total - 2 * np.pi) < 0.1 * 2 * np.pi


def test_turn_labels_monotone_heading(ds):
    for i in range(1, 120, 6):
        assert np.all(np.diff(ds.data[i, 0].astype(np.float64)) >= 0)
    for i in range(2, 120, 6):
        assert np.all(np.diff(ds.data[i, 0].astype(np.float64)) <= 0)


def test_speed_channel_tracks_displacement(ds):
    sigma = ds.spec.noise_sigma
    for i in range(120):
        assert slip(ds.data[i]) < 3 * sigma


def test_gait_channels_on_unit_circle(ds):
    r = np.hypot(ds.data[:, 4, :].astype(np.float64),
                 ds.data[:, 5, :].astype(np.float64))
    # radius 1 perturbed by two independent sigma=0.02 noises
    assert abs(np.mean(r) - 1.0) < 0.01
    assert np.max(np.abs(r - 1.0)) < 6 * ds.spec.noise_sigma


def test_coherence_separation(ds):
    # gluing pose channels onto the next sequence's trajectory must blow
    # the slip score past 10x the raw-data bound, on average
    sigma = ds.spec.noise_sigma
    raw = np.array([slip(ds.data[i]) for i in range(120)])
    assert raw.max() < 3 * sigma
    swapped = []
    for i in range(120):
        arr = ds.data[i].copy()
        arr[0:3] = ds.data[(i + 1) % 120, 0:3]
        swapped.append(slip(arr))
    assert float(np.mean(swapped)) > 10 * (3 * sigma)


def test_noise_free_generation_is_exact():
    spec = DatasetSpec(n_per_label=2, noise_sigma=0.0, seed=4)
    d = generate_dataset(spec)
    for i in range(len(d)):
        assert slip(d.data[i]) < 1e-5  # float32 storage rounding only


def test_custom_channel_count():
    d = generate_dataset(DatasetSpec(n_per_label=1, n_channels=9, seed=2))
    assert d.data.shape == (6, 9, 64)


# -- representation conversions ---------------------------------------------------

def rel_seq(arr):
    return MotionSeq(arr, frame=REL, space=RAW)


def test_rel_to_abs_zeros():
    out = rel_to_abs(rel_seq(np.zeros((5, 8))))
    assert out.frame == ABS
    assert np.array_equal(out.data, np.zeros((5, 8)))


def test_rel_to_abs_unit_forward_steps():
    arr = np.zeros((4, 6))
    arr[1] = 1.0  # forward 1 each frame, no rotation
    arr[3] = 7.0  # pose channel must pass through untouched
    out = rel_to_abs(rel_seq(arr))
    assert np.allclose(out.data[1], np.arange(6.0))
    assert np.allclose(out.data[2], 0.0)
    assert np.array_equal(out.data[3], arr[3])


def test_rel_to_abs_quarter_turns():
    # turn left 90 degrees each frame while stepping forward 1
    arr = np.zeros((3, 5))
    arr[0] = np.pi / 2
    arr[1] = 1.0
    out = rel_to_abs(rel_seq(arr)).data
    # headings 0, 90, 180, 270, 360; positions walk a unit square
    assert np.allclose(out[0], np.pi / 2 * np.arange(5))
    assert np.allclose(out[1], [0, 1, 1, 0, 0], atol=1e-12)
    assert np.allclose(out[2], [0, 0, 1, 1, 0], atol=1e-12)


def test_round_trip_rel_abs_rel():
    # exact on sequences whose final deltas repeat the previous frame
    rng = np.random.default_rng(21)
    v = rng.standard_normal((6, 12))
    v[0:3, -1] = v[0:3, -2]
    back = abs_to_rel(rel_to_abs(rel_seq(v)))
    assert back.frame == REL
    np.testing.assert_allclose(back.data, v, atol=1e-6)


def test_round_trip_abs_rel_abs_anchored():
    rng = np.random.default_rng(22)
    w = rel_to_abs(rel_seq(rng.standard_normal((5, 10))))  # anchored by construction
    again = rel_to_abs(abs_to_rel(w))
    np.testing.assert_allclose(again.data, w.data, atol=1e-10)


def test_round_trip_reanchors_unanchored_input(ds):
    # generated sequences start at a random heading: the round trip rotates
    # them to heading 0 at the origin but preserves shape
    w = ds.seq(7)
    back = rel_to_abs(abs_to_rel(w)).data.astype(np.float64)
    orig = w.data.astype(np.float64)
    assert back[0, 0] == 0.0
    assert np.allclose(back[1:3, 0], 0.0)
    np.testing.assert_allclose(np.diff(back[0]), np.diff(orig[0]), atol=1e-5)
    d_back = np.linalg.norm(np.diff(back[1:3], axis=1), axis=0)
    d_orig = np.linalg.norm(np.diff(orig[1:3], axis=1), axis=0)
    np.testing.assert_allclose(d_back, d_orig, atol=1e-4)
    np.testing.assert_array_equal(back[3:], orig[3:])


def test_conversion_tag_checks(ds):
    with pytest.raises(InvalidState):
        rel_to_abs(ds.seq(0))
    with pytest.raises(InvalidState):
        abs_to_rel(rel_seq(np.zeros((4, 4))))


# -- normalization ----------------------------------------------------------------

def test_norm_stats_reject_degenerate():
    with pytest.raises(ConstructionFailure, match=r"\[2\]"):
        NormStats(np.zeros(4), np.array([1.0, 2.0, 0.0, 1.0]))
    with pytest.raises(InvalidArgument):
        NormStats(np.zeros(3), np.ones(4))


def test_fit_apply_norm_standardizes(ds):
    train_idx, _ = split_dataset(ds)
    stats = fit_norm(ds.data[train_idx])
    normed = apply_norm(stats, ds.data[train_idx])
    flat = normed.astype(np.float64).transpose(1, 0, 2).reshape(17, -1)
    assert np.max(np.abs(flat.mean(axis=1))) < 1e-6
    assert np.max(np.abs(flat.var(axis=1) - 1.0)) < 1e-3


def test_norm_round_trip_double():
    rng = np.random.default_rng(30)
    stats = NormStats(rng.standard_normal(5), rng.uniform(0.5, 2, 5))
    x = rng.standard_normal((3, 5, 7)) * 50
    back = invert_norm(stats, apply_norm(stats, x))
    np.testing.assert_allclose(back, x, rtol=1e-6, atol=1e-6)


def test_norm_round_trip_float32(ds):
    stats = fit_norm(ds.data)
    back = invert_norm(stats, apply_norm(stats, ds.data))
    assert back.dtype == np.float32
    np.testing.assert_allclose(back, ds.data, rtol=1e-6, atol=1e-6)


def test_norm_motion_seq_tags(ds):
    stats = fit_norm(ds.data)
    n = apply_norm(stats, ds.seq(3))
    assert n.space == NORM
    r = invert_norm(stats, n)
    assert r.space == RAW
    with pytest.raises(InvalidState):
        apply_norm(stats, n)
    with pytest.raises(InvalidState):
        invert_norm(stats, ds.seq(3))


def test_norm_channel_mismatch(ds):
    stats = fit_norm(ds.data)
    with pytest.raises(InvalidArgument, match="17"):
        apply_norm(stats, np.zeros((4, 9, 64)))


def test_norm_descriptor_round_trip(ds):
    stats = fit_norm(ds.data)
    again = NormStats.from_descriptor(stats.descriptor())
    assert np.array_equal(again.mean, stats.mean)
    assert np.array_equal(again.std, stats.std)


# -- split -------------------------------------------------------------------------

def test_split_stratified(ds):
    train, val = split_dataset(ds)
    assert len(train) == 108 and len(val) == 12
    assert np.array_equal(np.sort(np.concatenate([train, val])), np.arange(120))
    for lab in range(6):
        assert np.sum(ds.labels[val] == lab) == 2
    t2, v2 = split_dataset(ds)
    assert np.array_equal(train, t2) and np.array_equal(val, v2)


def test_split_validation(ds):
    with pytest.raises(InvalidArgument):
        split_dataset(ds, val_fraction=0.0)
    with pytest.raises(InvalidArgument):
        split_dataset(ds, val_fraction=1.0)


# -- container ----------------------------------------------------------------------

def test_container_round_trip(tmp_path, ds):
    path = tmp_path / "d.gmdd"
    save_dataset(path, ds)
    again = load_dataset(path)
    assert np.array_equal(again.data, ds.data)
    assert np.array_equal(again.labels, ds.labels)
    assert again.spec == ds.spec


def test_container_rejects_garbage(tmp_path, ds):
    path = tmp_path / "d.gmdd"
    save_dataset(path, ds)
    raw = bytearray(path.read_bytes())

    bad = tmp_path / "bad.gmdd"
    bad.write_bytes(b"NOPE" + bytes(raw[4:]))
    with pytest.raises(InvalidArgument, match="not a dataset"):
        load_dataset(bad)

    wrong_ver = bytearray(raw)
    wrong_ver[4] = DATASET_VERSION + 1
    bad.write_bytes(bytes(wrong_ver))
    with pytest.raises(InvalidArgument, match="version"):
        load_dataset(bad)

    bad.write_bytes(bytes(raw[:-8]))
    with pytest.raises(InvalidArgument, match="payload"):
        load_dataset(bad)


def test_container_rejects_bad_label(tmp_path):
    d = generate_dataset(DatasetSpec(n_per_label=1, n_frames=4, n_channels=6))
    path = tmp_path / "d.gmdd"
    save_dataset(path, d)
    raw = bytearray(path.read_bytes())
    hlen = int.from_bytes(raw[8:12], "little")
    raw[12 + hlen] = 99  # first sequence's label id
    path.write_bytes(bytes(raw))
    with pytest.raises(InvalidArgument, match="label"):
        load_dataset(path)


def test_dataset_shape_validation():
    with pytest.raises(InvalidArgument):
        Dataset(data=np.zeros((2, 3, 4)), labels=np.zeros(3, dtype=np.int64),
                spec=DatasetSpec(n_per_label=1))
