import cv2
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_samples
from padkit.data import (
    MANIFEST_HEADER,
    AugmentationConfig,
    Manifest,
    ManifestError,
    OpenCVDecoder,
    Sample,
    augment,
    class_balanced_weights,
    compose_balanced_batches,
    crop_face,
    expand_box,
    load_manifest,
    load_sample_image,
    sample_frame_indices,
    sample_rng,
    write_manifest,
)

HEADER = ",".join(MANIFEST_HEADER)


def write_csv(path, lines):
    path.write_text("\n".join([HEADER, *lines]) + "\n")
    return path


# -- manifests ---------------------------------------------------------------

def test_manifest_parses_rows(tmp_path):
    p = write_csv(tmp_path / "m.csv", [
        "a.png,image,bonafide,,C,a,0,,,,",
        "b.mp4,video,attack,replay,C,b,12,10,20,30,40",
        "c.png,image,attack,print,C,,0,,,,",
    ])
    m = load_manifest(p)
    assert len(m) == 3
    assert m.rows[0].label == "bona_fide" and m.rows[0].face_box is None
    assert m.rows[1].face_box == (10, 20, 30, 40) and m.rows[1].frame_index == 12
    assert m.rows[2].video_id == "c"
    assert list(m.labels()) == [1, 0, 0]


def test_manifest_bona_fide_with_attack_type_names_row(tmp_path):
    p = write_csv(tmp_path / "m.csv", ["a.png,image,bonafide,,C,a,0,,,,", "b.png,image,bonafide,print,C,b,0,,,,"])
    with pytest.raises(ManifestError, match="row 3"):
        load_manifest(p)


def test_manifest_header_only(tmp_path):
    assert len(load_manifest(write_csv(tmp_path / "m.csv", []))) == 0


def test_manifest_unknown_label(tmp_path):
    with pytest.raises(ManifestError, match="row 2"):
        load_manifest(write_csv(tmp_path / "m.csv", ["a.png,image,live,,C,a,0,,,,"]))


def test_manifest_partial_box(tmp_path):
    with pytest.raises(ManifestError):
        load_manifest(write_csv(tmp_path / "m.csv", ["a.png,image,attack,print,C,a,0,1,2,,"]))


def test_manifest_wrong_header(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("path,label\n")
    with pytest.raises(ManifestError):
        load_manifest(p)


def test_manifest_duplicate_frame():
    s = Sample("a.png", "image", "attack", "print", "C", "a")
    with pytest.raises(ValueError):
        Manifest([s, s])


def test_manifest_round_trip_bytes(tmp_path):
    p = write_csv(tmp_path / "m.csv", [
        "a.png,image,bonafide,,C,a,0,,,,",
        "b.mp4,video,attack,replay,I,b,12,10,20,30,40",
        "b.mp4,video,attack,replay,I,b,13,10,20,30,40",
    ])
    m = load_manifest(p)
    out1 = write_manifest(m, tmp_path / "out1.csv")
    assert out1.read_bytes() == p.read_bytes()
    out2 = write_manifest(load_manifest(out1), tmp_path / "out2.csv")
    assert out1.read_bytes() == out2.read_bytes()


def test_manifest_filter_and_add():
    m = make_samples(2, 2, "A") + make_samples(1, 1, "B")
    assert m.dataset_ids() == ["A", "B"]
    assert len(m.filter("B")) == 2


# -- frame sampling ----------------------------------------------------------

@pytest.mark.parametrize("total,k,expected", [
    (25, 25, list(range(25))),
    (5, 1, [2]),
    (9, 3, [0, 4, 8]),
])
def test_frame_indices(total, k, expected):
    assert sample_frame_indices(total, k) == expected


def test_frame_indices_too_many():
    with pytest.raises(ValueError):
        sample_frame_indices(10, 11)


@given(st.integers(1, 2000), st.data())
def test_frame_indices_properties(total, data):
    k = data.draw(st.integers(1, min(total, 60)))
    idx = sample_frame_indices(total, k)
    assert len(idx) == k
    assert all(0 <= i < total for i in idx)
    assert idx == sorted(set(idx))
    assert sample_frame_indices(total, k) == idx
    if k > 1:
        assert idx[0] == 0 and idx[-1] == total - 1


# -- cropping ----------------------------------------------------------------

def test_crop_identity():
    img = np.random.default_rng(0).integers(0, 256, (224, 224, 3), dtype=np.uint8)
    assert np.array_equal(crop_face(img, (0, 0, 224, 224), 0.0), img)


def test_expand_box_hand_value():
    # 5% of 200 is 10 on every side
    assert expand_box((100, 100, 200, 200), 0.05, (500, 500, 3)) == (90, 90, 220, 220)


def test_expand_box_clips_at_edges():
    x, y, w, h = expand_box((0, 400, 100, 100), 0.05, (500, 500, 3))
    assert (x, y) == (0, 395)
    assert x + w <= 500 and y + h <= 500


def test_expand_box_rejects_outside():
    with pytest.raises(ValueError):
        expand_box((450, 0, 100, 100), 0.0, (500, 500, 3))


@settings(max_examples=60, deadline=None)
@given(st.integers(20, 300), st.integers(20, 300), st.floats(0, 0.5), st.data())
def test_crop_always_224(height, width, margin, data):
    x = data.draw(st.integers(0, width - 1))
    y = data.draw(st.integers(0, height - 1))
    w = data.draw(st.integers(1, width - x))
    h = data.draw(st.integers(1, height - y))
    img = np.zeros((height, width, 3), np.uint8)
    assert crop_face(img, (x, y, w, h), margin).shape == (224, 224, 3)


def test_load_sample_from_video(tmp_path):
    path = tmp_path / "v.avi"
    writer = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"MJPG"), 10, (64, 48))
    for i in range(12):
        writer.write(np.full((48, 64, 3), i * 20, np.uint8))
    writer.release()
    dec = OpenCVDecoder()
    assert dec.frame_count(str(path)) == 12
    s = Sample("v.avi", "video", "bona_fide", "", "C", "v", 5, (8, 8, 32, 32))
    crop = load_sample_image(s, margin=0.1, root=tmp_path, decoder=dec)
    assert crop.shape == (224, 224, 3)
    assert abs(float(crop.mean()) - 100) < 6


# -- augmentation ------------------------------------------------------------

def textured(seed=0, size=64):
    return np.random.default_rng(seed).integers(0, 256, (size, size, 3), dtype=np.uint8)


def test_augment_disabled_identity():
    img = textured()
    out = augment(img, AugmentationConfig(enabled=False), np.random.default_rng(0))
    assert out.tobytes() == img.tobytes()


def test_augment_zero_limits_identity():
    cfg = AugmentationConfig(hflip_probability=0.0, shift_scale_rotate_limit=0.0, gamma_range=(100, 100),
                             rgb_shift_limit=0, color_jitter_limit=0.0)
    img = textured()
    assert np.array_equal(augment(img, cfg, np.random.default_rng(3)), img)


def test_augment_deterministic():
    img = textured()
    cfg = AugmentationConfig()
    a = augment(img, cfg, sample_rng(7, 1, 2))
    b = augment(img, cfg, sample_rng(7, 1, 2))
    assert np.array_equal(a, b)
    assert a.shape == img.shape and a.dtype == np.uint8


def test_augment_seed_variation():
    img = textured()
    cfg = AugmentationConfig()
    differ = sum(not np.array_equal(augment(img, cfg, sample_rng(s)), augment(img, cfg, sample_rng(s + 1)))
                 for s in range(100))
    assert differ >= 99


def test_augment_flip_only():
    cfg = AugmentationConfig(hflip_probability=1.0, shift_scale_rotate_limit=0.0, gamma_range=(100, 100),
                             rgb_shift_limit=0, color_jitter_limit=0.0)
    img = textured()
    assert np.array_equal(augment(img, cfg, np.random.default_rng(0)), img[:, ::-1])


def test_augmentation_config_validation():
    with pytest.raises(ValueError):
        AugmentationConfig(gamma_range=(180, 80))
    with pytest.raises(ValueError):
        AugmentationConfig(hflip_probability=2.0)


# -- balanced sampling -------------------------------------------------------

def _bona_fraction(manifest, draws=10_000, batch_size=100, seed=0):
    rng = np.random.default_rng(seed)
    n = 0
    bona = 0
    while n < draws:
        for batch in compose_balanced_batches(manifest, batch_size, rng):
            bona += sum(s.label == "bona_fide" for s in batch)
            n += len(batch)
    return bona / n


def test_sampler_balances_skewed():
    assert abs(_bona_fraction(make_samples(100, 900)) - 0.5) <= 0.02


def test_sampler_balanced_input():
    assert abs(_bona_fraction(make_samples(500, 500)) - 0.5) <= 0.02


def test_sampler_single_class_error():
    with pytest.raises(ValueError):
        next(compose_balanced_batches(make_samples(0, 10), 4, np.random.default_rng(0)))


def test_sampler_odd_batch_error():
    with pytest.raises(ValueError):
        next(compose_balanced_batches(make_samples(5, 5), 3, np.random.default_rng(0)))


def test_balanced_weights_sum():
    w = class_balanced_weights([1, 0, 0, 0])
    assert w.sum() == pytest.approx(1.0)
    assert w[0] == pytest.approx(0.5)


def test_sampler_epoch_length():
    batches = list(compose_balanced_batches(make_samples(30, 20), 16, np.random.default_rng(0)))
    assert len(batches) == 4 and all(len(b) == 16 for b in batches)
