import numpy as np
import pytest

from mvhand import handmodel as hm
from mvhand import synthdata as sd
from mvhand import triangulate as tri
from mvhand.config import NoiseModel, RigConfig


@pytest.fixture(scope="module")
def small():
    return sd.generate_dataset(RigConfig(), NoiseModel(), 40, seed=3)


def test_sample_pose_reproducible_and_bounded():
    a = sd.sample_pose(np.random.default_rng(5))
    b = sd.sample_pose(np.random.default_rng(5))
    assert np.array_equal(a.theta, b.theta) and np.array_equal(a.beta, b.beta)
    rng = np.random.default_rng(6)
    poses = [sd.sample_pose(rng) for _ in range(1000)]
    betas = np.stack([p.beta for p in poses])
    assert betas.min() >= -2 and betas.max() <= 2
    from mvhand import diffcore as dc
    mult = hm.bone_multipliers(dc.constant(betas)).value
    assert mult.min() >= 0.2 and mult.max() <= 5.0
    J = hm.forward_kinematics(dc.constant(np.stack([p.theta for p in poses])), dc.constant(betas)).value
    assert np.all(np.isfinite(J))


def test_zero_noise_labels_equal_gt():
    ds = sd.generate_dataset(RigConfig(), NoiseModel.zero(), 5, seed=1)
    assert np.array_equal(ds.labels, ds.gt2d)
    assert np.all(ds.conf == 1.0)


def test_outlier_prob_one_displaces_everything():
    noise = NoiseModel(gaussian_sigma_px=0.0, outlier_prob=1.0, outlier_radius_px=40.0, drop_prob=0.0)
    rng = np.random.default_rng(0)
    gt = rng.uniform(80, 170, size=(8, 21, 2))
    labels, conf, outlier, _ = sd.corrupt(gt, noise, rng, 256)
    assert outlier.all()
    assert np.linalg.norm(labels - gt, axis=-1).min() >= 0.5 * 40.0 - 1e-9
    assert conf.max() <= noise.outlier_conf[1]


def test_outlier_fraction_within_three_standard_errors():
    noise = NoiseModel()
    shape = (500, 8, 21)
    _, _, outlier, _ = sd.corrupt(np.full(shape + (2,), 128.0), noise, np.random.default_rng(1), 256)
    n = outlier.size
    se = np.sqrt(noise.outlier_prob * (1 - noise.outlier_prob) / n)
    assert abs(outlier.mean() - noise.outlier_prob) < 3 * se


def test_same_seed_gives_identical_file(tmp_path):
    for name in ("a", "b"):
        sd.save_dataset(sd.generate_dataset(RigConfig(), NoiseModel(), 10, seed=9), tmp_path / f"{name}.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_round_trip_equals_in_memory(small, tmp_path):
    sd.save_dataset(small, tmp_path / "d.jsonl")
    back = sd.load_dataset(tmp_path / "d.jsonl")
    for f in ("theta", "beta", "gt3d", "gt2d", "labels", "conf"):
        assert np.array_equal(getattr(back, f), getattr(small, f)), f
    assert back.seed == small.seed and len(back.cams) == 8


def test_bad_header_rejected(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"type": "header", "version": 99}\n')
    with pytest.raises(ValueError):
        sd.load_dataset(p)


def test_triangulating_gt2d_recovers_gt3d(small):
    for i in range(len(small)):
        X = tri.dlt_many(small.gt2d[i].transpose(1, 0, 2), small.cams)
        assert np.abs(X - small.gt3d[i]).max() < 1e-6


def test_gt2d_matches_camera_frame_projection(small):
    rel = small.gt_camera_frame()
    assert rel.shape == (40, 8, 21, 3)
    assert np.allclose(rel[:, :, 0], 0)
    # bone lengths agree across views (frames differ by rotation only)
    assert np.allclose(hm.bone_lengths(rel[:, 0]), hm.bone_lengths(rel[:, 5]))


def test_split_is_stable_and_disjoint(small):
    tr, te = small.split(0.1)
    tr2, te2 = small.split(0.1)
    assert np.array_equal(tr, tr2) and np.array_equal(te, te2)
    assert set(tr).isdisjoint(te) and len(tr) + len(te) == len(small)


def test_generation_fails_when_rig_cannot_see_hand():
    with pytest.raises(sd.GenerationError):
        sd.generate_dataset(RigConfig(radius=0.01), NoiseModel(), 1, seed=0)


def test_select_views_and_with_labels(small):
    sub = small.select_views([2, 5])
    assert sub.num_views == 2 and np.array_equal(sub.labels, small.labels[:, [2, 5]])
    swapped = small.with_labels(small.gt2d, np.ones(small.conf.shape))
    assert np.array_equal(swapped.labels, small.gt2d)
