import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codemae.data import (
    DataConfig,
    ImagePair,
    IngestionError,
    NormStats,
    NormStatsError,
    RenderConfig,
    denormalize,
    detect_edges,
    edge_overlap,
    fit_norm_stats,
    gen_scene,
    load_image_dir,
    normalize,
    read_png,
    render_optical,
    render_sar,
    speckle,
    synthetic_pair,
    synthetic_registry,
    write_manifest,
    write_png,
)
from codemae.objectives import BatchingError


@given(st.integers(0, 10_000))
@settings(max_examples=15)
def test_scene_invariants(seed):
    s = gen_scene(seed, 32, 32)
    assert s.structure.min() == 0 and s.structure.max() == s.num_regions - 1
    assert set(np.unique(s.structure)) == set(range(s.num_regions))
    h = s.class_histogram(4)
    assert abs(h.sum() - 1) < 1e-12 and s.label(4) == int(np.argmax(h))


def test_scene_is_deterministic():
    a, b = gen_scene(11), gen_scene(11)
    np.testing.assert_array_equal(a.structure, b.structure)
    np.testing.assert_array_equal(a.relief, b.relief)


def test_render_ranges_and_dtype():
    p = synthetic_pair(3)
    assert p.optical.shape == (3, 64, 64) and p.sar.shape == (1, 64, 64)
    for img in (p.optical, p.sar):
        assert img.dtype == np.float32 and img.min() >= 0 and img.max() <= 1


def test_speckle_is_unit_mean():
    x = speckle(np.random.default_rng(0), (200_000,), 4.0)
    assert abs(x.mean() - 1) < 0.01 and abs(x.var() - 0.25) < 0.01
    assert (speckle(np.random.default_rng(0), (5,), float("inf")) == 1).all()


def test_optical_edges_follow_region_boundaries():
    scores = []
    for seed in range(10):
        s = gen_scene(seed)
        img = render_optical(s, seed, RenderConfig(texture_amp=0.0))
        scores.append(edge_overlap(detect_edges(img, int(s.edges.sum())), s.edges, 1))
    assert np.mean(scores) > 0.6


def test_speckle_makes_sar_less_structured_than_optical():
    s = gen_scene(4)
    opt = render_optical(s, 1)
    sar = render_sar(s, 2)
    n = int(s.edges.sum())
    assert edge_overlap(detect_edges(opt, n), s.edges) > edge_overlap(detect_edges(sar, n, sigma=0), s.edges)


def test_registry_unpaired_split():
    reg = synthetic_registry(20, seed=1, size=16, unpaired_fraction=0.5)
    unpaired = [p for p in reg if not p.paired]
    assert len(unpaired) == 10
    assert sum(p.optical is None for p in unpaired) == 5 and sum(p.sar is None for p in unpaired) == 5
    assert len({p.sample_id for p in reg}) == 20


def test_paired_extent_mismatch():
    with pytest.raises(IngestionError):
        ImagePair(np.zeros((3, 8, 8)), np.zeros((1, 8, 4)), True, "d", "x")


def test_norm_stats_roundtrip(tmp_path):
    reg = synthetic_registry(6, size=16)
    stats = fit_norm_stats(reg)
    stats.save(tmp_path / "n.tsv")
    again = NormStats.load(tmp_path / "n.tsv")
    for key, (mu, sd) in stats.entries.items():
        np.testing.assert_array_equal(again.entries[key][0], mu)
        np.testing.assert_array_equal(again.entries[key][1], sd)
    img = reg[0].optical.astype(np.float64)
    z = normalize(img, stats, "synthetic", "optical")
    np.testing.assert_allclose(denormalize(z, stats, "synthetic", "optical"), img, atol=1e-12)
    with pytest.raises(NormStatsError):
        stats.get("other", "sar")


def test_normalized_registry_is_standard():
    reg = synthetic_registry(8, size=16)
    stats = fit_norm_stats(reg)
    z = np.stack([normalize(p.sar.astype(np.float64), stats, "synthetic", "sar") for p in reg])
    assert abs(z.mean()) < 1e-10 and abs(z.std() - 1) < 1e-10


def test_zero_variance_rejected():
    p = ImagePair(np.zeros((3, 8, 8)), np.ones((1, 8, 8)), True, "d", "a")
    with pytest.raises(NormStatsError):
        fit_norm_stats([p])


def _iter(reg, cfg, seed=0, steps=None):
    from codemae.data import batch_iter

    return list(batch_iter(reg, cfg, np.random.default_rng(seed), steps=steps))


def test_batches_are_homogeneous_and_shared_masks():
    reg = synthetic_registry(8, size=16)
    cfg = DataConfig(batch_size=4, paired_batches=1, unpaired_batches=1, num_patches=16)
    batches = _iter(reg, cfg, steps=20)
    kinds = {plan.paired for plan, _ in batches}
    assert kinds == {True, False}
    for plan, batch in batches:
        assert batch.paired == plan.paired
        if batch.paired:
            for a, b in zip(batch.optical_plans, batch.sar_plans):
                np.testing.assert_array_equal(a.mask, b.mask)
                np.testing.assert_array_equal(a.visible, b.visible)
            assert batch.optical.shape == (4, 3, 16, 16) and batch.sar.shape == (4, 1, 16, 16)
        else:
            assert batch.optical.shape[0] == 2 and batch.sar.shape[0] == 2


def test_batching_is_reproducible():
    reg = synthetic_registry(8, size=16)
    cfg = DataConfig(batch_size=4, num_patches=16)
    a, b = _iter(reg, cfg, 3), _iter(reg, cfg, 3)
    for (pa, ba), (pb, bb) in zip(a, b):
        assert pa.sample_ids == pb.sample_ids
        np.testing.assert_array_equal(ba.optical, bb.optical)


def test_paired_batches_need_paired_samples():
    reg = [p for p in synthetic_registry(6, size=16, unpaired_fraction=1.0)]
    with pytest.raises(BatchingError):
        _iter(reg, DataConfig(batch_size=2, num_patches=16))
    assert _iter(reg, DataConfig(batch_size=2, paired_batches=0, unpaired_batches=1, num_patches=16))


def test_png_roundtrip(tmp_path):
    r = np.random.default_rng(0)
    q8 = np.round(r.random((3, 8, 8)) * 255) / 255
    write_png(tmp_path / "a.png", q8)
    np.testing.assert_allclose(read_png(tmp_path / "a.png"), q8, atol=1e-7)
    q16 = np.round(r.random((1, 8, 8)) * 65535) / 65535
    write_png(tmp_path / "b.png", q16, bits=16)
    np.testing.assert_allclose(read_png(tmp_path / "b.png"), q16, atol=1e-7)


def test_image_dir_ingestion(tmp_path):
    p = synthetic_pair(0, 16)
    write_png(tmp_path / "o.png", p.optical)
    write_png(tmp_path / "s.png", p.sar, bits=16)
    write_png(tmp_path / "small.png", np.zeros((1, 8, 8)), bits=16)
    write_manifest(tmp_path / "manifest.tsv", [
        dict(dataset_id="d", sample_id="a", optical_path="o.png", sar_path="s.png", paired_flag=1, label=2),
        dict(dataset_id="d", sample_id="b", optical_path="o.png", sar_path=None, paired_flag=0),
    ])
    reg = load_image_dir(tmp_path)
    assert [r.paired for r in reg] == [True, False] and reg[0].label == 2
    assert reg[1].load().sar is None
    write_manifest(tmp_path / "bad.tsv", [
        dict(dataset_id="d", sample_id="c", optical_path="o.png", sar_path="small.png", paired_flag=1)])
    with pytest.raises(IngestionError):
        load_image_dir(tmp_path, "bad.tsv")
    with pytest.raises(IngestionError):
        load_image_dir(tmp_path, "missing.tsv")
