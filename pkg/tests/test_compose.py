import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from futureframes import compose as cp
from futureframes import decompose as dc
from futureframes.objects import ObjectLayer
from scenes import bg_composite as _bg_composite
from scenes import occlusion_scene


def _track(oid, y0, y1, x0=0, x1=5, shape=(220, 40)):
    m = np.zeros(shape, bool)
    m[y0:y1, x0:x1] = True
    app = np.zeros((y1 - y0, x1 - x0, 3))
    return dc.ObjectTrack(oid, [m], app, np.ones(app.shape[:2], bool), (x0, y0), shape + (3,))


# ---------------------------------------------------------------------------
# ordering and pasting


def test_depth_order_examples():
    a = _track(1, 90, 101)
    assert [t.id for t in cp.depth_order([a])] == [1]
    b = _track(2, 190, 201)
    assert [t.id for t in cp.depth_order([b, a])] == [1, 2]
    small = _track(3, 95, 101, 0, 5)  # 30 px
    big = _track(4, 91, 101, 0, 8)  # 80 px
    assert [t.id for t in cp.depth_order([big, small])] == [3, 4]
    twin = _track(5, 95, 101, 10, 15)
    assert [t.id for t in cp.depth_order([twin, small])] == [3, 5]


def test_composite_invariants():
    with pytest.raises(ValueError):
        cp.CompositeFrame(np.zeros((4, 4, 3)), np.ones((4, 4), bool), np.zeros((4, 4)))
    with pytest.raises(ValueError):
        cp.CompositeFrame(np.zeros((4, 4, 3)), np.zeros((4, 5), bool), np.zeros((4, 5)))


def test_paste_examples(rng):
    bg = rng.random((12, 16, 3))
    valid = np.ones((12, 16), bool)
    c = cp.paste(bg, valid, [])
    assert np.array_equal(c.image, bg) and not c.hole.any() and (c.provenance == cp.BACKGROUND).all()

    red = (np.tile([1.0, 0, 0], (4, 4, 1)), np.ones((4, 4), bool), (2, 2))
    blue = (np.tile([0, 0, 1.0], (4, 4, 1)), np.ones((4, 4), bool), (4, 4))
    c = cp.paste(bg, valid, [red, blue], ids=[7, 9])
    assert np.array_equal(c.image[5, 5], [0, 0, 1.0]) and c.provenance[5, 5] == 9
    assert c.provenance[2, 2] == 7

    band = valid.copy()
    band[:, 10:12] = False
    c = cp.paste(bg, band, [red])
    assert np.array_equal(c.hole, ~band)
    assert (c.image[c.hole] == 0).all()

    covered = cp.paste(bg, band, [(np.ones((12, 2, 3)), np.ones((12, 2), bool), (10, 0))])
    assert not covered.hole.any()

    clipped = cp.paste(bg, valid, [ObjectLayer(np.ones((4, 4, 3)), np.ones((4, 4), bool), (14, -2))])
    assert clipped.object_pixels.sum() == 4
    with pytest.raises(ValueError):
        cp.paste(bg, valid, [red], ids=[0])


# ---------------------------------------------------------------------------
# propagation


def test_zero_flow_temporal_copy(rng):
    img = rng.random((10, 12, 3))
    hole = np.zeros((10, 12), bool)
    hole[3:6, 4:8] = True
    comps = [_bg_composite(img), _bg_composite(img, hole), _bg_composite(img)]
    z = [np.zeros((10, 12, 2))] * 2
    out = cp.video_inpaint(comps, z, z)
    assert not out[1].hole.any()
    assert np.array_equal(out[1].image, img)
    assert (out[1].provenance[hole] == cp.PROPAGATED).all()


def test_hole_everywhere_stays(rng):
    img = rng.random((10, 12, 3))
    hole = np.zeros((10, 12), bool)
    hole[3:6, 4:8] = True
    comps = [_bg_composite(img, hole) for _ in range(3)]
    z = [np.zeros((10, 12, 2))] * 2
    out = cp.video_inpaint(comps, z, z)
    assert all(np.array_equal(o.hole, hole) for o in out)


def test_objects_not_used_as_sources(rng):
    img = rng.random((10, 12, 3))
    hole = np.zeros((10, 12), bool)
    hole[3:6, 4:8] = True
    src = _bg_composite(img)
    src.provenance[hole] = 3
    z = [np.zeros((10, 12, 2))]
    out = cp.video_inpaint([src, _bg_composite(img, hole)], z, z)
    assert out[1].hole.sum() == hole.sum()
    out = cp.video_inpaint([src, _bg_composite(img, hole)], z, z, use_objects=True)
    assert not out[1].hole.any()


def test_video_inpaint_argument_check(rng):
    c = _bg_composite(rng.random((4, 4, 3)))
    with pytest.raises(ValueError):
        cp.video_inpaint([c, c], [], [])


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_occluded_then_revealed_content(seed):
    comps, fwd, bwd, gt = occlusion_scene(seed)
    trace = []
    out = cp.video_inpaint(comps, fwd, bwd, trace=trace)
    assert all(b <= a for a, b in zip(trace, trace[1:]))
    assert trace[-1] < trace[0]
    for c, o, g in zip(comps, out, gt):
        filled = c.hole & ~o.hole
        assert np.array_equal(o.image[~c.hole], c.image[~c.hole])
        if filled.any():
            assert np.abs(o.image[filled] - g[filled]).mean() < 2 / 255


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 100_000))
def test_hole_area_non_increasing_and_known_pixels_fixed(seed):
    r = np.random.default_rng(seed)
    n, H, W = 4, 12, 14
    comps = []
    for _ in range(n):
        hole = r.random((H, W)) > 0.6
        c = _bg_composite(r.random((H, W, 3)), hole)
        obj = (r.random((H, W)) > 0.85) & ~hole
        c.provenance[obj] = 1
        comps.append(c)
    fwd = [r.normal(scale=1.5, size=(H, W, 2)) for _ in range(n - 1)]
    bwd = [-f + r.normal(scale=0.3, size=(H, W, 2)) for f in fwd]
    trace = []
    out = cp.video_inpaint(comps, fwd, bwd, trace=trace)
    assert all(b <= a for a, b in zip(trace, trace[1:]))
    for c, o in zip(comps, out):
        keep = ~c.hole
        assert np.array_equal(o.image[keep], c.image[keep])
        assert np.array_equal(o.provenance[keep], c.provenance[keep])
        assert not (o.hole & ~c.hole).any()
    again = cp.video_inpaint(comps, fwd, bwd)
    assert all(np.array_equal(a.image, b.image) for a, b in zip(out, again))


# ---------------------------------------------------------------------------
# final fill


def test_final_fill_examples(rng):
    img = rng.random((10, 10, 3))
    c = _bg_composite(img)
    out = cp.final_fill(c)
    assert np.array_equal(out.image, img) and np.array_equal(out.provenance, c.provenance)

    hole = np.zeros((10, 10), bool)
    hole[4:6, 5] = True
    out = cp.final_fill(_bg_composite(img, hole))
    ring = np.zeros_like(hole)
    ring[3:7, 4:7] = True
    ring &= ~hole
    assert not out.hole.any() and (out.provenance[hole] == cp.DIFFUSED).all()
    for ch in range(3):
        assert img[ring, ch].min() - 1e-12 <= out.image[hole, ch].min()
        assert out.image[hole, ch].max() <= img[ring, ch].max() + 1e-12

    with pytest.raises(ValueError):
        cp.final_fill(_bg_composite(img, np.ones((10, 10), bool)))


def test_final_fill_checkerboard_deterministic():
    checker = (np.indices((16, 16)).sum(axis=0) % 2).astype(float)[..., None].repeat(3, axis=2)
    hole = np.zeros((16, 16), bool)
    hole[5:11, 5:11] = True
    a = cp.final_fill(_bg_composite(checker, hole))
    b = cp.final_fill(_bg_composite(checker, hole))
    assert np.array_equal(a.image, b.image)
    assert a.image.min() >= 0.0 and a.image.max() <= 1.0
    assert np.array_equal(a.image[~hole], checker[~hole])


def test_final_fill_prefers_background_sources():
    img = np.full((10, 10, 3), 0.2)
    prov = np.zeros((10, 10), int)
    prov[:, 6:] = 2
    img[:, 6:] = 0.9
    hole = np.zeros((10, 10), bool)
    hole[4:6, 4:6] = True
    prov[hole] = cp.HOLE
    out = cp.final_fill(cp.CompositeFrame(img, hole, prov))
    assert np.allclose(out.image[hole], 0.2)
