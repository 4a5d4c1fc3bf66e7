import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shaperefine.errors import MetricUndefinedError, ShapeError
from shaperefine.metrics import MetricReport, asd, dice, evaluate, sen_spe, surface_voxels
from shaperefine.volume import MaskVolume


def vol(arr, spacing=(1.0, 1.0, 1.0)):
    return MaskVolume.from_array(np.asarray(arr, dtype=np.uint8), spacing=spacing)


def random_blob_pair(seed, dims=(8, 8, 8)):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(2):
        v = np.zeros(dims, dtype=np.uint8)
        for _ in range(rng.integers(1, 4)):
            c = rng.integers(0, dims, size=3)
            r = rng.uniform(1.0, 3.0)
            zz, yy, xx = np.ogrid[0 : dims[0], 0 : dims[1], 0 : dims[2]]
            v[(zz - c[0]) ** 2 + (yy - c[1]) ** 2 + (xx - c[2]) ** 2 <= r * r] = 1
        out.append(vol(v))
    return out


def surface_oracle(vox):
    dz, dy, dx = vox.shape
    out = []
    for z in range(dz):
        for y in range(dy):
            for x in range(dx):
                if vox[z, y, x] != 1:
                    continue
                for oz, oy, ox in ((1, 0, 0), (-1, 0, 0), (0, 1, 0),
                                   (0, -1, 0), (0, 0, 1), (0, 0, -1)):
                    zz, yy, xx = z + oz, y + oy, x + ox
                    inside = 0 <= zz < dz and 0 <= yy < dy and 0 <= xx < dx
                    if not inside or vox[zz, yy, xx] == 0:
                        out.append((z, y, x))
                        break
    return out


def asd_oracle(a, b):
    sa, sb = surface_oracle(a.voxels), surface_oracle(b.voxels)
    sx, sy, sz = a.spacing
    scale = (sz, sy, sx)

    def nearest(p, qs):
        return min(
            math.sqrt(sum(((pi - qi) * si) ** 2 for pi, qi, si in zip(p, q, scale)))
            for q in qs
        )

    total = sum(nearest(p, sb) for p in sa) + sum(nearest(q, sa) for q in sb)
    return total / (len(sa) + len(sb))


class TestDice:
    def test_identical(self):
        a = random_blob_pair(0)[0]
        assert dice(a, a) == 1.0

    def test_disjoint(self):
        a = np.zeros((2, 2, 2)), np.zeros((2, 2, 2))
        a[0][0, 0, 0] = 1
        a[1][1, 1, 1] = 1
        assert dice(vol(a[0]), vol(a[1])) == 0.0

    def test_half_overlap(self):
        a = np.zeros((1, 2, 4), dtype=np.uint8)
        b = np.zeros((1, 2, 4), dtype=np.uint8)
        a[0, :, :2] = 1  # |A| = 4
        b[0, :, 1:3] = 1  # |B| = 4, overlap 2
        assert dice(vol(a), vol(b)) == 0.5

    def test_both_empty(self):
        e = vol(np.zeros((2, 2, 2)))
        assert dice(e, e) == 1.0

    def test_counting_oracle_exact(self):
        a, b = random_blob_pair(5)
        inter = sum(
            1
            for z in range(8) for y in range(8) for x in range(8)
            if a.voxels[z, y, x] and b.voxels[z, y, x]
        )
        na, nb = int(a.voxels.sum()), int(b.voxels.sum())
        assert dice(a, b) == 2.0 * inter / (na + nb)

    def test_dims_mismatch(self):
        with pytest.raises(ShapeError):
            dice(vol(np.zeros((2, 2, 2))), vol(np.zeros((2, 2, 3))))

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10 ** 9))
    def test_symmetric_and_bounded(self, seed):
        a, b = random_blob_pair(seed)
        d = dice(a, b)
        assert d == dice(b, a)
        assert 0.0 <= d <= 1.0


class TestSurface:
    def test_cube_sheds_center(self):
        v = np.zeros((5, 5, 5), dtype=np.uint8)
        v[1:4, 1:4, 1:4] = 1
        got = {tuple(p) for p in surface_voxels(v)}
        assert len(got) == 26 and (2, 2, 2) not in got

    def test_border_counts_as_background(self):
        v = np.ones((3, 3, 3), dtype=np.uint8)
        got = {tuple(p) for p in surface_voxels(v)}
        assert len(got) == 26 and (1, 1, 1) not in got

    def test_single_voxel_and_thin_slab(self):
        v = np.zeros((3, 3, 3), dtype=np.uint8)
        v[1, 1, 1] = 1
        assert [tuple(p) for p in surface_voxels(v)] == [(1, 1, 1)]
        slab = np.ones((1, 4, 4), dtype=np.uint8)
        assert len(surface_voxels(slab)) == 16

    def test_matches_loop_oracle(self):
        a, _ = random_blob_pair(7)
        assert [tuple(p) for p in surface_voxels(a.voxels)] == surface_oracle(a.voxels)


class TestASD:
    def test_identical_is_zero(self):
        a, _ = random_blob_pair(1)
        assert asd(a, a) == 0.0

    def test_two_singletons(self):
        a = np.zeros((1, 1, 5), dtype=np.uint8)
        b = np.zeros((1, 1, 5), dtype=np.uint8)
        a[0, 0, 0] = 1
        b[0, 0, 3] = 1
        assert asd(vol(a), vol(b)) == 3.0

    def test_spacing_scales_distance(self):
        a = np.zeros((5, 1, 1), dtype=np.uint8)
        b = np.zeros((5, 1, 1), dtype=np.uint8)
        a[0, 0, 0] = 1
        b[3, 0, 0] = 1
        # spacing is (sx, sy, sz); the two voxels differ along z
        assert asd(vol(a, spacing=(1.0, 1.0, 2.0)), vol(b, spacing=(1.0, 1.0, 2.0))) == 6.0

    def test_empty_mask_undefined(self):
        a, _ = random_blob_pair(2)
        empty = vol(np.zeros((8, 8, 8)))
        with pytest.raises(MetricUndefinedError):
            asd(a, empty)
        with pytest.raises(MetricUndefinedError):
            asd(empty, a)

    def test_dims_and_spacing_checked(self):
        a = vol(np.ones((2, 2, 2)))
        with pytest.raises(ShapeError):
            asd(a, vol(np.ones((2, 2, 3))))
        with pytest.raises(ShapeError):
            asd(a, vol(np.ones((2, 2, 2)), spacing=(2.0, 1.0, 1.0)))

    def test_matches_brute_force(self):
        for seed in range(8):
            a, b = random_blob_pair(seed + 100)
            if not (a.voxels.any() and b.voxels.any()):
                continue
            assert abs(asd(a, b) - asd_oracle(a, b)) < 1e-9

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10 ** 9))
    def test_symmetric_nonnegative(self, seed):
        a, b = random_blob_pair(seed, dims=(6, 6, 6))
        if not (a.voxels.any() and b.voxels.any()):
            return
        d = asd(a, b)
        assert d == asd(b, a)
        assert d >= 0.0


class TestSenSpe:
    def test_perfect_prediction(self):
        a, _ = random_blob_pair(3)
        sen, spe, flags = sen_spe(a, a)
        assert sen == 1.0 and spe == 1.0 and flags == ()

    def test_all_positive_prediction(self):
        gt = np.zeros((2, 2, 2), dtype=np.uint8)
        gt[0] = 1
        sen, spe, flags = sen_spe(vol(np.ones((2, 2, 2))), vol(gt))
        assert sen == 1.0 and spe == 0.0 and flags == ()

    def test_hand_counts(self):
        # 4x2x2 volume (16 voxels): TP=3, FN=1, FP=2, TN=10
        gt = np.zeros(16, dtype=np.uint8)
        pred = np.zeros(16, dtype=np.uint8)
        gt[:4] = 1
        pred[[0, 1, 2, 4, 5]] = 1
        sen, spe, flags = sen_spe(vol(pred.reshape(4, 2, 2)), vol(gt.reshape(4, 2, 2)))
        assert sen == 0.75 and spe == 10.0 / 12.0 and flags == ()

    def test_degenerate_flags(self):
        empty = vol(np.zeros((2, 2, 2)))
        full = vol(np.ones((2, 2, 2)))
        sen, spe, flags = sen_spe(empty, empty)
        assert sen == 1.0 and flags == ("sensitivity_degenerate",)
        sen, spe, flags = sen_spe(full, full)
        assert spe == 1.0 and flags == ("specificity_degenerate",)

    def test_counting_oracle_exact(self):
        pred, gt = random_blob_pair(11)
        tp = fn = tn = fp = 0
        for z in range(8):
            for y in range(8):
                for x in range(8):
                    p, g = bool(pred.voxels[z, y, x]), bool(gt.voxels[z, y, x])
                    tp += p and g
                    fn += (not p) and g
                    tn += (not p) and (not g)
                    fp += p and (not g)
        sen, spe, _ = sen_spe(pred, gt)
        assert sen == tp / (tp + fn) and spe == tn / (tn + fp)

    def test_dims_mismatch(self):
        with pytest.raises(ShapeError):
            sen_spe(vol(np.zeros((2, 2, 2))), vol(np.zeros((2, 2, 3))))


class TestEvaluate:
    def test_matches_parts(self):
        pred, gt = random_blob_pair(13)
        r = evaluate(pred, gt)
        assert r.dice == dice(pred, gt)
        assert r.asd_mm == asd(pred, gt)
        sen, spe, flags = sen_spe(pred, gt)
        assert (r.sensitivity, r.specificity) == (sen, spe)
        assert r.flags == flags

    def test_undefined_asd_becomes_null(self):
        pred = vol(np.zeros((4, 4, 4)))
        gt, _ = random_blob_pair(14, dims=(4, 4, 4))
        r = evaluate(pred, gt)
        assert r.asd_mm is None
        assert "asd_undefined" in r.flags

    def test_both_empty(self):
        e = vol(np.zeros((3, 3, 3)))
        r = evaluate(e, e)
        assert r.dice == 1.0 and r.asd_mm is None
        assert set(r.flags) == {"sensitivity_degenerate", "asd_undefined"}

    def test_json_shape(self):
        r = MetricReport(dice=0.5, asd_mm=None, sensitivity=1.0,
                         specificity=0.25, flags=("asd_undefined",))
        d = json.loads(r.to_json())
        assert d == {"dice": 0.5, "asd_mm": None, "sensitivity": 1.0,
                     "specificity": 0.25, "flags": ["asd_undefined"]}
