import numpy as np
import pytest

from icsort import anatomy, spatial
from icsort.cohort import ICLabel
from tests.conftest import first_of


def clustering_as_sets(clustering):
    return sorted(
        frozenset(map(tuple, cl.voxels.tolist())) for cl in clustering.clusters
    )


class TestExtractBrainSlices:
    def test_all_zero_slice_empty_mask(self, toy_cohort, spatial_params):
        ic = first_of(toy_cohort, ICLabel.SOZ)
        blank = type(ic)(
            ic_id="blank",
            slices=np.zeros((2, 16, 16), dtype=np.float32),
            bold=ic.bold,
            tr_seconds=2.0,
            truth=ICLabel.NOISE,
        )
        masks = spatial.extract_brain_slices(blank, spatial_params)
        assert all(not m.any() for m in masks)

    def test_single_hot_voxel(self, toy_cohort):
        ic = first_of(toy_cohort, ICLabel.SOZ)
        sl = np.zeros((1, 16, 16), dtype=np.float32)
        sl[0, 4, 7] = 0.9
        one = type(ic)(ic_id="one", slices=sl, bold=ic.bold, tr_seconds=2.0, truth=ICLabel.NOISE)
        params = spatial.SpatialParams(activation_threshold=0.5)
        masks = spatial.extract_brain_slices(one, params)
        assert masks[0].sum() == 1 and masks[0][4, 7]

    def test_generated_soz_has_active_voxels(self, toy_cohort, spatial_params):
        ic = first_of(toy_cohort, ICLabel.SOZ)
        masks = spatial.extract_brain_slices(ic, spatial_params)
        assert any(m.any() for m in masks)


class TestDbscan:
    def test_empty_mask(self):
        out = spatial.dbscan_clusters(np.zeros((10, 10), dtype=bool), 1.5, 3)
        assert len(out) == 0

    def test_two_blocks(self):
        mask = np.zeros((40, 40), dtype=bool)
        mask[2:5, 2:5] = True
        mask[2:5, 25:28] = True
        out = spatial.dbscan_clusters(mask, 1.5, 3)
        assert len(out) == 2
        assert sorted(cl.size for cl in out.clusters) == [9, 9]
        assert clustering_as_sets(out) == clustering_as_sets(spatial.dbscan_brute_force(mask, 1.5, 3))

    def test_isolated_voxel_disregarded(self):
        mask = np.zeros((10, 10), dtype=bool)
        mask[5, 5] = True
        assert len(spatial.dbscan_clusters(mask, 1.5, 3)) == 0

    @pytest.mark.parametrize("eps,vmin", [(1.5, 3), (1.0, 2), (2.5, 4)])
    def test_matches_brute_force_on_random_masks(self, eps, vmin):
        rng = np.random.default_rng(42)
        for _ in range(40):
            mask = rng.random((24, 24)) < rng.uniform(0.05, 0.3)
            fast = clustering_as_sets(spatial.dbscan_clusters(mask, eps, vmin))
            slow = clustering_as_sets(spatial.dbscan_brute_force(mask, eps, vmin))
            assert fast == slow

    def test_cluster_invariants(self):
        rng = np.random.default_rng(7)
        mask = rng.random((30, 30)) < 0.2
        out = spatial.dbscan_clusters(mask, 1.5, 3)
        seen = set()
        for cl in out.clusters:
            assert cl.size >= 1
            voxels = set(map(tuple, cl.voxels.tolist()))
            assert not (voxels & seen)  # disjoint
            seen |= voxels
            assert all(mask[r, c] for r, c in voxels)  # every clustered voxel active


class TestGeometry:
    def test_constant_slice_empty(self, spatial_params):
        geom = spatial.detect_geometry(np.full((32, 32), 0.7), spatial_params)
        assert geom.contours == []
        assert not geom.ventricles.any()
        assert not geom.white_matter.any()

    def test_sobel_constant_zero(self):
        assert np.allclose(spatial.sobel_magnitude(np.full((16, 16), 3.3)), 0.0)

    def test_sobel_translation_equivariance(self):
        rng = np.random.default_rng(0)
        img = rng.random((20, 20))
        shifted = np.roll(img, (2, 3), axis=(0, 1))
        m1 = spatial.sobel_magnitude(img)
        m2 = spatial.sobel_magnitude(shifted)
        # interior only: away from wrapped borders
        assert np.allclose(m1[4:12, 4:12], m2[6:14, 7:15])

    def test_template_geometry(self, spatial_params):
        template = anatomy.template_slice(48, 48)
        geom = spatial.detect_geometry(template, spatial_params)
        assert len(geom.contours) >= 3  # brain boundary + two ventricles
        assert geom.ventricles.any()
        assert geom.white_matter.any()
        # ventricle voxels intersect no contour
        for contour in geom.contours:
            assert not geom.ventricles[contour[:, 0], contour[:, 1]].any()
        # ventricle voxels live inside the hull of all contour points
        from scipy.spatial import Delaunay, ConvexHull

        pts = np.vstack(geom.contours).astype(float)
        tri = Delaunay(pts[ConvexHull(pts).vertices])
        vent = np.argwhere(geom.ventricles).astype(float)
        assert (tri.find_simplex(vent) >= 0).all()

    def test_single_contour_no_ventricles(self, spatial_params):
        template = anatomy.template_slice(48, 48, with_ventricles=False)
        geom = spatial.detect_geometry(template, spatial_params)
        assert len(geom.contours) == 1
        assert not geom.ventricles.any()


class TestOverlapCount:
    def make_geom(self, params):
        return spatial.detect_geometry(anatomy.template_slice(48, 48), params)

    def test_no_clusters(self, spatial_params):
        geom = self.make_geom(spatial_params)
        assert spatial.white_matter_overlap_count(spatial.SliceClustering([]), geom, spatial_params) == 0

    def test_bridging_cluster_counts(self, spatial_params):
        geom = self.make_geom(spatial_params)
        spec = anatomy.slice_geometry(48, 48)
        vent = spec.ventricles[0]
        # thick bar from the brain boundary to the ventricle center
        rows = np.arange(int(vent.cy) - 4, int(vent.cy) + 5)
        cols = np.arange(2, int(vent.cx) + 1)
        voxels = np.array([(r, c) for r in rows for c in cols])
        cluster = spatial.Cluster(voxels=voxels)
        assert cluster.size > spatial_params.large_cluster_px
        count = spatial.white_matter_overlap_count(
            spatial.SliceClustering([cluster]), geom, spatial_params
        )
        assert count == 1

    def test_gray_matter_cluster_does_not_count(self, spatial_params):
        geom = self.make_geom(spatial_params)
        # big blob in gray matter between the ventricles and the boundary band
        voxels = np.array([(r, c) for r in range(9, 16) for c in range(17, 31)])
        cluster = spatial.Cluster(voxels=voxels)
        assert cluster.size > spatial_params.large_cluster_px
        assert not geom.white_matter[voxels[:, 0], voxels[:, 1]].any()
        count = spatial.white_matter_overlap_count(
            spatial.SliceClustering([cluster]), geom, spatial_params
        )
        assert count == 0

    def test_monotone_in_large_cluster_px(self, spatial_params, toy_cohort):
        geom = self.make_geom(spatial_params)
        ic = first_of(toy_cohort, ICLabel.SOZ)
        masks = spatial.extract_brain_slices(ic, spatial_params)
        clusterings = [spatial.dbscan_clusters(m, spatial_params.eps, spatial_params.vmin) for m in masks]
        prev = None
        for threshold in (10, 50, 100, 200, 400):
            params = spatial.params_for_dims(48, 48, large_cluster_px=threshold)
            total = sum(spatial.white_matter_overlap_count(cl, geom, params) for cl in clusterings)
            if prev is not None:
                assert total <= prev
            prev = total


class TestSpatialFeatures:
    def test_subthreshold_ic_is_zero(self, toy_cohort):
        ic = first_of(toy_cohort, ICLabel.NOISE)
        faint = type(ic)(
            ic_id="faint",
            slices=np.zeros((3, 48, 48), dtype=np.float32),
            bold=ic.bold,
            tr_seconds=2.0,
            truth=ICLabel.NOISE,
        )
        assert spatial.spatial_features(faint, spatial.params_for_dims(48, 48)) == (0, 0)

    def test_generated_archetypes(self, toy_cohort, spatial_params):
        soz = first_of(toy_cohort, ICLabel.SOZ)
        n, wm = spatial.spatial_features(soz, spatial_params)
        assert n == 1 and wm >= 1
        rsn = first_of(toy_cohort, ICLabel.RSN)
        n, wm = spatial.spatial_features(rsn, spatial_params)
        assert 2 <= n <= 6 and wm == 0
