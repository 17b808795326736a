import numpy as np
import pytest

from nrsfm.core import ImagePoint, NRSfMError
from nrsfm.surface import bend_surface, build_graph, edge_log_ratios, plane_normals_and_beta
from nrsfm.synthetic import SceneSpec, generate


def aligned_rmse(pred, gt):
    c = np.sum(pred * gt) / np.sum(pred * pred)
    return np.sqrt(np.mean(np.sum((c * pred - gt) ** 2, axis=1)))


def cylinder_error(n_points):
    gt = generate(SceneSpec(n_points=n_points, n_frames=1))
    x = gt.retina[0]
    s = bend_surface(gt.normals[0], build_graph(x))
    radius = 1.0 / gt.spec.curvatures[0]
    return aligned_rmse(s.points, gt.positions[0]) / radius


@pytest.fixture
def scatter(rng):
    return rng.uniform(-0.4, 0.4, (300, 2))


class TestBuildGraph:
    def test_triangle(self):
        g = build_graph([ImagePoint(0, 0), ImagePoint(1, 0), ImagePoint(0, 1)])
        assert len(g.edges) == 3
        assert not g.knn_fallback

    def test_square(self):
        g = build_graph(np.array([[0, 0], [1, 0], [1, 1.01], [0, 1]]))
        assert len(g.edges) == 5

    def test_collinear_falls_back_to_knn(self):
        x = np.stack([np.linspace(-0.5, 0.5, 20), np.zeros(20)], axis=1)
        g = build_graph(x)
        assert g.knn_fallback
        assert g.components()[0] == 1

    def test_two_points(self):
        g = build_graph(np.array([[0.0, 0.0], [0.1, 0.0]]))
        assert g.edges.tolist() == [[0, 1]]

    def test_weights_positive_and_ordered(self, scatter):
        g = build_graph(scatter)
        assert np.all(g.weights > 0)
        assert np.all(g.edges[:, 0] < g.edges[:, 1])
        length = np.linalg.norm(scatter[g.edges[:, 1]] - scatter[g.edges[:, 0]], axis=1)
        assert np.allclose(g.weights, 1 / length)

    def test_components_of_subgraph(self):
        x = np.array([[0, 0], [1, 0], [0, 1], [1, 1.01]], dtype=float)
        g = build_graph(x)
        n, labels = g.components(np.array([True, False, False, True]))
        assert labels[1] == labels[2] == -1
        linked = [0, 3] in g.edges.tolist()
        assert n == (1 if linked else 2)

    def test_errors(self):
        with pytest.raises(NRSfMError):
            build_graph(np.zeros((1, 2)))
        with pytest.raises(NRSfMError):
            build_graph(np.array([[0.0, 0.0], [0.0, 0.0]]))
        with pytest.raises(ValueError):
            build_graph(np.array([[0.0, 0.0], [np.nan, 0.0], [1.0, 1.0]]))


class TestBend:
    def test_fronto_parallel(self, scatter):
        g = build_graph(scatter)
        s = bend_surface(np.tile([0.0, 0.0, 1.0], (len(scatter), 1)), g)
        assert np.allclose(s.beta, 1.0, atol=1e-12)
        assert np.allclose(s.points, np.c_[scatter, np.ones(len(scatter))], atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_oblique_plane_is_exact(self, seed):
        r = np.random.default_rng(seed)
        x = r.uniform(-0.4, 0.4, (200, 2))
        n = r.normal(size=3)
        n[2] = abs(n[2]) + 1.0
        normals, beta = plane_normals_and_beta(n, r.uniform(0.5, 3.0), x)
        s = bend_surface(normals, build_graph(x))
        ratio = s.beta / beta
        assert np.abs(ratio / ratio[s.anchors[0]] - 1).max() <= 1e-9
        gt_points = np.c_[x, np.ones(len(x))] / beta[:, None]
        assert aligned_rmse(s.points, gt_points) / np.sqrt(np.mean(np.sum(gt_points**2, 1))) <= 1e-6

    def test_anchor_is_fixed(self, scatter):
        normals, _ = plane_normals_and_beta([0.2, -0.1, 1.0], 2.0, scatter)
        support = np.ones(len(scatter))
        support[17] = 5
        s = bend_surface(normals, build_graph(scatter), support)
        assert s.scale_anchor == 17
        assert s.beta[17] == 1.0
        assert np.all(s.beta > 0)

    def test_rerun_is_identical(self, scatter):
        gt = generate(SceneSpec(n_points=300, n_frames=1))
        g = build_graph(gt.retina[0])
        a = bend_surface(gt.normals[0], g)
        b = bend_surface(gt.normals[0], g)
        assert np.array_equal(a.beta, b.beta)

    def test_cylinder_within_one_percent_of_radius(self):
        assert cylinder_error(400) <= 0.01

    def test_refinement_is_monotone(self):
        errors = [cylinder_error(n) for n in (200, 400, 800)]
        assert errors[0] > errors[1] > errors[2]

    def test_holes_are_filled(self):
        gt = generate(SceneSpec(n_points=300, n_frames=1))
        normals = gt.normals[0].copy()
        normals[::7] = np.nan
        s = bend_surface(normals, build_graph(gt.retina[0]))
        assert np.all(np.isfinite(s.beta)) and np.all(s.beta > 0)
        assert not s.reconstructed[::7].any()
        radius = 1.0 / gt.spec.curvatures[0]
        assert aligned_rmse(s.points, gt.positions[0]) / radius <= 0.01

    def test_disconnected_components_are_anchored_separately(self):
        x = np.array([[0, 0], [0.1, 0], [0, 0.1], [0.1, 0.1], [0.05, 0.05]], dtype=float)
        g = build_graph(x)
        # the center point has no normal, so the corners only meet through it
        normals = np.tile([0.0, 0.0, 1.0], (5, 1))
        normals[4] = np.nan
        rec = np.isfinite(normals).all(1)
        n_comp, _ = g.components(rec)
        s = bend_surface(normals, g)
        assert len(s.anchors) == n_comp
        assert s.disconnected == (n_comp > 1)
        assert np.allclose(s.beta, 1.0)

    def test_no_normals(self, scatter):
        with pytest.raises(NRSfMError):
            bend_surface(np.full((len(scatter), 3), np.nan), build_graph(scatter))

    def test_shape_mismatch(self, scatter):
        with pytest.raises(ValueError):
            bend_surface(np.zeros((3, 3)), build_graph(scatter))


def test_log_ratios_match_plane(rng):
    x = rng.uniform(-0.4, 0.4, (50, 2))
    normals, beta = plane_normals_and_beta([0.3, 0.1, 0.9], 1.0, x)
    g = build_graph(x)
    d = edge_log_ratios(normals, x, g.edges)
    expected = np.log(beta[g.edges[:, 1]] / beta[g.edges[:, 0]])
    assert np.abs(d - expected).max() <= 1e-14


def test_plane_behind_camera():
    with pytest.raises(NRSfMError):
        plane_normals_and_beta([0.0, 0.0, 1.0], -1.0, np.zeros((2, 2)))
