import numpy as np
import pytest
from hypothesis import given, strategies as st

from citysplat.identity import (
    CompositeWeights,
    GaussianScene,
    TrainConfig,
    TrainingDiverged,
    TrainView,
    assign_labels,
    build_vocab,
    encode_labels,
    knn_graph,
    load_identity,
    loss_2d,
    loss_3d,
    mean_neighbor_kl,
    precompute_weights,
    predict_pixels,
    rho,
    save_identity,
    total_loss,
    train,
)
from citysplat.raycast import CameraView
from citysplat.synthetic import planted_label_map, planted_scene

from scenes import fd_relative_error, gradient_fixture


def _axis_view(size=21, f=20.0):
    c = size / 2.0  # pixel (size // 2) has its center on the optical axis
    return CameraView(1, [[f, 0, c], [0, f, c], [0, 0, 1]], np.hstack([np.eye(3), np.zeros((3, 1))]), size, size)


def _scene(centers, opac, scale=0.05):
    n = len(centers)
    return GaussianScene(np.asarray(centers, float), np.full((n, 3), scale), np.tile([1.0, 0, 0, 0], (n, 1)),
                         np.asarray(opac, float))


# --------------------------------------------------------------------------- compositing

def test_two_layer_weights():
    w = precompute_weights(_axis_view(), _scene([[0, 0, 5.0], [0, 0, 6.0]], [0.6, 0.8]))
    px = w.pixel(10, 10)
    assert [j for j, _ in px] == [0, 1]
    assert np.allclose([x for _, x in px], [0.6, 0.32])
    E = w.render(np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert np.allclose(E[10, 10], [0.6, 0.32])


def test_opaque_gaussian_and_empty_pixel():
    w = precompute_weights(_axis_view(), _scene([[0, 0, 5.0]], [1.0]))
    assert w.pixel(10, 10) == [(0, 1.0)]
    assert np.allclose(w.render(np.array([[2.0, -1.0]]))[10, 10], [2.0, -1.0])
    assert w.pixel(0, 0) == []
    assert not w.valid(0.5)[0]


def test_depth_order_independent_of_index():
    a = precompute_weights(_axis_view(), _scene([[0, 0, 6.0], [0, 0, 5.0]], [0.8, 0.6]))
    assert a.pixel(10, 10) == [(1, pytest.approx(0.6)), (0, pytest.approx(0.32))]


def _oracle_pixel(view, scene, row, col, lowpass=0.3, alpha_min=1 / 255):
    """Straight per-pixel front-to-back compositing, one Gaussian at a time."""
    from citysplat.identity import project_covariances

    mean, cov, depth = project_covariances(view, scene, lowpass)
    pt = np.array([col + 0.5, row + 0.5])
    hits = []
    for j in range(len(scene)):
        if depth[j] <= 0.01:
            continue
        d = pt - mean[j]
        m = d @ np.linalg.inv(cov[j]) @ d
        a = scene.opacities[j] * np.exp(-0.5 * m)
        if m <= 9 and a >= alpha_min:
            hits.append((depth[j], j, a))
    out, T = [], 1.0
    for _, j, a in sorted(hits):
        out.append((j, a * T))
        T *= 1 - a
    return out


def test_weights_match_per_pixel_oracle_and_conserve_mass():
    scene, _, train_views, _ = planted_scene()
    view = train_views[2]
    w = precompute_weights(view, scene)
    mass = w.mass()
    assert (w.matrix.data >= 0).all() and (w.matrix.data <= 1).all()
    assert (mass <= 1 + 1e-12).all()
    rng = np.random.default_rng(0)
    covered = np.flatnonzero(mass > 0)
    for p in rng.choice(covered, 25, replace=False):
        r, c = divmod(int(p), view.width)
        got = w.pixel(r, c)
        exp = _oracle_pixel(view, scene, r, c)
        assert [j for j, _ in got] == [j for j, _ in exp]
        assert np.allclose([x for _, x in got], [x for _, x in exp], atol=1e-6)


def test_render_linearity(rng):
    scene, _, views, _ = planted_scene()
    w = precompute_weights(views[0], scene)
    c1, c2 = rng.normal(size=(2, len(scene), 5))
    lhs = w.render(2.5 * c1 - 0.75 * c2)
    assert np.allclose(lhs, 2.5 * w.render(c1) - 0.75 * w.render(c2), atol=1e-6)
    assert np.allclose(w.render(np.zeros_like(c1)), 0.0)


def test_weight_cache_roundtrip(tmp_path):
    scene, _, views, _ = planted_scene()
    w = precompute_weights(views[1], scene)
    w.save(tmp_path / "w.bin")
    back = CompositeWeights.load(tmp_path / "w.bin")
    assert back.shape == w.shape
    assert np.array_equal(back.matrix.indptr, w.matrix.indptr)
    assert np.array_equal(back.matrix.indices, w.matrix.indices)
    assert np.allclose(back.matrix.data, w.matrix.data, atol=1e-7)


def test_ply_and_identity_roundtrip(tmp_path, rng):
    scene, _, _, _ = planted_scene()
    scene.save_ply(tmp_path / "s.ply")
    back = GaussianScene.load_ply(tmp_path / "s.ply")
    assert np.allclose(back.centers, scene.centers, atol=1e-6)
    assert np.allclose(back.opacities, scene.opacities, atol=1e-6)
    codes, weight, bias = rng.normal(size=(200, 4)), rng.normal(size=(3, 4)), rng.normal(size=3)
    save_identity(tmp_path / "c.bin", tmp_path / "h.bin", codes, weight, bias, np.array([0, 5, 100001]))
    c2, w2, b2, v2 = load_identity(tmp_path / "c.bin", tmp_path / "h.bin")
    assert np.allclose(c2, codes, atol=1e-6) and np.allclose(w2, weight, atol=1e-6)
    assert v2.tolist() == [0, 5, 100001]


# --------------------------------------------------------------------------- losses

def test_uniform_logits_loss_is_ln_k():
    w = precompute_weights(_axis_view(), _scene([[0, 0, 5.0]], [1.0]))
    labels = np.full(w.n_pixels, 2)
    loss, _ = loss_2d(w.matrix, np.ones((1, 3)), np.zeros((4, 3)), np.zeros(4), labels, w.valid(0.5))
    assert loss == pytest.approx(np.log(4), abs=1e-12)


def test_confident_logits_loss_near_zero():
    w = precompute_weights(_axis_view(), _scene([[0, 0, 5.0]], [1.0]))
    labels = np.full(w.n_pixels, 1)
    weight = np.array([[0.0], [50.0]])
    loss, _ = loss_2d(w.matrix, np.ones((1, 1)), weight, np.zeros(2), labels, w.valid(0.5))
    assert loss < 1e-12


def test_label_out_of_range():
    w = precompute_weights(_axis_view(), _scene([[0, 0, 5.0]], [1.0]))
    with pytest.raises(ValueError):
        loss_2d(w.matrix, np.ones((1, 2)), np.zeros((3, 2)), np.zeros(3), np.full(w.n_pixels, 3), w.valid(0.5))


def test_kl_scalar_example():
    codes = np.array([[0.0, 0.0], np.log([0.25, 0.75])])
    loss, _ = loss_3d(codes, np.eye(2), np.zeros(2), np.array([0]), np.array([[1], [0]]))
    expect = (0.5 * np.log(2) + 0.5 * np.log(2 / 3)) / 2
    assert loss == pytest.approx(expect, rel=1e-12)
    assert loss == pytest.approx(0.07192, abs=5e-6)


def test_identical_codes_zero_kl(rng):
    codes = np.tile(rng.normal(size=4), (6, 1))
    loss, g = loss_3d(codes, rng.normal(size=(3, 4)), rng.normal(size=3), np.arange(6), knn_graph(rng.normal(size=(6, 3)), 2))
    assert loss == pytest.approx(0.0, abs=1e-15)


def test_gradient_2d_matches_finite_differences():
    weights, labels, valid, codes, weight, bias, _ = gradient_fixture()

    def f(c, w, b):
        tot, gc, gw, gb = 0.0, 0, 0, 0
        for W, y, v in zip(weights, labels, valid):
            l, g = loss_2d(W.matrix, c, w, b, y, v)
            tot += l
            gc, gw, gb = gc + g.codes, gw + g.weight, gb + g.bias
        return tot, (gc, gw, gb)

    assert fd_relative_error(f, [codes, weight, bias]) < 1e-5


def test_gradient_3d_matches_finite_differences():
    _, _, _, codes, weight, bias, nbr = gradient_fixture(seed=1)
    sample = np.array([0, 2, 3, 7, 9])

    def f(c, w, b):
        l, g = loss_3d(c, w, b, sample, nbr)
        return l, (g.codes, g.weight, g.bias)

    assert fd_relative_error(f, [codes, weight, bias]) < 1e-5


def test_chunk_invariance():
    scene, planted, views, _ = planted_scene()
    w = precompute_weights(views[0], scene)
    rng = np.random.default_rng(5)
    codes, weight, bias = rng.normal(size=(len(scene), 8)), rng.normal(size=(4, 8)), rng.normal(size=4)
    labels = planted_label_map(w, planted, 4, 0.5)
    valid = labels >= 0
    ref, _ = loss_2d(w.matrix, codes, weight, bias, labels, valid, chunk=65536)
    for chunk in (1, 7, 100, 333):
        val, _ = loss_2d(w.matrix, codes, weight, bias, labels, valid, chunk=chunk)
        assert abs(val - ref) <= 1e-7


# --------------------------------------------------------------------------- schedule and training

def test_rho_schedule():
    assert [rho(i, 10) for i in range(20)] == [0] * 9 + [1] + [0] * 9 + [1]


def _tiny_problem():
    scene, planted, views, _ = planted_scene(size=24)
    ws = [precompute_weights(v, scene) for v in views[:3]]
    tviews = [TrainView(v.view_id, w, planted_label_map(w, planted, 4, 0.5)) for v, w in zip(views, ws)]
    return scene, planted, tviews


def test_total_loss_schedule_and_lambda_zero():
    scene, _, tviews = _tiny_problem()
    rng = np.random.default_rng(2)
    codes, weight, bias = rng.normal(size=(len(scene), 16)), rng.normal(size=(4, 16)), np.zeros(4)
    nbr = knn_graph(scene.centers, 5)
    sample = np.arange(0, len(scene), 3)
    cfg = TrainConfig()
    l2d, g2d = loss_2d(tviews[0].weights.matrix, codes, weight, bias, tviews[0].labels, tviews[0].omega(0.5))
    # iteration 3: rho = 0, gradient is exactly the 2D gradient
    loss, _, _, g = total_loss(tviews[0], codes, weight, bias, cfg, 3, nbr, sample)
    assert loss == l2d and np.array_equal(g.codes, g2d.codes) and np.array_equal(g.weight, g2d.weight)
    # iteration 9 with lambda 0 reduces to L2D as well
    loss0, _, _, _ = total_loss(tviews[0], codes, weight, bias, TrainConfig(lambda_3d=0.0), 9, nbr, sample)
    assert loss0 == l2d
    loss1, _, l3d, _ = total_loss(tviews[0], codes, weight, bias, cfg, 9, nbr, sample)
    assert loss1 == pytest.approx(l2d + l3d) and l3d > 0


def test_seeded_training_is_deterministic():
    scene, _, tviews = _tiny_problem()
    cfg = TrainConfig(iterations=40)
    nbr = knn_graph(scene.centers, 5)
    a = train(tviews, len(scene), 4, cfg, nbr, seed=11)
    b = train(tviews, len(scene), 4, cfg, nbr, seed=11)
    loss = lambda r: [h["loss"] for h in r.history]
    assert loss(a) == loss(b) and np.array_equal(a.codes, b.codes)
    c = train(tviews, len(scene), 4, cfg, nbr, seed=12)
    assert loss(c) != loss(a)


def test_3d_term_lowers_neighbour_kl():
    scene, _, tviews = _tiny_problem()
    nbr = knn_graph(scene.centers, 5)
    on = train(tviews, len(scene), 4, TrainConfig(iterations=300), nbr, seed=0)
    off = train(tviews, len(scene), 4, TrainConfig(iterations=300, lambda_3d=0.0), nbr, seed=0)
    assert mean_neighbor_kl(on.codes, on.weight, on.bias, nbr) < mean_neighbor_kl(off.codes, off.weight, off.bias, nbr)


def test_divergence_is_reported():
    scene, _, tviews = _tiny_problem()
    bad = tviews[0]
    bad.weights.matrix.data[:] = np.inf
    with pytest.raises(TrainingDiverged, match="iteration"):
        train([bad], len(scene), 4, TrainConfig(iterations=5), None, seed=0)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr=0)
    with pytest.raises(ValueError):
        TrainConfig(lambda_3d=-1)


# --------------------------------------------------------------------------- labels

def test_assign_labels_one_hot_and_scaling(rng):
    codes = np.zeros((1, 5))
    codes[0, 3] = 1.0
    assert assign_labels(codes, np.eye(5), np.zeros(5)).tolist() == [3]
    c = rng.normal(size=(50, 6))
    w = rng.normal(size=(4, 6))
    base = assign_labels(c, w, np.zeros(4))
    assert np.array_equal(assign_labels(3.7 * c, w, np.zeros(4)), base)


def test_vocab_and_encoding():
    vocab = build_vocab([np.array([[5, 100002], [0, 5]]), np.array([[3]])])
    assert vocab.tolist() == [0, 3, 5, 100002]
    assert encode_labels(np.array([[5, 7], [100002, 0]]), vocab).tolist() == [2, -1, 3, 0]


def test_predict_pixels_background_outside_support():
    w = precompute_weights(_axis_view(), _scene([[0, 0, 5.0]], [1.0]))
    lab = predict_pixels(w, np.array([[1.0]]), np.array([[0.0], [1.0]]), np.zeros(2), 0.5, np.array([0, 42]))
    assert lab[10, 10] == 42 and lab[0, 0] == 0


# --------------------------------------------------------------------------- knn

def test_knn_examples():
    pts = np.array([[0, 0, 0], [1, 0, 0], [3, 0, 0]], float)
    assert knn_graph(pts, 1)[:, 0].tolist() == [1, 0, 1]
    dup = np.array([[0, 0, 0], [0, 0, 0], [5, 5, 5]], float)
    nb = knn_graph(dup, 1)
    assert nb[0, 0] == 1 and nb[1, 0] == 0
    with pytest.raises(ValueError):
        knn_graph(pts, 3)


def test_knn_matches_brute_force(rng):
    pts = rng.normal(size=(1000, 3))
    pts[500:510] = pts[0]  # exact ties
    k = 6
    got = knn_graph(pts, k)
    d2 = ((pts[:, None] - pts[None]) ** 2).sum(-1)
    for i in range(len(pts)):
        cand = np.delete(np.arange(len(pts)), i)
        order = np.lexsort((cand, d2[i, cand]))
        assert got[i].tolist() == cand[order[:k]].tolist()


@given(st.integers(0, 10_000))
def test_knn_never_contains_self(seed):
    pts = np.random.default_rng(seed).integers(0, 4, size=(30, 3)).astype(float)
    nb = knn_graph(pts, 4)
    assert not (nb == np.arange(30)[:, None]).any()
