import json

import numpy as np
import pytest

from flowcodec.errors import DataError, ModelFormatError
from flowcodec.forest import (
    DecisionTree,
    ForestModel,
    TreeParams,
    available_backends,
    backend_name,
    fit_forest,
    fit_tree,
    get_kernel,
    load_forest,
    predict,
    predict_tree,
    save_forest,
)

HAVE_CYTHON = "cython" in available_backends()


def brute_force_scan(values, labels, n_classes):
    """Direct per-boundary evaluation of the split score, written from the
    definition: sum of squared class counts over size, left plus right."""
    order = np.argsort(values, kind="stable")
    v = values[order]
    y = labels[order]
    n = len(v)
    best_score, best_thr, found = 0.0, 0.0, False
    for i in range(n - 1):
        if v[i] == v[i + 1]:
            continue
        left = np.bincount(y[: i + 1], minlength=n_classes).astype(np.int64)
        right = np.bincount(y[i + 1 :], minlength=n_classes).astype(np.int64)
        score = float(np.sum(left * left)) / float(i + 1) + float(np.sum(right * right)) / float(
            n - i - 1
        )
        if not found or score > best_score:
            thr = 0.5 * (v[i] + v[i + 1])
            if thr >= v[i + 1]:
                thr = v[i]
            best_score, best_thr, found = score, thr, True
    return best_score, best_thr, found


def random_column(rng):
    n = int(rng.integers(2, 40))
    k = int(rng.integers(2, 5))
    if rng.random() < 0.3:
        # Heavy ties exercise the distinct-boundary rule.
        values = rng.integers(0, 4, size=n).astype(np.float64)
    else:
        values = rng.normal(size=n)
    labels = rng.integers(0, k, size=n).astype(np.int64)
    return values, labels, k


# ---------------------------------------------------------------- kernels


@pytest.mark.parametrize("backend", ["python", "cython"])
def test_scan_matches_brute_force_exactly(backend):
    if backend == "cython" and not HAVE_CYTHON:
        pytest.skip("compiled kernel not built")
    kernel = get_kernel(backend)
    rng = np.random.default_rng(100)
    for _ in range(300):
        values, labels, k = random_column(rng)
        order = np.argsort(values, kind="stable")
        got = kernel(values[order], labels[order], k)
        want = brute_force_scan(values, labels, k)
        assert got == want, f"{backend}: {got} != {want} on {values!r} {labels!r}"


@pytest.mark.parametrize("backend", ["python", "cython"])
def test_scan_constant_column_finds_nothing(backend):
    if backend == "cython" and not HAVE_CYTHON:
        pytest.skip("compiled kernel not built")
    kernel = get_kernel(backend)
    v = np.full(6, 2.5)
    y = np.array([0, 1, 0, 1, 0, 1], dtype=np.int64)
    assert kernel(v, y, 2) == (0.0, 0.0, False)
    assert kernel(np.array([1.0]), np.array([0], dtype=np.int64), 2) == (0.0, 0.0, False)


@pytest.mark.parametrize("backend", ["python", "cython"])
def test_scan_threshold_snaps_below_upper_neighbor(backend):
    if backend == "cython" and not HAVE_CYTHON:
        pytest.skip("compiled kernel not built")
    kernel = get_kernel(backend)
    lo = 1.0
    hi = np.nextafter(1.0, 2.0)
    # The exact midpoint of adjacent doubles rounds to one of them; the
    # threshold must never equal the upper value or the split sends both
    # sides left.
    score, thr, found = kernel(np.array([lo, hi]), np.array([0, 1], dtype=np.int64), 2)
    assert found
    assert thr < hi
    assert lo <= thr


@pytest.mark.skipif(not HAVE_CYTHON, reason="compiled kernel not built")
def test_backends_bit_identical():
    py = get_kernel("python")
    cy = get_kernel("cython")
    rng = np.random.default_rng(200)
    for _ in range(500):
        values, labels, k = random_column(rng)
        order = np.argsort(values, kind="stable")
        v, y = values[order], labels[order]
        assert py(v, y, k) == cy(v, y, k)


def test_get_kernel_unknown_name():
    assert backend_name() in available_backends()
    with pytest.raises(ValueError):
        get_kernel("fortran")


# ---------------------------------------------------------------- params


def test_features_per_split():
    p = TreeParams()
    assert p.features_per_split(21) == 5
    assert p.features_per_split(16) == 4
    assert p.features_per_split(1) == 1
    assert TreeParams(max_features="all").features_per_split(21) == 21
    assert TreeParams(max_features=3).features_per_split(21) == 3
    assert TreeParams(max_features=50).features_per_split(21) == 21


def test_tree_params_validation():
    with pytest.raises(DataError):
        TreeParams(max_depth=0)
    with pytest.raises(DataError):
        TreeParams(min_samples_split=1)
    with pytest.raises(DataError):
        TreeParams(max_features="log2")


# ---------------------------------------------------------------- single tree


def test_tree_perfectly_fits_consistent_data():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(300, 6))
    X += np.arange(300)[:, None] * 1e-9  # guarantee duplicate-free rows
    y = ((X[:, 0] > 0).astype(np.int64) + (X[:, 1] > 0.5).astype(np.int64))
    tree = fit_tree(X, y, n_classes=3, seed=1)
    assert np.array_equal(predict_tree(tree, X), y)


def test_tree_pure_input_is_single_leaf():
    X = np.random.default_rng(8).normal(size=(20, 3))
    y = np.zeros(20, dtype=np.int64)
    tree = fit_tree(X, y, n_classes=2, seed=0)
    assert tree.n_nodes == 1
    assert tree.feature[0] == -1
    assert np.array_equal(tree.class_counts[0], [20, 0])


def test_tree_max_depth_limits_growth():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(200, 4))
    y = rng.integers(0, 3, size=200).astype(np.int64)
    tree = fit_tree(X, y, n_classes=3, params=TreeParams(max_depth=2), seed=0)
    assert tree.depth <= 2
    deep = fit_tree(X, y, n_classes=3, seed=0)
    assert deep.depth > 2


def test_tree_min_samples_split():
    rng = np.random.default_rng(10)
    X = rng.normal(size=(100, 3))
    y = rng.integers(0, 2, size=100).astype(np.int64)
    tree = fit_tree(X, y, n_classes=2, params=TreeParams(min_samples_split=200), seed=0)
    assert tree.n_nodes == 1


def test_tree_constant_features_become_leaf():
    X = np.ones((10, 3))
    y = np.array([0, 1] * 5, dtype=np.int64)
    tree = fit_tree(X, y, n_classes=2, params=TreeParams(max_features="all"), seed=0)
    assert tree.n_nodes == 1
    assert tree.leaf_class[0] == 0  # tied counts resolve to the lowest id


def test_tree_node_counts_partition():
    rng = np.random.default_rng(11)
    X = rng.normal(size=(150, 5))
    y = rng.integers(0, 3, size=150).astype(np.int64)
    tree = fit_tree(X, y, n_classes=3, seed=2)
    # Every internal node's counts must equal the sum of its children's.
    for node in range(tree.n_nodes):
        if tree.feature[node] >= 0:
            left, right = tree.left[node], tree.right[node]
            assert np.array_equal(
                tree.class_counts[node], tree.class_counts[left] + tree.class_counts[right]
            )
    assert np.array_equal(tree.class_counts[0], np.bincount(y, minlength=3))


def test_predict_tree_matches_manual_walk():
    rng = np.random.default_rng(12)
    X = rng.normal(size=(120, 4))
    y = rng.integers(0, 3, size=120).astype(np.int64)
    tree = fit_tree(X, y, n_classes=3, seed=3)
    probe = rng.normal(size=(40, 4))
    got = predict_tree(tree, probe)
    for i in range(probe.shape[0]):
        node = 0
        while tree.feature[node] >= 0:
            if probe[i, tree.feature[node]] <= tree.threshold[node]:
                node = tree.left[node]
            else:
                node = tree.right[node]
        assert got[i] == np.argmax(tree.class_counts[node])


@pytest.mark.skipif(not HAVE_CYTHON, reason="compiled kernel not built")
def test_tree_identical_across_backends():
    rng = np.random.default_rng(13)
    for trial in range(10):
        X = rng.normal(size=(150, 6))
        y = rng.integers(0, 4, size=150).astype(np.int64)
        a = fit_tree(X, y, n_classes=4, seed=trial, kernel=get_kernel("python"))
        b = fit_tree(X, y, n_classes=4, seed=trial, kernel=get_kernel("cython"))
        assert np.array_equal(a.feature, b.feature)
        assert np.array_equal(a.threshold, b.threshold)
        assert np.array_equal(a.left, b.left)
        assert np.array_equal(a.right, b.right)
        assert np.array_equal(a.class_counts, b.class_counts)


def test_fit_tree_validation():
    X = np.ones((5, 2))
    with pytest.raises(DataError):
        fit_tree(X, np.array([0, 0, 0, 0, 5], dtype=np.int64), n_classes=2, seed=0)
    with pytest.raises(DataError):
        fit_tree(X, np.zeros(4, dtype=np.int64), n_classes=2, seed=0)
    bad = X.copy()
    bad[0, 0] = np.nan
    with pytest.raises(DataError):
        fit_tree(bad, np.zeros(5, dtype=np.int64), n_classes=2, seed=0)


# ---------------------------------------------------------------- forest


def test_forest_deterministic_and_seed_sensitive():
    rng = np.random.default_rng(14)
    X = rng.normal(size=(200, 5))
    y = (X[:, 0] + X[:, 2] > 0).astype(np.int64)
    a = fit_forest(X, y, n_classes=2, n_trees=5, seed=21)
    b = fit_forest(X, y, n_classes=2, n_trees=5, seed=21)
    c = fit_forest(X, y, n_classes=2, n_trees=5, seed=22)
    for ta, tb in zip(a.trees, b.trees):
        assert np.array_equal(ta.feature, tb.feature)
        assert np.array_equal(ta.threshold, tb.threshold)
    assert any(
        not np.array_equal(ta.threshold, tc.threshold) for ta, tc in zip(a.trees, c.trees)
    )


def test_forest_tree_seeding_is_per_tree():
    # Tree i depends only on (seed, i), so any single tree can be rebuilt
    # in isolation.
    rng = np.random.default_rng(15)
    X = rng.normal(size=(120, 4))
    y = rng.integers(0, 3, size=120).astype(np.int64)
    forest = fit_forest(X, y, n_classes=3, n_trees=3, seed=77)
    for i in (0, 2):
        boot_seed, tree_seed = np.random.SeedSequence([77, i]).spawn(2)
        rows = np.random.default_rng(boot_seed).integers(0, 120, size=120)
        solo = fit_tree(X[rows], y[rows], n_classes=3, seed=tree_seed)
        assert np.array_equal(solo.feature, forest.trees[i].feature)
        assert np.array_equal(solo.threshold, forest.trees[i].threshold)


def test_forest_majority_vote_tie_breaks_low_id():
    def stump(cls, k):
        counts = np.zeros((1, k), dtype=np.int64)
        counts[0, cls] = 1
        return DecisionTree(
            feature=np.array([-1]), threshold=np.array([0.0]),
            left=np.array([-1]), right=np.array([-1]), class_counts=counts,
        )

    model = ForestModel(
        trees=[stump(2, 3), stump(1, 3)], n_features=2, n_classes=3,
        params=TreeParams(), seed=0,
    )
    # One vote each for classes 1 and 2: the tie resolves to class 1.
    assert predict(model, np.zeros((4, 2))).tolist() == [1, 1, 1, 1]
    with pytest.raises(DataError):
        predict(model, np.zeros((4, 3)))


def test_forest_improves_over_noisy_labels():
    rng = np.random.default_rng(16)
    X = rng.normal(size=(400, 6))
    y = (X[:, 0] > 0).astype(np.int64)
    model = fit_forest(X[:300], y[:300], n_classes=2, n_trees=25, seed=5)
    acc = float(np.mean(predict(model, X[300:]) == y[300:]))
    assert acc > 0.9


# ---------------------------------------------------------------- persistence


def test_forest_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(17)
    X = rng.normal(size=(150, 5))
    y = rng.integers(0, 3, size=150).astype(np.int64)
    model = fit_forest(X, y, n_classes=3, n_trees=4, seed=9,
                       params=TreeParams(max_depth=6))
    path = tmp_path / "forest.json"
    save_forest(model, path)
    loaded = load_forest(path)
    assert loaded.n_features == 5
    assert loaded.n_classes == 3
    assert loaded.seed == 9
    assert loaded.params == model.params
    for ta, tb in zip(model.trees, loaded.trees):
        assert np.array_equal(ta.feature, tb.feature)
        assert np.array_equal(ta.threshold, tb.threshold)
        assert np.array_equal(ta.left, tb.left)
        assert np.array_equal(ta.right, tb.right)
        assert np.array_equal(ta.class_counts, tb.class_counts)
    probe = rng.normal(size=(30, 5))
    assert np.array_equal(predict(model, probe), predict(loaded, probe))


def test_forest_save_is_deterministic(tmp_path):
    rng = np.random.default_rng(18)
    X = rng.normal(size=(80, 3))
    y = rng.integers(0, 2, size=80).astype(np.int64)
    model = fit_forest(X, y, n_classes=2, n_trees=2, seed=1)
    save_forest(model, tmp_path / "a.json")
    save_forest(model, tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_load_forest_rejects_corrupt_files(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{oops")
    with pytest.raises(ModelFormatError):
        load_forest(p)
    p.write_text(json.dumps({"format_version": 99}))
    with pytest.raises(ModelFormatError):
        load_forest(p)

    rng = np.random.default_rng(19)
    X = rng.normal(size=(40, 3))
    y = rng.integers(0, 2, size=40).astype(np.int64)
    model = fit_forest(X, y, n_classes=2, n_trees=1, seed=1)
    good = tmp_path / "good.json"
    save_forest(model, good)
    doc = json.loads(good.read_text())
    doc["trees"][0]["leaf_counts"] = doc["trees"][0]["leaf_counts"][:-1]
    bad = tmp_path / "mangled.json"
    bad.write_text(json.dumps(doc))
    with pytest.raises(ModelFormatError, match="leaf count"):
        load_forest(bad)
