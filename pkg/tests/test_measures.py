import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from helpers import disc, write_csv
from wproj.errors import (
    AllRowsDroppedError,
    AllZeroImageError,
    BadWeightsError,
    DimensionMismatchError,
    EmptyInputError,
    MissingColumnError,
    NonFiniteError,
    ParseError,
)
from wproj.measures import (
    CsvSchema,
    DiscreteMeasure,
    cdf_at,
    cdf_grid,
    from_samples,
    from_weighted,
    image_to_measure,
    load_csv,
    load_image,
    pool,
    read_image,
    render_image,
    second_moment,
    to_csv,
    write_image,
)
from wproj.simulate import GaussianStudy, sample_gaussians


# -- from_samples -------------------------------------------------------------


def test_from_samples_two_points():
    m = from_samples([[0], [2]])
    assert m.support.tolist() == [[0.0], [2.0]]
    assert m.weights.tolist() == [0.5, 0.5]


def test_from_samples_single_atom():
    m = from_samples([[1, 1]])
    assert m.n == 1 and m.dim == 2
    assert m.weights.tolist() == [1.0]


def test_from_samples_gaussian_draws():
    m = sample_gaussians(GaussianStudy(n=10000, seed=3))[0]
    assert (m.n, m.dim) == (10000, 10)
    assert np.all(m.weights == 1e-4)


def test_from_samples_errors():
    with pytest.raises(EmptyInputError):
        from_samples(np.zeros((0, 3)))
    with pytest.raises(NonFiniteError):
        from_samples([[0.0], [np.nan]])
    with pytest.raises(NonFiniteError):
        from_samples([[np.inf, 1.0]])


def test_measure_is_immutable():
    m = from_samples([[0.0], [1.0]])
    with pytest.raises(ValueError):
        m.support[0, 0] = 5.0
    with pytest.raises(ValueError):
        m.weights[0] = 0.7


def test_measure_rejects_bad_weights():
    with pytest.raises(BadWeightsError):
        DiscreteMeasure([[0.0], [1.0]], [0.5, 0.6])
    with pytest.raises(BadWeightsError):
        DiscreteMeasure([[0.0], [1.0]], [1.0, 0.0])
    with pytest.raises(DimensionMismatchError):
        DiscreteMeasure([[0.0], [1.0]], [1.0])


def test_duplicate_atoms_are_kept():
    m = from_samples([[1.0], [1.0], [2.0]])
    assert m.n == 3


def test_from_weighted_drops_zero_weights():
    m = from_weighted([[0.0], [1.0], [2.0]], [1.0, 0.0, 3.0])
    assert m.support.ravel().tolist() == [0.0, 2.0]
    assert m.weights.tolist() == [0.25, 0.75]


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 30), st.integers(1, 4)),
              elements=st.floats(-1e6, 1e6, allow_nan=False)))
def test_from_samples_invariants(x):
    m = from_samples(x)
    assert m.n == x.shape[0] and m.dim == x.shape[1]
    assert np.all(m.weights > 0)
    assert math.isclose(math.fsum(m.weights), 1.0, abs_tol=1e-9)
    assert np.array_equal(m.support, x)


# -- CSV ----------------------------------------------------------------------


def test_csv_uniform_weights(tmp_path):
    p = write_csv(tmp_path / "t.csv", ["a", "b"], [[1, 2], [3, 4], [5, 6]])
    m = load_csv(p, CsvSchema(("a", "b")))
    assert m.support.tolist() == [[1, 2], [3, 4], [5, 6]]
    assert np.allclose(m.weights, 1 / 3, rtol=0, atol=1e-15)


def test_csv_weight_column(tmp_path):
    p = write_csv(tmp_path / "t.csv", ["a", "w"], [[1, 2], [2, 2], [3, 4]])
    m = load_csv(p, CsvSchema(("a",), weight_column="w"))
    assert m.weights.tolist() == [0.25, 0.25, 0.5]


def test_csv_medicaid_schema(tmp_path):
    rows = [
        [1, 1, 40, 25000],
        [0, 1, 35, 18000],
        [0, 2, 20, 3000],
        [1, 1, 50, 61000],
        [0, 1, 38, 42000],
    ]
    p = write_csv(tmp_path / "mt.csv", ["HINSCAID", "EMPSTAT", "UHRSWORK", "INCWAGE"], rows)
    schema = CsvSchema(
        ("HINSCAID", "EMPSTAT", "UHRSWORK", "INCWAGE"),
        transforms={"UHRSWORK": "log", "INCWAGE": "log"},
    )
    m = load_csv(p, schema)
    # hand-computed expectation
    expected = [[r[0], r[1], math.log(r[2]), math.log(r[3])] for r in rows]
    assert (m.n, m.dim) == (5, 4)
    assert np.allclose(m.support, expected, rtol=0, atol=1e-14)


def test_csv_drops_missing_and_nonpositive_log(tmp_path, caplog):
    p = tmp_path / "t.csv"
    p.write_text("x,y\n1,2\n,3\n4,NA\n5,0\n6,7\n")
    m, rep = load_csv(p, CsvSchema(("x", "y"), transforms={"y": "log"}), return_report=True)
    assert "nonpositive" in caplog.text
    assert m.support[:, 0].tolist() == [1.0, 6.0]
    assert (rep.rows_read, rep.dropped_missing, rep.dropped_nonpositive_log) == (5, 2, 1)
    assert rep.rows_kept == 2


def test_csv_errors(tmp_path):
    p = write_csv(tmp_path / "t.csv", ["a", "b"], [[1, 2]])
    with pytest.raises(MissingColumnError):
        load_csv(p, CsvSchema(("a", "c")))
    bad = tmp_path / "bad.csv"
    bad.write_text("a\n1\n2\nabc\n")
    with pytest.raises(ParseError) as exc:
        load_csv(bad, CsvSchema(("a",)))
    assert exc.value.row == 4  # file line, header is line 1
    empty = tmp_path / "empty.csv"
    empty.write_text("a\n\nNA\n")
    with pytest.raises(AllRowsDroppedError):
        load_csv(empty, CsvSchema(("a",)))


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    w = rng.uniform(0.1, 1, 7)
    m = DiscreteMeasure(rng.standard_normal((7, 3)), w / w.sum())
    to_csv(m, tmp_path / "m.csv", ["p", "q", "r"])
    back = load_csv(tmp_path / "m.csv", CsvSchema(("p", "q", "r"), weight_column="weight"))
    assert np.array_equal(back.support, m.support)
    assert np.allclose(back.weights, m.weights, rtol=1e-15)


# -- images -------------------------------------------------------------------


def test_image_two_pixels():
    m = image_to_measure([[0, 1], [0, 1]])
    assert m.support.tolist() == [[0, 1], [1, 1]]
    assert m.weights.tolist() == [0.5, 0.5]


def test_image_single_pixel():
    m = image_to_measure([[4]])
    assert m.support.tolist() == [[0, 0]]
    assert m.weights.tolist() == [1.0]


def test_image_disc():
    g = disc((16, 16), (8, 8), 5)
    m = image_to_measure(g)
    assert m.n == int(np.count_nonzero(g))
    assert abs(math.fsum(m.weights) - 1.0) <= 1e-9


def test_image_all_zero():
    with pytest.raises(AllZeroImageError):
        image_to_measure(np.zeros((3, 3)))


def test_image_reconstruction():
    rng = np.random.default_rng(2)
    g = rng.uniform(size=(9, 7)) * (rng.uniform(size=(9, 7)) > 0.4)
    m = image_to_measure(g)
    assert np.array_equal(render_image(m, g.shape), g / math.fsum(g[g > 0]))


def test_image_file_round_trip(tmp_path):
    g = disc((12, 10), (5, 4), 3)
    write_image(g, tmp_path / "d.png")
    assert np.array_equal(read_image(tmp_path / "d.png"), g)
    m = load_image(tmp_path / "d.png")
    assert m.n == int(g.sum())
    half = read_image(tmp_path / "d.png", downsample=2)
    assert half.shape == (6, 5)


def test_image_alpha_multiplies(tmp_path):
    from PIL import Image

    rgba = np.zeros((2, 2, 4), dtype=np.uint8)
    rgba[..., :3] = 255
    rgba[0, 0, 3] = 255
    rgba[1, 1, 3] = 51
    Image.fromarray(rgba, mode="RGBA").save(tmp_path / "a.png")
    g = read_image(tmp_path / "a.png")
    assert np.allclose(g, [[1.0, 0.0], [0.0, 0.2]])


# -- pool, moments, CDFs ------------------------------------------------------


def test_pool_single_part_is_identity():
    p = from_samples([[0.0], [3.0]])
    assert pool([p], [1.0]) is p


def test_pool_two_diracs():
    m = pool([from_samples([[0.0]]), from_samples([[1.0]])], [0.3, 0.7])
    assert m.support.ravel().tolist() == [0.0, 1.0]
    assert m.weights.tolist() == [0.3, 0.7]


def test_pool_unit_vector_selects_part():
    parts = [from_samples([[0.0], [1.0]]), from_samples([[5.0], [6.0], [7.0]])]
    assert pool(parts, [0.0, 1.0]).same_as(parts[1])


def test_pool_errors():
    with pytest.raises(DimensionMismatchError):
        pool([from_samples([[0.0]]), from_samples([[0.0, 1.0]])])
    with pytest.raises(BadWeightsError):
        pool([from_samples([[0.0]]), from_samples([[1.0]])], [0.5, 0.6])
    with pytest.raises(BadWeightsError):
        pool([from_samples([[0.0]]), from_samples([[1.0]])], [1.2, -0.2])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_pool_associative(seed):
    rng = np.random.default_rng(seed)
    A, B, C = (from_samples(rng.standard_normal((int(rng.integers(1, 6)), 2))) for _ in range(3))
    a, b, c = rng.dirichlet([1, 1, 1])
    flat = pool([A, B, C], [a, b, c])
    inner = pool([A, B], [a / (a + b), b / (a + b)])
    nested = pool([inner, C], [a + b, c])
    assert np.array_equal(flat.support, nested.support)
    assert np.allclose(flat.weights, nested.weights, rtol=1e-12, atol=0)


def test_second_moment_examples():
    assert second_moment(from_samples([[0.0, 0.0]])) == 0.0
    assert second_moment(from_samples([[-1.0], [1.0]])) == 1.0


def test_second_moment_matches_loop():
    rng = np.random.default_rng(5)
    w = rng.uniform(0.1, 1.0, 50)
    m = DiscreteMeasure(rng.standard_normal((50, 3)), w / w.sum())
    naive = 0.0
    for i in range(50):
        naive += m.weights[i] * sum(m.support[i, k] ** 2 for k in range(3))
    assert math.isclose(second_moment(m), naive, rel_tol=1e-12)


def test_cdf_grid():
    m = DiscreteMeasure([[2.0], [1.0], [2.0], [3.0]], [0.1, 0.2, 0.3, 0.4])
    vals, F = cdf_grid(m, 0)
    assert vals.tolist() == [1.0, 2.0, 3.0]
    assert np.allclose(F, [0.2, 0.6, 1.0])
    assert F[-1] == 1.0
    assert cdf_at(m, 0, [0.5, 1.0, 2.5, 9.0]).tolist() == pytest.approx([0.0, 0.2, 0.6, 1.0])
