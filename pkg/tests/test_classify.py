import io
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import ndimage
from shapely.geometry import MultiPolygon, Point

from extremeregions.classify import (
    UNCLASSIFIED, GridSpec, Regionalisation, boundaries_geojson, classify_grid, classify_points,
    nearest_stations, region_boundaries, wknn_label, write_grid,
)
from extremeregions.cluster import Partition
from extremeregions.distance import great_circle_km


def test_hand_example_weights_three_to_one():
    # far neighbour at 3: weights 3/1 for label 1 and 3/3 for label 2
    assert wknn_label(np.array([1.0, 3.0, 3.0]), np.array([1, 2, 9])) == 1


def test_hand_example_single_neighbour():
    assert wknn_label(np.array([1.0, 3.0]), np.array([1, 2])) == 1
    pts = classify_points([[0.0, 0.0]], [[1.0, 0.0], [3.0, 0.0]], [1, 2], k_nn=1, mask_km=None, metric="planar")
    assert pts.tolist() == [1]


def test_tie_goes_to_lowest_label():
    assert wknn_label(np.array([1.0, 1.0, 2.0]), np.array([2, 1, 3])) == 1


def test_coincident_station_wins():
    assert wknn_label(np.array([0.0, 1.0, 1.0, 2.0]), np.array([4, 1, 1, 1])) == 4


@given(st.integers(3, 30), st.integers(0, 2**31))
def test_k1_reproduces_training_labels(n, seed):
    rng = np.random.default_rng(seed)
    xy = np.column_stack([rng.uniform(140, 150, n), rng.uniform(-40, -30, n)])
    labels = rng.integers(1, 4, n)
    out = classify_points(xy, xy, labels, k_nn=1, mask_km=None)
    np.testing.assert_array_equal(out, labels)


def test_invalid_k():
    xy = np.zeros((3, 2)) + np.arange(3)[:, None]
    with pytest.raises(ValueError):
        classify_points(xy, xy, [1, 1, 2], k_nn=3)
    with pytest.raises(ValueError):
        classify_points(xy, xy, [1, 1, 2], k_nn=0)


def test_nearest_great_circle_distances():
    rng = np.random.default_rng(0)
    st_xy = np.column_stack([rng.uniform(140, 150, 20), rng.uniform(-40, -30, 20)])
    pts = np.column_stack([rng.uniform(140, 150, 5), rng.uniform(-40, -30, 5)])
    dist, idx = nearest_stations(pts, st_xy, 4)
    for p in range(5):
        brute = great_circle_km(pts[p, 0], pts[p, 1], st_xy[:, 0], st_xy[:, 1])
        np.testing.assert_array_equal(idx[p], np.argsort(brute)[:4])
        np.testing.assert_allclose(dist[p], np.sort(brute)[:4], rtol=1e-9)


def test_mask_leaves_remote_points_unclassified():
    st_xy = np.array([[145.0, -35.0], [145.1, -35.0], [145.2, -35.0]])
    out = classify_points([[145.05, -35.0], [150.0, -35.0]], st_xy, [1, 1, 2], k_nn=2, mask_km=50)
    assert out.tolist() == [1, UNCLASSIFIED]


def test_classify_grid_skips_unassigned_stations():
    coords = {"a": (0.0, 0.0), "b": (0.1, 0.0), "c": (1.0, 0.0), "d": (1.1, 0.0), "u": (0.5, 0.0)}
    p = Partition({"a": 1, "b": 1, "c": 2, "d": 2, "u": 0}, "hierarchical")
    r = classify_grid(p, coords, GridSpec(0.0, 0.0, 1.1, 0.0, 0.1), k_nn=1, mask_km=None)
    assert r.labels.shape == (1, 12)
    assert set(r.labels.ravel()) == {1, 2}
    assert r.labels[0, 0] == 1 and r.labels[0, -1] == 2


def test_grid_axes_include_endpoints():
    lons, lats = GridSpec(140.0, -30.0, 141.0, -29.5, 0.05).axes()
    assert len(lons) == 21 and len(lats) == 11
    assert lons[-1] == pytest.approx(141.0)
    with pytest.raises(ValueError):
        GridSpec.parse_bbox("1,2,0,3", 0.1)


@given(arrays(np.int64, st.tuples(st.integers(1, 8), st.integers(1, 8)), elements=st.integers(0, 3)))
def test_polygon_parts_match_flood_fill(labels):
    ny, nx = labels.shape
    grid = GridSpec(0.0, 0.0, (nx - 1) * 1.0, (ny - 1) * 1.0, 1.0)
    r = Regionalisation(grid, labels, Partition({}, "x"), 1, None)
    polys = region_boundaries(r)
    assert set(polys) == set(np.unique(labels).tolist()) - {UNCLASSIFIED}
    for lab, geom in polys.items():
        _, n_parts = ndimage.label(labels == lab)  # 4-connectivity
        parts = len(geom.geoms) if isinstance(geom, MultiPolygon) else 1
        assert parts == n_parts
        assert geom.area == pytest.approx(float((labels == lab).sum()))
        ys, xs = np.nonzero(labels == lab)
        assert all(geom.contains(Point(x, y)) for x, y in zip(xs, ys))


def test_geojson_and_grid_output():
    labels = np.array([[1, 1, 2], [0, 2, 2]])
    r = Regionalisation(GridSpec(0, 0, 2, 1, 1), labels, Partition({}, "x"), 1, None)
    gj = boundaries_geojson(region_boundaries(r))
    json.dumps(gj)
    assert [f["properties"]["label"] for f in gj["features"]] == [1, 2]
    buf = io.StringIO()
    write_grid(r, buf)
    rows = buf.getvalue().splitlines()
    assert rows[0] == "lon,lat,label" and len(rows) == 7
    assert rows[4].split(",")[-1] == "0"
