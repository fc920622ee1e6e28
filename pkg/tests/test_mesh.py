import numpy as np
import pytest
from dataclasses import replace

from nsd_ensemble.errors import ResolutionMismatchError
from nsd_ensemble.mesh import (FLUID, POROUS, build_coupled_rect_mesh, build_y_domain_mesh,
                               validate_mesh)


@pytest.mark.parametrize("n", [1, 2, 8])
def test_rect_counts(n):
    m = build_coupled_rect_mesh(n)
    # n x 2n cells, two triangles each
    assert m.n_triangles == 4 * n * n
    assert m.n_vertices == (n + 1) * (2 * n + 1)
    assert len(m.interface) == n
    np.testing.assert_allclose(m.edge_lengths(m.interface), 1 / n)
    assert np.sum(m.subdomain == FLUID) == np.sum(m.subdomain == POROUS)


def test_rect_fine_areas():
    m = build_coupled_rect_mesh(32)
    assert m.n_triangles == 4096
    np.testing.assert_allclose(m.signed_areas(), 1 / 2048, rtol=1e-12)


def test_rect_interface_geometry():
    m = build_coupled_rect_mesh(4)
    mid = m.vertices[m.edges[m.interface]].mean(axis=1)
    np.testing.assert_allclose(mid[:, 1], 0.0, atol=1e-15)
    np.testing.assert_allclose(m.interface_normal, [[0.0, -1.0]] * 4)
    np.testing.assert_allclose(m.interface_tangent, [[1.0, 0.0]] * 4)
    # every y=0 edge is interface, none is outer boundary
    on_axis = np.flatnonzero(np.all(np.abs(m.vertices[m.edges][:, :, 1]) < 1e-14, axis=1))
    assert set(on_axis) == set(m.interface)
    assert not set(on_axis) & set(m.gamma_f) and not set(on_axis) & set(m.gamma_p)


def test_boundary_lengths():
    m = build_coupled_rect_mesh(4)
    assert m.edge_lengths(m.gamma_f).sum() == pytest.approx(3.0)
    assert m.edge_lengths(m.gamma_p).sum() == pytest.approx(3.0)


@pytest.mark.parametrize("n", [4, 8, 32])
def test_valid(n):
    assert validate_mesh(build_coupled_rect_mesh(n)) == []
    assert validate_mesh(build_y_domain_mesh(n)) == []


def test_flipped_triangle_detected():
    m = build_coupled_rect_mesh(2)
    tris = m.triangles.copy()
    tris[3] = tris[3, ::-1]
    bad = replace(m, triangles=tris)
    problems = validate_mesh(bad)
    assert len([p for p in problems if "signed area" in p]) == 1


def test_y_domain_geometry():
    m = build_y_domain_mesh(4)
    assert np.any(np.all(np.isclose(m.vertices, [0.0, 1.0]), axis=1))
    m = build_y_domain_mesh(32)
    assert m.segment_length("S1") == pytest.approx(0.25, abs=1e-14)
    assert m.segment_length("S2") == pytest.approx(0.25, abs=1e-14)
    assert m.segment_length("S0") == pytest.approx(0.5, abs=1e-14)
    assert m.n_triangles == 2 * 32 ** 2
    assert np.sum(m.subdomain == FLUID) + np.sum(m.subdomain == POROUS) == m.n_triangles
    # fluid area: decagon by the shoelace formula
    from nsd_ensemble.mesh import Y_DECAGON
    x, y = Y_DECAGON.T
    area = 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
    assert m.signed_areas()[m.subdomain == FLUID].sum() == pytest.approx(area, abs=1e-13)


def test_y_domain_segment_normals():
    m = build_y_domain_mesh(8)
    np.testing.assert_allclose(m.edge_outward_normals(m.flux_segments["S1"]), [[0, -1]] * 2, atol=1e-15)
    np.testing.assert_allclose(m.edge_outward_normals(m.flux_segments["S2"]), [[1, 0]] * 2, atol=1e-15)


@pytest.mark.parametrize("n", [0, 2, 6, 30])
def test_y_domain_resolution(n):
    with pytest.raises(ResolutionMismatchError):
        build_y_domain_mesh(n)


def test_rect_bad_n():
    with pytest.raises(ValueError):
        build_coupled_rect_mesh(0)
