import numpy as np
import pytest

from vmfem.mesh import (Mesh, face_sides, generate_structured, mesh_h,
                        read_mesh, write_mesh)


def test_smallest_structured_mesh():
    mesh = generate_structured(1, 1)
    assert mesh.n_elements == 2
    assert mesh.n_faces == 5
    assert len(mesh.boundary_faces()) == 4
    assert len(mesh.interior_faces()) == 1


def test_structured_element_count_64():
    mesh = generate_structured(64, 64)
    assert mesh.n_elements == 8192


def test_mesh_h_values():
    assert mesh_h(generate_structured(4, 4, (0, 1.25, 0, 1.25))) == pytest.approx(
        0.3125 * np.sqrt(2.0), rel=1e-12)
    assert mesh_h(generate_structured(8, 8, (0, 1.25, 0, 1.25))) == pytest.approx(
        0.22097, abs=5e-6)
    assert mesh_h(generate_structured(1, 1)) == pytest.approx(np.sqrt(2.0), rel=1e-14)


def test_invalid_arguments():
    with pytest.raises(ValueError):
        generate_structured(0, 4)
    with pytest.raises(ValueError):
        generate_structured(4, -1)
    with pytest.raises(ValueError):
        generate_structured(4, 4, (0.0, 0.0, 0.0, 1.0))


def test_euler_relation_and_area():
    for nx, ny in ((1, 1), (3, 5), (8, 8)):
        mesh = generate_structured(nx, ny, (0, 2.0, 0, 1.5))
        assert mesh.n_vertices - mesh.n_faces + mesh.n_elements == 1
        assert mesh.signed_areas().sum() == pytest.approx(3.0, rel=1e-13)
        assert np.all(mesh.signed_areas() > 0)


def test_face_orientation_invariants():
    mesh = generate_structured(4, 3, (0, 1.0, 0, 2.0))
    centroids = mesh.centroids()
    for fi, face in enumerate(mesh.faces):
        assert np.hypot(*face.normal) == pytest.approx(1.0, abs=1e-14)
        if face.is_boundary:
            mid = mesh.vertices[list(face.vertices)].mean(axis=0)
            assert face.normal @ (mid - centroids[face.minus_element]) > 0
        else:
            assert face.minus_element < face.plus_element
            gap = centroids[face.plus_element] - centroids[face.minus_element]
            assert face.normal @ gap > 0
            n_minus = mesh.outward_normal(face.minus_element, fi)
            n_plus = mesh.outward_normal(face.plus_element, fi)
            assert np.all(n_minus == -n_plus)


def test_shared_face_multiplicity():
    mesh = generate_structured(5, 5)
    counts = np.zeros(mesh.n_faces, dtype=int)
    for e in range(mesh.n_elements):
        for fi in mesh.element_faces[e]:
            counts[fi] += 1
    for fi, face in enumerate(mesh.faces):
        assert counts[fi] == (1 if face.is_boundary else 2)


def test_face_sides_continuous_field():
    mesh = generate_structured(3, 3)

    def evaluator(elem, pts):
        return pts[:, 0] + pts[:, 1]

    for fi in mesh.interior_faces():
        minus, plus = face_sides(mesh, fi, evaluator, params=[0.2, 0.5, 0.9])
        assert np.allclose(minus, plus, atol=1e-14)


def test_face_sides_piecewise_constant():
    mesh = generate_structured(1, 1)
    fi = mesh.interior_faces()[0]
    face = mesh.faces[fi]

    def evaluator(elem, pts):
        return np.full(len(pts), 1.0 if elem == face.minus_element else 2.0)

    minus, plus = face_sides(mesh, fi, evaluator)
    assert np.all(minus == 1.0)
    assert np.all(plus == 2.0)


def test_face_sides_linear_field_midpoint():
    mesh = generate_structured(2, 2)
    fi = mesh.interior_faces()[0]
    face = mesh.faces[fi]
    pa, pb = mesh.vertices[list(face.vertices)]
    mid = 0.5 * (pa + pb)

    def evaluator(elem, pts):
        return pts[:, 0] + pts[:, 1]

    minus, plus = face_sides(mesh, fi, evaluator)
    assert minus[0] == pytest.approx(mid[0] + mid[1], rel=1e-14)
    assert plus[0] == pytest.approx(minus[0], rel=1e-14)


def test_face_sides_boundary():
    mesh = generate_structured(1, 1)
    fi = mesh.boundary_faces()[0]
    minus, plus = face_sides(mesh, fi, lambda e, p: np.ones(len(p)))
    assert plus is None


def test_boundary_tags_structured():
    mesh = generate_structured(2, 2, (0, 1, 0, 1))
    tags = set(mesh.boundary_tags.values())
    assert tags == {"left", "right", "bottom", "top"}
    assert len(mesh.boundary_tags) == 8


def test_text_format_roundtrip():
    mesh = generate_structured(3, 2, (0, 1.5, 0, 1))
    text = write_mesh(mesh)
    back = read_mesh(text)
    assert np.array_equal(back.vertices, mesh.vertices)
    assert np.array_equal(back.elements, mesh.elements)
    assert back.boundary_tags == mesh.boundary_tags


def test_text_format_errors():
    with pytest.raises(ValueError):
        read_mesh("not-a-mesh\n")
    mesh = generate_structured(1, 1)
    text = write_mesh(mesh)
    with pytest.raises(ValueError):
        read_mesh(text + "0 3 interior_tagged\n")


def test_counterclockwise_enforced():
    with pytest.raises(ValueError):
        Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
             np.array([[0, 2, 1]]))


def test_mesh_immutable():
    mesh = generate_structured(2, 2)
    with pytest.raises(ValueError):
        mesh.vertices[0, 0] = 5.0
