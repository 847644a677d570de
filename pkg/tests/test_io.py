import io as stdio
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from matern_recon.errors import InvalidInputError, NormalsRequiredError, ParseError
from matern_recon.io import load_cloud, load_mesh, save_cloud, save_mesh, write_csv
from matern_recon.krr import OrientedPointCloud
from matern_recon.mesher import TriangleMesh, extract_surface
from matern_recon.shapes import SphereSDF, sample_sphere

TRIANGLE = TriangleMesh([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])


def test_xyz_three_points(tmp_path):
    p = tmp_path / "c.xyz"
    p.write_text("0 0 0 0 0 1\n1 0 0 0 1 0\n# comment\n0 1 0 1 0 0\n")
    cloud = load_cloud(p)
    assert len(cloud) == 3
    np.testing.assert_array_equal(cloud.normals[0], [0, 0, 1])


def test_xyz_without_normals(tmp_path):
    p = tmp_path / "c.xyz"
    p.write_text("0 0 0\n1 0 0\n")
    with pytest.raises(NormalsRequiredError, match="normals required"):
        load_cloud(p)


def test_ply_without_normals(tmp_path):
    p = tmp_path / "c.ply"
    p.write_text("ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
                 "property float z\nend_header\n0 0 0\n1 1 1\n")
    with pytest.raises(NormalsRequiredError, match="normals required"):
        load_cloud(p)


def test_long_normals_are_renormalized(tmp_path):
    p = tmp_path / "c.xyz"
    p.write_text("0 0 0 0 0 2\n1 0 0 2 0 0\n")
    np.testing.assert_array_equal(load_cloud(p).normals, [[0, 0, 1], [1, 0, 0]])


def test_malformed_xyz_reports_line(tmp_path):
    p = tmp_path / "c.xyz"
    p.write_text("0 0 0 0 0 1\n1 0 0 0 1\n")
    with pytest.raises(ParseError, match="line 2"):
        load_cloud(p)
    p.write_text("0 0 0 0 0 1\n1 0 x 0 1 0\n")
    with pytest.raises(ParseError, match="line 2"):
        load_cloud(p)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_cloud(tmp_path / "nope.ply")


def test_unknown_extension(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("")
    with pytest.raises(InvalidInputError):
        load_cloud(p)


@pytest.mark.parametrize("name", ["c.xyz", "c.ply"])
def test_cloud_round_trip(tmp_path, name):
    cloud = sample_sphere(50, 0.3, seed=1)
    save_cloud(cloud, tmp_path / name)
    back = load_cloud(tmp_path / name)
    np.testing.assert_array_equal(back.points, cloud.points)
    np.testing.assert_allclose(back.normals, cloud.normals, rtol=0, atol=1e-15)


def test_binary_ply_cloud(tmp_path):
    pts = np.random.default_rng(0).normal(size=(10, 6))
    for endian, fmt in (("<", "binary_little_endian"), (">", "binary_big_endian")):
        p = tmp_path / f"{fmt}.ply"
        header = (f"ply\nformat {fmt} 1.0\nelement vertex 10\n"
                  + "".join(f"property double {c}\n" for c in ("x", "y", "z", "nx", "ny", "nz"))
                  + "end_header\n")
        p.write_bytes(header.encode() + pts.astype(endian + "f8").tobytes())
        cloud = load_cloud(p)
        np.testing.assert_array_equal(cloud.points, pts[:, :3])


def test_obj_single_triangle(tmp_path):
    p = tmp_path / "t.obj"
    save_mesh(TRIANGLE, p)
    lines = p.read_text().splitlines()
    assert sum(line.startswith("v ") for line in lines) == 3
    assert sum(line.startswith("vn ") for line in lines) == 3
    assert [line for line in lines if line.startswith("f ")] == ["f 1//1 2//2 3//3"]


@pytest.mark.parametrize("name", ["m.obj", "m.ply"])
def test_mesh_round_trip(tmp_path, name):
    mesh = extract_surface(SphereSDF(0.3), 24)
    save_mesh(mesh, tmp_path / name)
    back = load_mesh(tmp_path / name)
    assert np.array_equal(back.faces, mesh.faces)
    assert np.max(np.abs(back.vertices - mesh.vertices)) <= 1e-6
    assert np.max(np.abs(back.vertex_normals - mesh.vertex_normals)) <= 1e-6


def test_ply_mesh_layout(tmp_path):
    p = tmp_path / "t.ply"
    save_mesh(TRIANGLE, p)
    raw = p.read_bytes()
    header, body = raw.split(b"end_header\n", 1)
    assert b"format binary_little_endian 1.0" in header
    assert b"property list uchar int vertex_indices" in header
    assert len(body) == 3 * 6 * 4 + 1 + 3 * 4
    assert struct.unpack("<B3i", body[72:]) == (3, 0, 1, 2)


def test_empty_mesh_rejected(tmp_path):
    with pytest.raises(InvalidInputError):
        save_mesh(TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), int)), tmp_path / "e.obj")


def test_quad_is_fan_split(tmp_path):
    p = tmp_path / "q.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    mesh = load_mesh(p)
    assert mesh.faces.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_negative_obj_indices(tmp_path):
    p = tmp_path / "n.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n")
    assert load_mesh(p).faces.tolist() == [[0, 1, 2]]


@pytest.mark.parametrize(
    "body,line",
    [
        ("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 4\n", 4),
        ("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n", 4),
        ("v 0 0 0\nv 1 0\n", 2),
        ("v 0 0 0\nbogus 1 2 3\n", 2),
        ("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2\n", 4),
    ],
)
def test_obj_parse_errors_carry_line(tmp_path, body, line):
    p = tmp_path / "bad.obj"
    p.write_text(body)
    with pytest.raises(ParseError, match=f"line {line}"):
        load_mesh(p)


def test_truncated_binary_ply(tmp_path):
    p = tmp_path / "t.ply"
    save_mesh(TRIANGLE, p)
    p.write_bytes(p.read_bytes()[:-5])
    with pytest.raises(ParseError):
        load_mesh(p)


def test_csv_header_once():
    buf = stdio.StringIO()
    write_csv(buf, ("a", "b"), [(1, 0.1), (2, 1 / 3)])
    lines = buf.getvalue().splitlines()
    assert lines == ["a,b", "1,0.1", f"2,{1 / 3!r}"]


@given(st.lists(st.tuples(*[st.floats(-1e6, 1e6, allow_nan=False)] * 6), min_size=1, max_size=40))
def test_xyz_round_trip_property(rows):
    import tempfile
    from pathlib import Path

    data = np.asarray(rows)
    data[:, 3:] += [0.0, 0.0, 1e-3 + np.abs(data[:, 3:]).max()]  # keep normals nonzero
    cloud = OrientedPointCloud(data[:, :3], data[:, 3:])
    with tempfile.TemporaryDirectory() as d:
        save_cloud(cloud, Path(d) / "c.xyz")
        back = load_cloud(Path(d) / "c.xyz")
    np.testing.assert_array_equal(back.points, cloud.points)
