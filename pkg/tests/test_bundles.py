"""Binary bundle container: round trips, determinism, corruption checks."""

import hashlib
import struct

import numpy as np
import pytest

from hybridmor import bundles as bnd

from helpers import build_case


def _write_basic(path):
    sections = {
        "ints": np.arange(5, dtype=np.int64),
        "floats": np.linspace(0, 1, 4),
        "bytes": np.frombuffer(b"hello", dtype="u1").copy(),
        "scalar": np.array([42]),
        "empty": np.empty(0, dtype=float),
    }
    bnd.write_bundle(path, bnd.KIND_TASK, sections)
    return sections


def test_bundle_roundtrip(tmp_path):
    path = tmp_path / "b.bin"
    sections = _write_basic(path)
    kind, got = bnd.read_bundle(path)
    assert kind == bnd.KIND_TASK
    assert set(got) == set(sections)
    for name, arr in sections.items():
        np.testing.assert_array_equal(got[name], arr)
    assert got["ints"].dtype == np.int64
    assert got["floats"].dtype == np.float64
    assert got["bytes"].dtype == np.uint8


def test_bundle_upcasts_narrow_types(tmp_path):
    path = tmp_path / "b.bin"
    bnd.write_bundle(path, bnd.KIND_TASK, {
        "i32": np.arange(3, dtype=np.int32),
        "f32": np.array([1.5, 2.5], dtype=np.float32),
    })
    _, got = bnd.read_bundle(path)
    assert got["i32"].dtype == np.int64
    assert got["f32"].dtype == np.float64
    np.testing.assert_array_equal(got["f32"], [1.5, 2.5])


def test_bundle_rejects_unsupported_dtype_and_long_names(tmp_path):
    path = tmp_path / "b.bin"
    with pytest.raises(bnd.BundleError, match="unsupported dtype"):
        bnd.write_bundle(path, 1, {"c": np.array([1 + 2j])})
    with pytest.raises(bnd.BundleError, match="too long"):
        bnd.write_bundle(path, 1, {"x" * 17: np.array([1])})


def test_bundle_write_is_deterministic(tmp_path):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    _write_basic(a)
    _write_basic(b)
    assert a.read_bytes() == b.read_bytes()


def _tampered(path, out, mutate):
    """Apply `mutate` to the body and re-sign with a fresh checksum."""
    blob = path.read_bytes()
    body = bytearray(blob[:-32])
    mutate(body)
    out.write_bytes(bytes(body) + hashlib.sha256(bytes(body)).digest())
    return out


def test_bundle_read_validates_container(tmp_path):
    path = tmp_path / "ok.bin"
    _write_basic(path)
    blob = path.read_bytes()

    bad = tmp_path / "bad.bin"

    bad.write_bytes(blob[:20])
    with pytest.raises(bnd.BundleError, match="truncated"):
        bnd.read_bundle(bad)

    flipped = bytearray(blob)
    flipped[-40] ^= 0x01                      # payload byte, stale digest
    bad.write_bytes(bytes(flipped))
    with pytest.raises(bnd.BundleError, match="checksum"):
        bnd.read_bundle(bad)

    def bad_magic(body):
        body[0:8] = b"NOTMAGIC"
    with pytest.raises(bnd.BundleError, match="bad magic"):
        bnd.read_bundle(_tampered(path, bad, bad_magic))

    def bad_version(body):
        struct.pack_into("<I", body, 8, 99)
    with pytest.raises(bnd.BundleError, match="version 99"):
        bnd.read_bundle(_tampered(path, bad, bad_version))

    def bad_code(body):
        struct.pack_into("<I", body, 24 + 16, 77)   # first table entry
    with pytest.raises(bnd.BundleError, match="unknown dtype code"):
        bnd.read_bundle(_tampered(path, bad, bad_code))

    def bad_bounds(body):
        struct.pack_into("<Q", body, 24 + 32, 1 << 40)
    with pytest.raises(bnd.BundleError, match="out of bounds"):
        bnd.read_bundle(_tampered(path, bad, bad_bounds))

    with pytest.raises(bnd.BundleError, match="expected"):
        bnd.read_bundle(path, expect_kind=bnd.KIND_RESULT)


def _sample_task(empty_skeleton=False):
    if empty_skeleton:
        skel_facets = np.empty((0, 2), dtype=np.int64)
        skel_rows = np.empty((0, 0), dtype=np.int64)
    else:
        skel_facets = np.array([[0, 1], [1, 3]])
        skel_rows = np.array([[0, -1, 1], [2, 3, -1]])
    return bnd.Task(
        sub_id=3, dim=2, p=2, alpha=0.01, h_i=0.125,
        eps=np.array([1e-2, 1e-4]), load="poly", load_degree=-1,
        store_q=True, n_free_trace=4,
        vertices=np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]),
        elements=np.array([[0, 1, 3], [0, 3, 2]]),
        core_mask=np.array([1, 0], dtype=np.uint8),
        boundary_facets=np.array([[0, 1], [2, 3]]),
        dir_verts=np.array([0, 2]),
        dir_edges=np.array([[0, 2]]),
        skel_facets=skel_facets,
        skel_rows=skel_rows,
    )


@pytest.mark.parametrize("empty_skeleton", [False, True])
def test_task_roundtrip(tmp_path, empty_skeleton):
    task = _sample_task(empty_skeleton)
    path = tmp_path / "task.bundle"
    bnd.write_task(path, task)
    back = bnd.read_task(path)
    for name in ("sub_id", "dim", "p", "load_degree", "n_free_trace"):
        assert getattr(back, name) == getattr(task, name)
    assert back.alpha == task.alpha and back.h_i == task.h_i
    assert back.load == "poly"
    assert back.store_q is True
    for name in ("eps", "vertices", "elements", "core_mask",
                 "boundary_facets", "dir_verts", "dir_edges",
                 "skel_facets", "skel_rows"):
        np.testing.assert_array_equal(getattr(back, name),
                                      getattr(task, name), err_msg=name)
        assert getattr(back, name).shape == getattr(task, name).shape, name


def test_meta_roundtrip(tmp_path):
    path = tmp_path / "result.meta"
    timings = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 2.1]
    bnd.write_meta(path, timings, peak_rss=123456789.0)
    got = bnd.read_meta(path)
    assert set(got) == set(bnd.TIMING_FIELDS) | {"peak_rss"}
    for name, val in zip(bnd.TIMING_FIELDS, timings):
        assert got[name] == pytest.approx(val)
    assert got["peak_rss"] == 123456789.0


@pytest.mark.parametrize("store_q", [True, False])
def test_result_roundtrip(tmp_path, store_q, rng):
    case = build_case(2, 4, 4, p=2, r=2.0, eps=(1e-2, 1e-4),
                      store_q=store_q)
    i = 1
    bl = case.blocks[i]
    reduced = [case.bundles[e][i] for e in (1e-2, 1e-4)]
    coords = rng.standard_normal((bl.m, 2)) if store_q else None
    res = bnd.Result(
        sub_id=i, h_i=bl.h, m=bl.m, n_ext=case.factors[i].blocks.m + 7,
        eps=np.array([1e-2, 1e-4]), sigma=case.factors[i].sigma,
        trace_cols=bl.trace_cols, c_rows=bl.c_rows, c_cols=bl.c_cols,
        c_vals=bl.c_vals, reduced=reduced, dof_coords=coords)
    path = tmp_path / "result.bundle"
    bnd.write_result(path, res)
    back = bnd.read_result(path)

    assert back.sub_id == i and back.m == bl.m and back.n_ext == res.n_ext
    np.testing.assert_array_equal(back.eps, res.eps)
    np.testing.assert_array_equal(back.sigma, res.sigma)
    np.testing.assert_array_equal(back.trace_cols, res.trace_cols)
    np.testing.assert_array_equal(back.c_vals, res.c_vals)
    if store_q:
        np.testing.assert_array_equal(back.dof_coords, coords)
    else:
        assert back.dof_coords is None
    for rb, rb0 in zip(back.reduced, reduced):
        assert rb.k == rb0.k
        assert rb.k_sigma == rb0.k_sigma
        assert rb.kept_wf == rb0.kept_wf
        np.testing.assert_array_equal(rb.lam, rb0.lam)
        np.testing.assert_array_equal(rb.B_t, rb0.B_t)
        np.testing.assert_array_equal(rb.f_t, rb0.f_t)
        np.testing.assert_array_equal(rb.K_stiff_t, rb0.K_stiff_t)
        np.testing.assert_array_equal(rb.d, rb0.d)
        if store_q:
            np.testing.assert_array_equal(rb.Q, rb0.Q)
        else:
            assert rb.Q is None


def test_solution_roundtrip(tmp_path, rng):
    path = tmp_path / "solution.bin"
    beta = rng.standard_normal(9)
    coords = rng.standard_normal((9, 3))
    bnd.write_solution(path, 5, 3, beta, coords)
    sub_id, beta2, coords2 = bnd.read_solution(path)
    assert sub_id == 5
    np.testing.assert_array_equal(beta2, beta)
    np.testing.assert_array_equal(coords2, coords)
