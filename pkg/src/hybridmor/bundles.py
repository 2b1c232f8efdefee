"""File formats for the main-process/worker handoff.

Tasks and results travel as flat binary bundles so that worker processes
share nothing at runtime.  A bundle is a little-endian container:

    magic   8 bytes  b"HMORBNDL"
    version u32      format version (currently 1)
    kind    u32      1 = task, 2 = result, 3 = solution
    nsec    u32      number of sections
    pad     u32      reserved, zero
    table   nsec * (name 16s, dtype u32, pad u32, offset u64, nbytes u64)
    payload raw array bytes, in table order
    trailer 32 bytes sha256 of everything before it

Sections are named numpy arrays (int64, float64 or uint8); scalars are
stored as one-element arrays and strings as utf-8 uint8 payloads.  The
checksum must validate on read and the version must match the reader.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"HMORBNDL"
VERSION = 1
KIND_TASK = 1
KIND_RESULT = 2
KIND_SOLUTION = 3

_HEADER = struct.Struct("<8sIIII")
_SECTION = struct.Struct("<16sIIQQ")
_DTYPES = {1: np.dtype("<i8"), 2: np.dtype("<f8"), 3: np.dtype("u1")}
_CODES = {v: k for k, v in _DTYPES.items()}


class BundleError(Exception):
    """Raised for malformed, corrupt or mismatched bundle files."""


def _encode_name(name: str) -> bytes:
    raw = name.encode("ascii")
    if len(raw) > 16:
        raise BundleError(f"section name too long: {name!r}")
    return raw.ljust(16, b"\0")


def write_bundle(path, kind: int, sections: dict[str, np.ndarray]) -> None:
    """Write named arrays as a checksummed bundle file."""
    names, metas, payloads = [], [], []
    offset = _HEADER.size + len(sections) * _SECTION.size
    for name, arr in sections.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype.kind == "i":
            arr = arr.astype("<i8", copy=False)
        elif arr.dtype.kind == "f":
            arr = arr.astype("<f8", copy=False)
        elif arr.dtype.kind == "u" and arr.itemsize == 1:
            arr = arr.astype("u1", copy=False)
        else:
            raise BundleError(f"unsupported dtype {arr.dtype} in {name!r}")
        raw = arr.tobytes()
        names.append(name)
        metas.append((_encode_name(name), _CODES[arr.dtype], 0, offset,
                      len(raw)))
        payloads.append(raw)
        offset += len(raw)

    blob = bytearray()
    blob += _HEADER.pack(MAGIC, VERSION, kind, len(sections), 0)
    for meta in metas:
        blob += _SECTION.pack(*meta)
    for raw in payloads:
        blob += raw
    blob += hashlib.sha256(bytes(blob)).digest()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def read_bundle(path, expect_kind: int | None = None):
    """Read a bundle; returns (kind, dict of name -> array).

    Validates magic, version, section table bounds and the sha256
    trailer before returning any payload.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size + 32:
        raise BundleError(f"{path}: truncated bundle")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise BundleError(f"{path}: checksum mismatch")
    magic, version, kind, nsec, _ = _HEADER.unpack_from(body, 0)
    if magic != MAGIC:
        raise BundleError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise BundleError(f"{path}: version {version} != reader {VERSION}")
    if expect_kind is not None and kind != expect_kind:
        raise BundleError(f"{path}: bundle kind {kind}, expected {expect_kind}")
    sections = {}
    pos = _HEADER.size
    for _ in range(nsec):
        raw_name, code, _, offset, nbytes = _SECTION.unpack_from(body, pos)
        pos += _SECTION.size
        name = raw_name.rstrip(b"\0").decode("ascii")
        if code not in _DTYPES:
            raise BundleError(f"{path}: unknown dtype code {code} in {name!r}")
        if offset + nbytes > len(body):
            raise BundleError(f"{path}: section {name!r} out of bounds")
        sections[name] = np.frombuffer(
            body, dtype=_DTYPES[code], count=nbytes // _DTYPES[code].itemsize,
            offset=offset).copy()
    return kind, sections


def _scalar_i(sections, name) -> int:
    return int(sections[name][0])


def _scalar_f(sections, name) -> float:
    return float(sections[name][0])


@dataclass
class Task:
    """One subdomain's work order: extended submesh plus coupling data.

    Vertices/elements/facets are in local numbering; skel_rows carries the
    global free-trace row per skeleton-facet DOF (-1 where constrained) so
    the worker can emit globally indexed coupling blocks without seeing
    the rest of the mesh.
    """

    sub_id: int
    dim: int
    p: int
    alpha: float
    h_i: float
    eps: np.ndarray              # tolerance sweep, shared factors
    load: str
    load_degree: int             # -1 = assembler default
    store_q: bool
    n_free_trace: int
    vertices: np.ndarray         # (nv, dim)
    elements: np.ndarray         # (ne, dim+1)
    core_mask: np.ndarray        # (ne,) uint8
    boundary_facets: np.ndarray  # (nbf, dim) true outer-boundary facets
    dir_verts: np.ndarray        # Dirichlet vertex ids
    dir_edges: np.ndarray        # (nde, 2) Dirichlet edge vertex pairs
    skel_facets: np.ndarray      # (nsf, dim) skeleton facets
    skel_rows: np.ndarray        # (nsf, dofs/facet) global trace rows


def write_task(path, task: Task) -> None:
    sections = {
        "sub_id": np.array([task.sub_id]),
        "dim": np.array([task.dim]),
        "p": np.array([task.p]),
        "alpha": np.array([task.alpha]),
        "h_i": np.array([task.h_i]),
        "eps": np.asarray(task.eps, dtype=float),
        "load": np.frombuffer(task.load.encode(), dtype="u1").copy(),
        "load_degree": np.array([task.load_degree]),
        "store_q": np.array([int(task.store_q)]),
        "n_free_trace": np.array([task.n_free_trace]),
        "vertices": task.vertices.ravel(),
        "elements": task.elements.ravel(),
        "core_mask": task.core_mask.astype("u1"),
        "boundary_facets": task.boundary_facets.ravel(),
        "dir_verts": task.dir_verts,
        "dir_edges": task.dir_edges.ravel(),
        "skel_facets": task.skel_facets.ravel(),
        "skel_rows": task.skel_rows.ravel(),
    }
    write_bundle(path, KIND_TASK, sections)


def read_task(path) -> Task:
    _, s = read_bundle(path, KIND_TASK)
    dim = _scalar_i(s, "dim")
    nsf = s["skel_facets"].size // dim if dim else 0
    return Task(
        sub_id=_scalar_i(s, "sub_id"),
        dim=dim,
        p=_scalar_i(s, "p"),
        alpha=_scalar_f(s, "alpha"),
        h_i=_scalar_f(s, "h_i"),
        eps=s["eps"],
        load=s["load"].tobytes().decode(),
        load_degree=_scalar_i(s, "load_degree"),
        store_q=bool(_scalar_i(s, "store_q")),
        n_free_trace=_scalar_i(s, "n_free_trace"),
        vertices=s["vertices"].reshape(-1, dim),
        elements=s["elements"].reshape(-1, dim + 1),
        core_mask=s["core_mask"],
        boundary_facets=s["boundary_facets"].reshape(-1, dim),
        dir_verts=s["dir_verts"],
        dir_edges=s["dir_edges"].reshape(-1, 2),
        skel_facets=s["skel_facets"].reshape(nsf, dim),
        skel_rows=s["skel_rows"].reshape(nsf, -1) if nsf else
        s["skel_rows"].reshape(0, 0),
    )


#: timing slots recorded by the worker, in meta-file order
TIMING_FIELDS = ("blocks", "extension", "lifting", "weights", "svd",
                 "bundles", "total")


def write_meta(path, timings, peak_rss: float) -> None:
    """Worker diagnostics sidecar (wall-clock varies run to run, so it
    stays out of the checksummed, byte-reproducible result bundle)."""
    with open(path, "w", encoding="utf-8") as fh:
        for name, value in zip(TIMING_FIELDS, timings):
            fh.write(f"{name} = {float(value):.6f}\n")
        fh.write(f"peak_rss = {float(peak_rss):.0f}\n")


def read_meta(path) -> dict[str, float]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if "=" in line:
                key, value = line.split("=", 1)
                out[key.strip()] = float(value)
    return out


@dataclass
class Result:
    """Per-subdomain reduction output plus the C contribution.

    reduced[j] corresponds to eps[j] of the task.  c_rows/c_cols/c_vals
    are the subdomain's penalty contribution to the trace matrix C in
    global free numbering.
    """

    sub_id: int
    h_i: float
    m: int
    n_ext: int
    eps: np.ndarray
    sigma: np.ndarray
    trace_cols: np.ndarray
    c_rows: np.ndarray
    c_cols: np.ndarray
    c_vals: np.ndarray
    reduced: list                # of mor.ReducedBundle
    dof_coords: np.ndarray | None = None   # (m, dim), with store_q only


def write_result(path, res: Result) -> None:
    sections = {
        "sub_id": np.array([res.sub_id]),
        "h_i": np.array([res.h_i]),
        "m": np.array([res.m]),
        "n_ext": np.array([res.n_ext]),
        "eps": np.asarray(res.eps, dtype=float),
        "sigma": res.sigma,
        "trace_cols": res.trace_cols,
        "c_rows": res.c_rows,
        "c_cols": res.c_cols,
        "c_vals": res.c_vals,
    }
    if res.dof_coords is not None:
        sections["dof_coords"] = np.asarray(res.dof_coords,
                                            dtype=float).ravel()
    for j, rb in enumerate(res.reduced):
        sections[f"lam_{j}"] = rb.lam
        sections[f"Bt_{j}"] = rb.B_t.ravel()
        sections[f"f_t_{j}"] = rb.f_t
        sections[f"Kt_{j}"] = rb.K_stiff_t.ravel()
        sections[f"d_{j}"] = rb.d
        sections[f"ksig_{j}"] = np.array([rb.k_sigma])
        sections[f"keptwf_{j}"] = np.array([int(rb.kept_wf)])
        if rb.Q is not None:
            sections[f"Q_{j}"] = rb.Q.ravel()
    write_bundle(path, KIND_RESULT, sections)


def read_result(path) -> Result:
    from .mor import ReducedBundle

    _, s = read_bundle(path, KIND_RESULT)
    eps = s["eps"]
    sub_id = _scalar_i(s, "sub_id")
    h_i = _scalar_f(s, "h_i")
    m = _scalar_i(s, "m")
    n_ext = _scalar_i(s, "n_ext")
    sigma = s["sigma"]
    trace_cols = s["trace_cols"]
    k_loc = trace_cols.size
    reduced = []
    for j in range(eps.size):
        lam = s[f"lam_{j}"]
        kt = lam.size
        q = s.get(f"Q_{j}")
        reduced.append(ReducedBundle(
            i=sub_id, h=h_i, m=m, n_ext=n_ext,
            k_sigma=_scalar_i(s, f"ksig_{j}"),
            kept_wf=bool(_scalar_i(s, f"keptwf_{j}")),
            lam=lam,
            B_t=s[f"Bt_{j}"].reshape(kt, k_loc),
            f_t=s[f"f_t_{j}"],
            K_stiff_t=s[f"Kt_{j}"].reshape(kt, kt),
            d=s[f"d_{j}"],
            trace_cols=trace_cols,
            sigma=sigma,
            Q=q.reshape(m, kt) if q is not None else None,
        ))
    coords = s.get("dof_coords")
    return Result(
        sub_id=sub_id, h_i=h_i, m=m, n_ext=n_ext, eps=eps, sigma=sigma,
        trace_cols=trace_cols, c_rows=s["c_rows"], c_cols=s["c_cols"],
        c_vals=s["c_vals"], reduced=reduced,
        dof_coords=coords.reshape(m, -1) if coords is not None else None,
    )


def write_solution(path, sub_id: int, dim: int, beta: np.ndarray,
                   dof_coords: np.ndarray) -> None:
    """Per-subdomain volume coefficients with their DOF coordinates."""
    write_bundle(path, KIND_SOLUTION, {
        "sub_id": np.array([sub_id]),
        "dim": np.array([dim]),
        "beta": np.asarray(beta, dtype=float),
        "dof_coords": np.asarray(dof_coords, dtype=float).ravel(),
    })


def read_solution(path):
    _, s = read_bundle(path, KIND_SOLUTION)
    dim = _scalar_i(s, "dim")
    return (_scalar_i(s, "sub_id"), s["beta"],
            s["dof_coords"].reshape(-1, dim))
