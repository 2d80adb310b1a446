"""Polygonal meshes of the unit square and piecewise-constant coefficients."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.spatial import Delaunay, cKDTree

from . import _kernels

FORMAT_VERSION = 1
MERGE_TOL = 1e-10


class MeshError(ValueError):
    pass


class MeshFormatError(ValueError):
    pass


def _polygon_area(xy):
    x, y = xy[:, 0], xy[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


class PolygonalMesh:
    """Conforming polygonal mesh with counter-clockwise cells.

    Cells are stored compressed: the vertex loop of cell ``c`` is
    ``cell_vertices[cell_ptr[c]:cell_ptr[c + 1]]`` and its ``k``-th edge joins
    local vertices ``k`` and ``k + 1``.
    """

    def __init__(self, vertices, cells, family="polygonal", structured_n=None):
        self.vertices = np.ascontiguousarray(vertices, dtype=float).reshape(-1, 2)
        cells = [np.asarray(c, dtype=np.int64) for c in cells]
        sizes = np.array([len(c) for c in cells], dtype=np.int64)
        if len(cells) == 0:
            raise MeshError("mesh has no cells")
        if sizes.min() < 3:
            raise MeshError("cells need at least 3 vertices")
        self.cell_ptr = np.concatenate([[0], np.cumsum(sizes)])
        self.cell_vertices = np.concatenate(cells)
        if self.cell_vertices.min() < 0 or self.cell_vertices.max() >= len(self.vertices):
            raise MeshError("cell references a missing vertex")
        self.family = family
        self.structured_n = structured_n
        self._build_topology()
        for arr in (self.vertices, self.cell_ptr, self.cell_vertices, self.edges,
                    self.edge_cells, self.cell_edges):
            arr.setflags(write=False)

    # -- topology -----------------------------------------------------------
    def _build_topology(self):
        cv = self.cell_vertices
        nxt = np.arange(1, cv.size + 1)
        nxt[self.cell_ptr[1:] - 1] = self.cell_ptr[:-1]
        self._next = nxt
        a, b = cv, cv[nxt]
        key = np.stack([np.minimum(a, b), np.maximum(a, b)], axis=1)
        edges, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        inv = inv.reshape(-1)
        if (edges[:, 0] == edges[:, 1]).any():
            raise MeshError("degenerate edge (repeated vertex in a cell loop)")
        if counts.max() > 2:
            raise MeshError("non-conforming mesh: an edge has more than two cells")
        self.edges = edges
        self.cell_edges = inv
        owner = np.repeat(np.arange(self.n_cells), self.cell_sizes)
        ec = -np.ones((len(edges), 2), dtype=np.int64)
        order = np.argsort(inv, kind="stable")
        se, so = inv[order], owner[order]
        firsts = np.ones(len(se), dtype=bool)
        firsts[1:] = se[1:] != se[:-1]
        ec[se[firsts], 0] = so[firsts]
        ec[se[~firsts], 1] = so[~firsts]
        self.edge_cells = ec
        self.boundary_edge = ec[:, 1] < 0
        bv = np.zeros(len(self.vertices), dtype=bool)
        bv[edges[self.boundary_edge].ravel()] = True
        self.boundary_vertex = bv
        used = np.zeros(len(self.vertices), dtype=bool)
        used[cv] = True
        if not used.all():
            raise MeshError("mesh has vertices not referenced by any cell")

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_cells(self):
        return self.cell_ptr.shape[0] - 1

    @property
    def n_edges(self):
        return self.edges.shape[0]

    @cached_property
    def cell_sizes(self):
        return np.diff(self.cell_ptr)

    def cell(self, c):
        return self.cell_vertices[self.cell_ptr[c]:self.cell_ptr[c + 1]]

    @property
    def cells(self):
        return [self.cell(c) for c in range(self.n_cells)]

    @cached_property
    def size_groups(self):
        """Map from vertex count to the (sorted) ids of cells with that count."""
        sizes = self.cell_sizes
        return {int(n): np.flatnonzero(sizes == n) for n in np.unique(sizes)}

    def group_arrays(self, cells):
        """Vertex ids and edge ids of equal-size cells as dense (c, n) arrays."""
        n = int(self.cell_sizes[cells[0]])
        idx = self.cell_ptr[cells][:, None] + np.arange(n)[None, :]
        return self.cell_vertices[idx], self.cell_edges[idx]

    # -- geometry -----------------------------------------------------------
    @cached_property
    def _shoelace(self):
        # coordinates relative to each cell's first vertex to avoid cancellation
        origin = np.repeat(self.vertices[self.cell_vertices[self.cell_ptr[:-1]]], self.cell_sizes, axis=0)
        xy = self.vertices[self.cell_vertices] - origin
        nx = self.vertices[self.cell_vertices[self._next]] - origin
        cross = xy[:, 0] * nx[:, 1] - nx[:, 0] * xy[:, 1]
        return xy, nx, cross

    @cached_property
    def cell_areas(self):
        return 0.5 * np.add.reduceat(self._shoelace[2], self.cell_ptr[:-1])

    @cached_property
    def cell_centroids(self):
        xy, nx, cross = self._shoelace
        cx = np.add.reduceat((xy[:, 0] + nx[:, 0]) * cross, self.cell_ptr[:-1])
        cy = np.add.reduceat((xy[:, 1] + nx[:, 1]) * cross, self.cell_ptr[:-1])
        a6 = 6.0 * self.cell_areas
        origin = self.vertices[self.cell_vertices[self.cell_ptr[:-1]]]
        return origin + np.stack([cx / a6, cy / a6], axis=1)

    @cached_property
    def cell_diameters(self):
        out = np.empty(self.n_cells)
        for n, cells in self.size_groups.items():
            vid, _ = self.group_arrays(cells)
            p = self.vertices[vid]
            d = np.linalg.norm(p[:, :, None, :] - p[:, None, :, :], axis=-1)
            out[cells] = d.reshape(len(cells), -1).max(axis=1)
        return out

    @property
    def h(self):
        return float(self.cell_diameters.max())

    @cached_property
    def edge_midpoints(self):
        return 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])

    @cached_property
    def edge_lengths(self):
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    # -- adjacency ----------------------------------------------------------
    @cached_property
    def cell_vertex_incidence(self):
        """Sparse (n_cells, n_vertices) 0/1 incidence matrix."""
        owner = np.repeat(np.arange(self.n_cells), self.cell_sizes)
        return sp.csr_matrix((np.ones(owner.size), (owner, self.cell_vertices)),
                             shape=(self.n_cells, self.n_vertices))

    @cached_property
    def cell_adjacency(self):
        """Cells sharing an edge, as a symmetric CSR pattern."""
        inner = self.edge_cells[~self.boundary_edge]
        r = np.concatenate([inner[:, 0], inner[:, 1]])
        c = np.concatenate([inner[:, 1], inner[:, 0]])
        return sp.csr_matrix((np.ones(r.size), (r, c)), shape=(self.n_cells,) * 2)

    @cached_property
    def cell_vertex_adjacency(self):
        """Cells sharing at least one vertex (diagonal excluded)."""
        C = self.cell_vertex_incidence
        G = (C @ C.T).tocsr()
        G.setdiag(0)
        G.eliminate_zeros()
        G.data[:] = 1.0
        return G

    # -- checks -------------------------------------------------------------
    def check(self, area=1.0, rtol=1e-10):
        """Raise :class:`MeshError` unless the mesh is valid and covers ``area``."""
        if (self.cell_areas <= 0).any():
            bad = np.flatnonzero(self.cell_areas <= 0)
            raise MeshError(f"cells with non-positive area (not CCW?): {bad[:10].tolist()}")
        total = self.cell_areas.sum()
        if abs(total - area) > rtol * area:
            raise MeshError(f"cell areas sum to {total!r}, expected {area!r}")
        return True

    def euler_characteristic(self):
        return self.n_vertices - self.n_edges + self.n_cells

    def __repr__(self):
        return (f"PolygonalMesh(family={self.family!r}, cells={self.n_cells}, "
                f"vertices={self.n_vertices}, h={self.h:.4g})")


def mesh_from_polygons(polys, family="polygonal", tol=MERGE_TOL, min_area=1e-14):
    """Merge coincident points of independently built polygons into a mesh."""
    polys = [np.asarray(p, dtype=float) for p in polys if len(p) >= 3]
    sizes = np.array([len(p) for p in polys])
    pts = np.concatenate(polys)
    tree = cKDTree(pts)
    pairs = tree.query_pairs(tol, output_type="ndarray")
    parent = np.arange(len(pts))
    if len(pairs):
        g = sp.csr_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(len(pts),) * 2)
        _, parent = sp.csgraph.connected_components(g, directed=False)
    uniq, first_idx, remap = np.unique(parent, return_index=True, return_inverse=True)
    verts = pts[first_idx]
    cells = []
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    for k in range(len(polys)):
        loop = remap[offsets[k]:offsets[k + 1]]
        keep = loop != np.roll(loop, 1)
        loop = loop[keep]
        if len(loop) >= 3 and _polygon_area(verts[loop]) > min_area:
            cells.append(loop)
    used = np.unique(np.concatenate(cells))
    renum = -np.ones(len(verts), dtype=np.int64)
    renum[used] = np.arange(len(used))
    return PolygonalMesh(verts[used], [renum[c] for c in cells], family=family)


def build_triangular(n: int) -> PolygonalMesh:
    """Structured right-triangle mesh with ``2 n^2`` cells."""
    if n < 1:
        raise ValueError("n must be >= 1")
    x = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(x, x, indexing="xy")
    verts = np.stack([X.ravel(), Y.ravel()], axis=1)
    cells = []
    for j in range(n):
        for i in range(n):
            v00 = j * (n + 1) + i
            v10, v01, v11 = v00 + 1, v00 + n + 1, v00 + n + 2
            cells.append((v00, v10, v11))
            cells.append((v00, v11, v01))
    return PolygonalMesh(verts, cells, family="triangular", structured_n=n)


def build_quadrilateral(n: int) -> PolygonalMesh:
    if n < 1:
        raise ValueError("n must be >= 1")
    x = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(x, x, indexing="xy")
    verts = np.stack([X.ravel(), Y.ravel()], axis=1)
    cells = []
    for j in range(n):
        for i in range(n):
            v00 = j * (n + 1) + i
            cells.append((v00, v00 + 1, v00 + n + 2, v00 + n + 1))
    return PolygonalMesh(verts, cells, family="quadrilateral", structured_n=n)


def _clip_box(poly):
    out = poly
    for axis, bound, sign in ((0, 0.0, -1), (0, 1.0, 1), (1, 0.0, -1), (1, 1.0, 1)):
        if len(out) == 0:
            break
        f = sign * (out[:, axis] - bound)
        res = []
        m = len(out)
        for i in range(m):
            j = (i + 1) % m
            if f[i] <= 0:
                res.append(out[i])
            if (f[i] <= 0) != (f[j] <= 0):
                t = f[i] / (f[i] - f[j])
                p = out[i] + t * (out[j] - out[i])
                p[axis] = bound
                res.append(p)
        out = np.array(res).reshape(-1, 2)
    return out


def _hex_polygons(ny):
    dy = 1.0 / ny
    R = dy / 1.5
    a = np.sqrt(3.0) * R
    half = 0.5 * a
    # keep both vertical cuts a safe distance from vertical hex edges
    r = (1.0 / half) % 1.0
    s_left = (1.0 - r) / 2.0 if r < 0.5 else 1.0 - r / 2.0
    x0 = -s_left * half
    ang = np.deg2rad(30.0 + 60.0 * np.arange(6))
    shape = np.stack([R * np.cos(ang), R * np.sin(ang)], axis=1)
    polys = []
    for j in range(ny + 1):
        y = j * dy
        shift = x0 + (j % 2) * half
        i_lo = int(np.floor((-a - shift) / a))
        i_hi = int(np.ceil((1.0 + a - shift) / a))
        for i in range(i_lo, i_hi + 1):
            cx = shift + i * a
            hexagon = shape + (cx, y)
            inside = (hexagon[:, 0] >= 0).all() and (hexagon[:, 0] <= 1).all() \
                and (hexagon[:, 1] >= 0).all() and (hexagon[:, 1] <= 1).all()
            poly = hexagon if inside else _clip_box(hexagon)
            if len(poly) >= 3 and _polygon_area(poly) > 1e-3 * a * R:
                polys.append(poly)
    return polys


def build_hexagonal(target_cells: int) -> PolygonalMesh:
    """Regular hexagon tiling clipped to the unit square, about ``target_cells`` cells."""
    if target_cells < 1:
        raise ValueError("target_cells must be >= 1")
    guess = max(1, int(round(np.sqrt(2.0 * target_cells / np.sqrt(3.0)))))
    best = None
    for ny in range(max(1, guess - 3), guess + 4):
        polys = _hex_polygons(ny)
        err = abs(len(polys) - target_cells)
        if best is None or err < best[0]:
            best = (err, polys)
    return mesh_from_polygons(best[1], family="hexagonal")


def _delaunay_neighbours(seeds):
    n = len(seeds)
    if n > 3:
        try:
            indptr, indices = Delaunay(seeds).vertex_neighbor_vertices
            return indptr.astype(np.int64), indices.astype(np.int64)
        except Exception:  # collinear or otherwise degenerate generators
            pass
    idx = [np.array([j for j in range(n) if j != i], dtype=np.int64) for i in range(n)]
    indptr = np.concatenate([[0], np.cumsum([len(i) for i in idx])]).astype(np.int64)
    indices = np.concatenate(idx) if n > 1 else np.zeros(0, dtype=np.int64)
    return indptr, indices


def clipped_voronoi(seeds):
    """Voronoi cells of ``seeds`` intersected with the unit square."""
    seeds = np.ascontiguousarray(seeds, dtype=float)
    tree = cKDTree(seeds)
    dup = tree.query_pairs(1e-12, output_type="ndarray")
    if len(dup):
        raise MeshError(f"duplicate Voronoi generators: {sorted(set(dup.ravel().tolist()))}")
    indptr, indices = _delaunay_neighbours(seeds)
    counts, out = _kernels.clip_voronoi_cells(seeds, indptr, indices)
    return [out[i, :counts[i]].copy() for i in range(len(seeds))]


def _polygon_centroid(poly):
    x, y = poly[:, 0], poly[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cr = x * yn - xn * y
    a = 0.5 * cr.sum()
    return np.array([((x + xn) * cr).sum(), ((y + yn) * cr).sum()]) / (6.0 * a)


def build_voronoi(seed_count: int, lloyd_iterations: int = 3, rng_seed: int = 0,
                  seeds=None) -> PolygonalMesh:
    """Clipped Voronoi mesh of random generators relaxed by Lloyd iterations."""
    if seeds is None:
        if seed_count < 1:
            raise ValueError("seed_count must be >= 1")
        seeds = np.random.default_rng(rng_seed).random((seed_count, 2))
    seeds = np.asarray(seeds, dtype=float)
    for _ in range(lloyd_iterations):
        polys = clipped_voronoi(seeds)
        seeds = np.array([_polygon_centroid(p) if len(p) >= 3 else s
                          for p, s in zip(polys, seeds)])
    polys = clipped_voronoi(seeds)
    empty = [i for i, p in enumerate(polys) if len(p) < 3 or _polygon_area(p) <= 1e-14]
    if empty:
        raise MeshError(f"generators with empty Voronoi cells: {empty[:20]}")
    mesh = mesh_from_polygons(polys, family="voronoi")
    mesh.seeds = seeds
    return mesh


def build_mesh(family, **params) -> PolygonalMesh:
    """Dispatch on a family name as used in experiment configs."""
    if family == "triangular":
        return build_triangular(int(params["n"]))
    if family == "quadrilateral":
        return build_quadrilateral(int(params["n"]))
    if family == "hexagonal":
        return build_hexagonal(int(params["target_cells"]))
    if family == "voronoi":
        return build_voronoi(int(params["seed_count"]), int(params.get("lloyd_iterations", 3)),
                             int(params.get("rng_seed", 0)))
    raise ValueError(f"unknown mesh family {family!r}")


# -- coefficients -------------------------------------------------------------

@dataclass(frozen=True)
class InclusionSpec:
    """High-value regions: rectangles ``(x0, y0, x1, y1)`` and thick polylines."""

    rectangles: tuple = ()
    polylines: tuple = ()  # ((points...), width)

    def is_empty(self):
        return not self.rectangles and not self.polylines

    def contains(self, points):
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        inside = np.zeros(len(points), dtype=bool)
        for x0, y0, x1, y1 in self.rectangles:
            inside |= ((points[:, 0] >= x0) & (points[:, 0] <= x1)
                       & (points[:, 1] >= y0) & (points[:, 1] <= y1))
        for pts, width in self.polylines:
            pts = np.asarray(pts, dtype=float)
            for a, b in zip(pts[:-1], pts[1:]):
                d = b - a
                t = np.clip(((points - a) @ d) / max(d @ d, 1e-300), 0.0, 1.0)
                dist = np.linalg.norm(points - (a + t[:, None] * d), axis=1)
                inside |= dist <= 0.5 * width
        return inside

    def to_dict(self):
        return {"rectangles": [list(r) for r in self.rectangles],
                "polylines": [{"points": [list(p) for p in pts], "width": w}
                              for pts, w in self.polylines]}

    @classmethod
    def from_dict(cls, d):
        rects = tuple(tuple(float(v) for v in r) for r in d.get("rectangles", ()))
        lines = tuple((tuple(tuple(float(v) for v in p) for p in pl["points"]), float(pl["width"]))
                      for pl in d.get("polylines", ()))
        return cls(rects, lines)


@dataclass(frozen=True)
class CoefficientField:
    values: np.ndarray
    eta: float = 1.0

    @property
    def contrast(self):
        return float(self.values.max() / self.values.min())

    def scaled(self, c):
        return CoefficientField(self.values * c, self.eta)


def paint_coefficient(mesh: PolygonalMesh, spec: InclusionSpec, eta: float) -> CoefficientField:
    """Cells whose centroid lies in a region get ``eta``; the background is 1."""
    if eta < 1:
        raise ValueError("eta must be >= 1")
    kappa = np.ones(mesh.n_cells)
    if not spec.is_empty():
        mask = spec.contains(mesh.cell_centroids)
        kappa = np.maximum(kappa, np.where(mask, float(eta), 1.0))
    kappa.setflags(write=False)
    return CoefficientField(kappa, float(eta))


def channel_layout(name="channels", h=1.0 / 80):
    """Named inclusion geometries used by the experiment harness.

    ``"channels"``: five long horizontal channels of width ``2h`` that stay
    off the outer boundary, plus short vertical bars between them.
    """
    if name == "none":
        return InclusionSpec()
    if name == "channels":
        w = 2.0 * h
        ys = (0.11, 0.29, 0.47, 0.65, 0.83)
        rects = [(0.06, y - w / 2, 0.94, y + w / 2) for y in ys]
        for k, x in enumerate((0.17, 0.37, 0.57, 0.77)):
            y_lo = ys[k % 2 * 2] + 2 * w
            rects.append((x - w / 2, y_lo, x + w / 2, y_lo + 0.1))
        return InclusionSpec(tuple(rects))
    raise ValueError(f"unknown layout {name!r}")


# -- I/O ------------------------------------------------------------------------

def mesh_to_json(mesh: PolygonalMesh, field: CoefficientField | None = None, subdomain=None) -> str:
    doc = {
        "format": FORMAT_VERSION,
        "family": mesh.family,
        "structured_n": mesh.structured_n,
        "vertices": mesh.vertices.tolist(),
        "cells": [c.tolist() for c in mesh.cells],
        "kappa": None if field is None else np.asarray(field.values).tolist(),
    }
    if field is not None:
        doc["eta"] = field.eta
    if subdomain is not None:
        doc["subdomain"] = np.asarray(subdomain).astype(int).tolist()
    return json.dumps(doc)


def mesh_from_json(text):
    """Inverse of :func:`mesh_to_json`; returns ``(mesh, field, subdomain)``."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[:exc.pos].encode("utf-8"))
        raise MeshFormatError(f"malformed mesh document at byte offset {offset}: {exc.msg}") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_VERSION:
        raise MeshFormatError(f"unsupported mesh document (format {doc.get('format') if isinstance(doc, dict) else None!r})")
    try:
        mesh = PolygonalMesh(np.array(doc["vertices"], dtype=float), doc["cells"],
                             family=doc.get("family", "polygonal"),
                             structured_n=doc.get("structured_n"))
    except (KeyError, TypeError, ValueError) as exc:
        raise MeshFormatError(f"invalid mesh document: {exc}") from exc
    field = None
    if doc.get("kappa") is not None:
        kappa = np.array(doc["kappa"], dtype=float)
        if kappa.shape != (mesh.n_cells,):
            raise MeshFormatError("kappa length does not match cell count")
        field = CoefficientField(kappa, float(doc.get("eta", kappa.max() / kappa.min())))
    sub = doc.get("subdomain")
    return mesh, field, None if sub is None else np.array(sub, dtype=np.int64)
