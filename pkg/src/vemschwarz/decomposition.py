"""Subdomains, their overlapping extensions and the coarse skeleton."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.spatial import ConvexHull, QhullError

from . import graphpart
from .mesh import PolygonalMesh

CORNERS = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


class PartitionError(ValueError):
    pass


def _diameter(points):
    if len(points) < 3:
        d = points[:, None, :] - points[None, :, :]
        return float(np.sqrt((d ** 2).sum(-1)).max(initial=0.0))
    try:
        points = points[ConvexHull(points).vertices]
    except QhullError:
        pass
    d = points[:, None, :] - points[None, :, :]
    return float(np.sqrt((d ** 2).sum(-1)).max())


@dataclass
class NonOverlappingPartition:
    mesh: PolygonalMesh
    cell_part: np.ndarray
    n_parts: int
    kind: str = "graph"

    def __post_init__(self):
        self.cell_part = np.asarray(self.cell_part, dtype=np.int64)
        self.cell_part.setflags(write=False)
        if self.cell_part.shape != (self.mesh.n_cells,):
            raise PartitionError("one subdomain id per cell required")
        if self.cell_part.min() < 0 or self.cell_part.max() >= self.n_parts:
            raise PartitionError("subdomain id out of range")

    @cached_property
    def part_cells(self):
        order = np.argsort(self.cell_part, kind="stable")
        bounds = np.searchsorted(self.cell_part[order], np.arange(self.n_parts + 1))
        return [order[bounds[p]:bounds[p + 1]] for p in range(self.n_parts)]

    @cached_property
    def sizes(self):
        return np.bincount(self.cell_part, minlength=self.n_parts)

    @property
    def balance(self):
        return float(self.sizes.max() / self.sizes.mean())

    def is_connected(self, p):
        cells = self.part_cells[p]
        A = self.mesh.cell_adjacency[cells][:, cells]
        return cells.size > 0 and connected_components(A, directed=False)[0] == 1

    @cached_property
    def part_diameters(self):
        verts = self.mesh.vertices
        C = self.mesh.cell_vertex_incidence
        out = np.empty(self.n_parts)
        for p, cells in enumerate(self.part_cells):
            vid = np.unique(C[cells].indices)
            out[p] = _diameter(verts[vid])
        return out

    @property
    def H(self):
        return float(self.part_diameters.max())

    @cached_property
    def adjacency(self):
        """Subdomains sharing at least one fine vertex."""
        S = self.vertex_parts
        G = (S.T @ S).tocsr()
        G.setdiag(0)
        G.eliminate_zeros()
        return G

    @cached_property
    def vertex_parts(self):
        """Sparse (n_vertices, n_parts) 0/1 matrix: vertex lies in closure of part."""
        C = self.mesh.cell_vertex_incidence
        P = sp.csr_matrix((np.ones(self.mesh.n_cells), (np.arange(self.mesh.n_cells), self.cell_part)),
                          shape=(self.mesh.n_cells, self.n_parts))
        S = (C.T @ P).tocsr()
        S.data[:] = 1.0
        return S


def partition_structured(mesh: PolygonalMesh, m: int) -> NonOverlappingPartition:
    """``m x m`` square subdomains of a structured mesh."""
    n = mesh.structured_n
    if n is None:
        raise PartitionError("structured partition needs a structured mesh")
    if m < 1 or n % m:
        raise PartitionError(f"m={m} does not divide cells-per-side n={n}")
    c = mesh.cell_centroids
    ix = np.minimum(np.floor(c[:, 0] * m).astype(np.int64), m - 1)
    iy = np.minimum(np.floor(c[:, 1] * m).astype(np.int64), m - 1)
    return NonOverlappingPartition(mesh, ix + m * iy, m * m, kind="structured")


def partition_graph(mesh: PolygonalMesh, n_parts: int, rng_seed: int = 0) -> NonOverlappingPartition:
    """Balanced, connected partition of the edge-adjacency graph of the cells."""
    if n_parts > mesh.n_cells:
        raise PartitionError(f"n_parts={n_parts} exceeds cell count {mesh.n_cells}")
    parts = graphpart.partition(mesh.cell_adjacency, n_parts, seed=rng_seed)
    return NonOverlappingPartition(mesh, parts, n_parts, kind="graph")


def cell_layers(mesh: PolygonalMesh, seed_cells, layers):
    """Breadth-first layer index (0 in the seed set) over vertex-sharing cells; -1 beyond."""
    layer = -np.ones(mesh.n_cells, dtype=np.int64)
    layer[seed_cells] = 0
    G = mesh.cell_vertex_adjacency
    front = np.zeros(mesh.n_cells, dtype=bool)
    front[seed_cells] = True
    for ell in range(1, layers + 1):
        reach = (G @ front.astype(float)) > 0
        new = reach & (layer < 0)
        if not new.any():
            break
        layer[new] = ell
        front = new
    return layer


@dataclass
class OverlappingPartition:
    """Overlapped subdomains ``D_i'`` and their local Dirichlet dof sets."""

    partition: NonOverlappingPartition
    layers: int
    k: int
    cell_layer: list          # per subdomain, layer of every cell (-1 outside)
    local_dofs: list          # per subdomain, global dofs of the local Dirichlet problem
    support_dofs: list        # per subdomain, all dofs touched by D_i' cells

    @property
    def n_parts(self):
        return self.partition.n_parts

    @property
    def delta(self):
        return self.layers * self.partition.mesh.h

    def cells(self, i):
        return np.flatnonzero(self.cell_layer[i] >= 0)

    def measured_overlap(self, i):
        """Largest distance from a cell centroid of D_i' back to D_i."""
        from scipy.spatial import cKDTree
        mesh = self.partition.mesh
        inner = self.partition.part_cells[i]
        ring = np.flatnonzero(self.cell_layer[i] > 0)
        if ring.size == 0:
            return 0.0
        C = mesh.cell_vertex_incidence
        tree = cKDTree(mesh.vertices[np.unique(C[inner].indices)])
        d, _ = tree.query(mesh.vertices[np.unique(C[ring].indices)])
        return float(d.max())


def extend_overlap(partition: NonOverlappingPartition, layers: int, space) -> OverlappingPartition:
    """Grow each subdomain by ``layers`` rings of vertex-sharing cells.

    ``space`` is the :class:`~vemschwarz.vem.VEMSpace` that defines the dofs.
    """
    if layers < 1:
        raise PartitionError("layers must be >= 1")
    mesh = partition.mesh
    inc = space.cell_dof_incidence
    per_dof = np.asarray(inc.sum(axis=0)).ravel()
    bnd = space.boundary_dofs
    cl, loc, sup = [], [], []
    for p in range(partition.n_parts):
        layer = cell_layers(mesh, partition.part_cells[p], layers)
        inside = (layer >= 0).astype(float)
        cnt = inc.T @ inside
        cl.append(layer)
        sup.append(np.flatnonzero(cnt > 0))
        loc.append(np.flatnonzero((cnt == per_dof) & ~bnd))
    covered = np.zeros(space.n_dofs, dtype=bool)
    for d in loc:
        covered[d] = True
    if not covered[~bnd].all():
        raise PartitionError("some free dofs are not interior to any overlapped subdomain")
    return OverlappingPartition(partition, layers, space.k, cl, loc, sup)


@dataclass
class Chain:
    """Ordered fine-vertex path between two coarse vertices."""

    vertices: np.ndarray     # fine vertex ids, first/last are coarse vertices
    edges: np.ndarray        # fine edge ids, len(vertices) - 1
    ends: tuple              # (coarse index at vertices[0], coarse index at vertices[-1])
    parts: tuple             # adjacent subdomains; one entry for boundary chains

    @property
    def on_boundary(self):
        return len(self.parts) == 1


@dataclass
class CoarseSkeleton:
    partition: NonOverlappingPartition
    coarse_vertices: np.ndarray        # fine vertex ids of the generators y_i
    chains: list
    omega_parts: list                  # subdomains whose closure contains y_i
    skeleton_vertex: np.ndarray        # fine vertex lies on an interface or on the boundary
    extra_vertices: list = field(default_factory=list)

    @property
    def n_coarse(self):
        return len(self.coarse_vertices)

    @property
    def coarse_points(self):
        return self.partition.mesh.vertices[self.coarse_vertices]

    @cached_property
    def on_boundary(self):
        return self.partition.mesh.boundary_vertex[self.coarse_vertices]

    @property
    def n_interior(self):
        return int((~self.on_boundary).sum())

    def omega_cells(self, i):
        return np.flatnonzero(np.isin(self.partition.cell_part, self.omega_parts[i]))

    def omega_mask(self, i):
        return np.isin(self.partition.cell_part, self.omega_parts[i])

    def is_floating(self, i):
        mesh = self.partition.mesh
        cells = self.omega_cells(i)
        vid = np.unique(mesh.cell_vertex_incidence[cells].indices)
        return not mesh.boundary_vertex[vid].any()

    def chains_at(self, i):
        return [c for c in self.chains if i in c.ends]

    def generators_of_part(self, p):
        """Coarse vertices lying in the closure of subdomain ``p``."""
        return [i for i, parts in enumerate(self.omega_parts) if p in parts]

    def omega_K(self, p):
        """Union of the neighbourhoods of the generators in the closure of ``p``."""
        parts = set()
        for i in self.generators_of_part(p):
            parts.update(int(q) for q in self.omega_parts[i])
        return np.array(sorted(parts), dtype=np.int64)


def _skeleton_graph(partition):
    mesh = partition.mesh
    ec = mesh.edge_cells
    part = partition.cell_part
    interior = ~mesh.boundary_edge
    iface = np.zeros(mesh.n_edges, dtype=bool)
    iface[interior] = part[ec[interior, 0]] != part[ec[interior, 1]]
    return iface | mesh.boundary_edge, iface


def _walk_chains(mesh, sk_edges, is_coarse):
    """Split the skeleton graph at coarse vertices into chains (and bare loops)."""
    eid = np.flatnonzero(sk_edges)
    ev = mesh.edges[eid]
    nV = mesh.n_vertices
    inc = sp.csr_matrix((np.concatenate([eid, eid]),
                         (np.concatenate([ev[:, 0], ev[:, 1]]), np.concatenate([ev[:, 1], ev[:, 0]]))),
                        shape=(nV, nV))
    inc.sort_indices()
    used = np.zeros(mesh.n_edges, dtype=bool)
    chains, loops = [], []

    def step(v):
        nbrs = inc.indices[inc.indptr[v]:inc.indptr[v + 1]]
        edges = inc.data[inc.indptr[v]:inc.indptr[v + 1]].astype(np.int64)
        for u, e in zip(nbrs, edges):
            if not used[e]:
                return int(u), int(e)
        return None, None

    for start in np.flatnonzero(is_coarse):
        while True:
            u, e = step(start)
            if u is None:
                break
            vs, es = [int(start)], []
            v = int(start)
            while True:
                used[e] = True
                vs.append(u)
                es.append(e)
                v = u
                if is_coarse[v]:
                    break
                u, e = step(v)
                if u is None:
                    break
            chains.append((np.array(vs), np.array(es)))
    # components of the skeleton with no coarse vertex are closed loops
    for e0 in eid:
        if used[e0]:
            continue
        a, b = mesh.edges[e0]
        vs, es = [int(a)], []
        v, u, e = int(a), int(b), int(e0)
        while True:
            used[e] = True
            es.append(e)
            if u == vs[0]:
                break
            vs.append(u)
            v = u
            u, e = step(v)
            if u is None:
                break
        loops.append(np.array(vs))
    return chains, loops


def extract_skeleton(partition: NonOverlappingPartition) -> CoarseSkeleton:
    """Coarse vertices, interface chains and neighbourhoods of a partition."""
    mesh = partition.mesh
    S = partition.vertex_parts
    n_sub = np.diff(S.indptr)
    sk_edges, _ = _skeleton_graph(partition)
    ev = mesh.edges[sk_edges]
    degree = np.bincount(ev.ravel(), minlength=mesh.n_vertices)
    on_sk = degree > 0
    bv = mesh.boundary_vertex
    is_coarse = (n_sub >= 3) | ((n_sub >= 2) & bv) | (on_sk & (degree != 2))
    corner_ids = []
    for c in CORNERS:
        d = np.linalg.norm(mesh.vertices - c, axis=1)
        j = int(np.argmin(d))
        if d[j] < 1e-9:
            corner_ids.append(j)
    is_coarse[corner_ids] = True
    extra = []
    for _ in range(100):
        chains, loops = _walk_chains(mesh, sk_edges, is_coarse)
        changed = False
        for vs in loops:
            picks = [vs[0], vs[len(vs) // 2]]
            is_coarse[picks] = True
            extra += [int(p) for p in picks]
            changed = True
        for vs, es in chains:
            if vs[0] == vs[-1]:
                mid = vs[len(vs) // 2]
                if not is_coarse[mid]:
                    is_coarse[mid] = True
                    extra.append(int(mid))
                    changed = True
        if not changed:
            break
    cv = np.flatnonzero(is_coarse)
    cindex = -np.ones(mesh.n_vertices, dtype=np.int64)
    cindex[cv] = np.arange(len(cv))
    ec = mesh.edge_cells
    part = partition.cell_part
    out = []
    for vs, es in chains:
        e = es[0]
        cells = ec[e]
        parts = tuple(sorted({int(part[c]) for c in cells if c >= 0}))
        out.append(Chain(vs, es, (int(cindex[vs[0]]), int(cindex[vs[-1]])), parts))
    omega = [S[v].indices.astype(np.int64) for v in cv]
    omega = [np.sort(o) for o in omega]
    return CoarseSkeleton(partition, cv, out, omega, on_sk, extra)
