"""Mesh partitioning, overlapped equal-size submeshes and stitching.

The partitioner is a deterministic region grower: ``k`` seeds are chosen
by farthest-point sampling on the vertex graph and parts grow breadth
first, always extending the currently smallest part.  Parts are then
expanded ring by ring into their neighbors until every submesh holds the
same number of vertices ``n_d``; per-submesh reconstructions are merged
back with degree-weighted averaging.
"""

from __future__ import annotations

import csv
import heapq
import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph


class PartitionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Partition:
    """Per-vertex part ids in ``[0, k)``."""

    assignment: np.ndarray
    k: int

    def sizes(self):
        return np.bincount(self.assignment, minlength=self.k)

    def members(self, part):
        return np.flatnonzero(self.assignment == part)


@dataclass(frozen=True, eq=False)
class Submesh:
    """An overlapped block of the mesh.

    Attributes
    ----------
    part : int
        Id of the part the block was grown from.
    global_indices : ndarray, shape (n_d,)
        Global vertex ids; the part's own vertices come first.
    core_size : int
        Number of leading entries of ``global_indices`` owned by ``part``.
    local_faces : ndarray, shape (f, 3)
        Faces whose three vertices all belong to the block, in local ids.
    adjacency : scipy.sparse.csr_matrix
        Binary local adjacency (the global edge set restricted to the block).
    """

    part: int
    global_indices: np.ndarray
    core_size: int
    local_faces: np.ndarray
    adjacency: sparse.csr_matrix

    @property
    def size(self):
        return self.global_indices.shape[0]

    @property
    def local_degrees(self):
        return np.diff(self.adjacency.indptr)


@dataclass(frozen=True)
class SubmeshOrder:
    sequence: tuple


def _validate_k(n, k):
    if k < 1:
        raise PartitionError(f"k must be at least 1, got {k}")
    if k > n / 4:
        raise PartitionError(f"k={k} too large for {n} vertices (k <= n/4 required)")


def _farthest_point_seeds(adj, k, rng):
    n = adj.shape[0]
    seeds = [int(rng.integers(n))]
    dmin = csgraph.shortest_path(adj, unweighted=True, indices=seeds[0])
    for _ in range(1, k):
        # unreachable vertices (other components) have infinite distance and win first
        s = int(np.argmax(dmin))
        if dmin[s] == 0:
            raise PartitionError("not enough distinct vertices to place seeds")
        seeds.append(s)
        dmin = np.minimum(dmin, csgraph.shortest_path(adj, unweighted=True, indices=s))
    return seeds


def partition_mesh(mesh, edges, k, seed=0):
    """Split the vertices into ``k`` connected, balanced parts.

    Parameters
    ----------
    mesh : Mesh
    edges : EdgeSet
    k : int
        Number of parts, ``1 <= k <= n / 4``.
    seed : int
        Chooses the first farthest-point seed.

    Returns
    -------
    Partition
    """
    n = mesh.n_vertices
    _validate_k(n, k)
    adj = edges.adjacency()
    n_comp, _ = csgraph.connected_components(adj, directed=False)
    if n_comp > k:
        raise PartitionError(f"mesh has {n_comp} connected components, more than k={k}")
    rng = np.random.default_rng(seed)
    seeds = _farthest_point_seeds(adj, k, rng)

    indptr, indices = edges.indptr, edges.indices
    assignment = np.full(n, -1, dtype=np.int64)
    frontiers = []
    heap = []
    for p, s in enumerate(seeds):
        assignment[s] = p
        frontiers.append(deque(indices[indptr[s]:indptr[s + 1]].tolist()))
        heap.append((1, p))
    heapq.heapify(heap)
    while heap:
        size, p = heapq.heappop(heap)
        front = frontiers[p]
        while front and assignment[front[0]] >= 0:
            front.popleft()
        if not front:
            continue
        v = front.popleft()
        assignment[v] = p
        nb = indices[indptr[v]:indptr[v + 1]]
        front.extend(nb[assignment[nb] < 0].tolist())
        heapq.heappush(heap, (size + 1, p))
    part = Partition(assignment, k)
    _rebalance(part, edges, math.ceil(n / k) * 1.1)
    assignment.flags.writeable = False
    return part


def _removable(v, donor, assignment, edges):
    """True when moving ``v`` out of ``donor`` keeps the donor connected locally."""
    indptr, indices = edges.indptr, edges.indices
    nb = indices[indptr[v]:indptr[v + 1]]
    same = nb[assignment[nb] == donor]
    if same.shape[0] <= 1:
        return same.shape[0] == 1
    same_set = set(same.tolist())
    start = same[0]
    seen = {int(start)}
    stack = [int(start)]
    while stack:
        u = stack.pop()
        for w in indices[indptr[u]:indptr[u + 1]].tolist():
            if w in same_set and w not in seen:
                seen.add(w)
                stack.append(w)
    return len(seen) == len(same_set)


def _part_graph(a, k, edges):
    rows = np.repeat(np.arange(a.shape[0]), edges.degrees)
    pa, pb = a[rows], a[edges.indices]
    cut = pa != pb
    g = sparse.csr_matrix((np.ones(cut.sum()), (pa[cut], pb[cut])), shape=(k, k))
    g.sum_duplicates()
    g.sort_indices()
    return g


def _move_one(a, src, dst, edges):
    """Move one vertex of ``src`` adjacent to ``dst`` into ``dst`` if it keeps ``src`` connected."""
    indptr, indices = edges.indptr, edges.indices
    for v in np.flatnonzero(a == src).tolist():
        nb = indices[indptr[v]:indptr[v + 1]]
        if np.any(a[nb] == dst) and _removable(v, src, a, edges):
            a[v] = dst
            return True
    return False


def _rebalance(part, edges, cap, max_rounds=None):
    """Shift vertices along part-graph paths from oversized parts to small ones.

    Every hop of a path donor -> ... -> receiver passes one boundary vertex
    on, so only the two end parts change size.
    """
    a = part.assignment
    k = part.k
    sizes = np.bincount(a, minlength=k)
    max_rounds = a.shape[0] if max_rounds is None else max_rounds
    blocked = set()
    failed = set()  # part-graph hops that could not pass a vertex on
    for _ in range(max_rounds):
        over = [p for p in np.argsort(-sizes, kind="stable").tolist()
                if sizes[p] > cap and p not in blocked]
        if not over:
            break
        donor = over[0]
        g = _part_graph(a, k, edges)
        prev = {donor: None}
        q = deque([donor])
        target = None
        while q and target is None:
            u = q.popleft()
            for w in g.indices[g.indptr[u]:g.indptr[u + 1]].tolist():
                if w in prev or (u, w) in failed:
                    continue
                prev[w] = u
                if sizes[w] + 1 <= cap:
                    target = w
                    break
                q.append(w)
        if target is None:
            blocked.add(donor)
            continue
        path = [target]
        while prev[path[-1]] is not None:
            path.append(prev[path[-1]])
        path.reverse()
        snapshot = a.copy()
        hop = 0
        while hop < len(path) - 1 and _move_one(a, path[hop], path[hop + 1], edges):
            hop += 1
        if hop == len(path) - 1:
            sizes[donor] -= 1
            sizes[target] += 1
            failed.clear()
            blocked.clear()
        else:
            a[:] = snapshot
            failed.add((path[hop], path[hop + 1]))


def part_centers(edges, partition):
    """Per part, the vertex farthest (in hops) from the part boundary.

    Depends only on the assignment, so a partition reloaded from CSV gives
    the same centers.  Ties go to the smallest vertex id.
    """
    n = edges.n_vertices
    a = partition.assignment
    rows = np.repeat(np.arange(n), edges.degrees)
    cols = edges.indices
    cut = a[rows] != a[cols]
    boundary = np.zeros(n, dtype=bool)
    boundary[rows[cut]] = True
    # parts without a boundary (k = 1 or a whole component) fall back to their min id
    sizes = partition.sizes()
    has_b = np.bincount(a[boundary], minlength=partition.k) > 0
    src = boundary | (~has_b[a] & (np.arange(n) == _first_index(a, partition.k)[a]))
    keep = ~cut
    r, c = rows[keep], cols[keep]
    hub = n
    r = np.concatenate([r, np.full(src.sum(), hub), np.flatnonzero(src)])
    c = np.concatenate([c, np.flatnonzero(src), np.full(src.sum(), hub)])
    g = sparse.csr_matrix((np.ones(r.shape[0]), (r, c)), shape=(n + 1, n + 1))
    dist = csgraph.shortest_path(g, unweighted=True, indices=hub)[:n]
    centers = np.empty(partition.k, dtype=np.int64)
    order = np.lexsort((np.arange(n), -dist, a))
    starts = np.searchsorted(a[order], np.arange(partition.k))
    for p in range(partition.k):
        if sizes[p] == 0:
            raise PartitionError(f"part {p} is empty")
        centers[p] = order[starts[p]]
    return centers


def _first_index(a, k):
    first = np.full(k, -1, dtype=np.int64)
    idx = np.arange(a.shape[0])[::-1]
    first[a[::-1]] = idx
    return first


def _bfs_order(adj_csr, members_mask, start):
    """Breadth-first order of the component of ``start`` inside ``members_mask``."""
    indptr, indices = adj_csr.indptr, adj_csr.indices
    seen = {int(start)}
    out = [int(start)]
    q = deque(out)
    while q:
        u = q.popleft()
        for w in indices[indptr[u]:indptr[u + 1]].tolist():
            if members_mask[w] and w not in seen:
                seen.add(w)
                out.append(w)
                q.append(w)
    return out


def _ordered_part(adj, mask, center, part_vertices):
    order = _bfs_order(adj, mask, center)
    if len(order) < part_vertices.shape[0]:
        # disconnected part: continue from the smallest unvisited id
        seen = np.zeros(mask.shape[0], dtype=bool)
        seen[order] = True
        for v in part_vertices.tolist():
            if not seen[v]:
                more = _bfs_order(adj, mask & ~seen, v)
                seen[more] = True
                order.extend(more)
    return order


def _make_submesh(mesh, adj, part, gidx, core_size):
    n = mesh.n_vertices
    local = np.full(n, -1, dtype=np.int64)
    local[gidx] = np.arange(gidx.shape[0])
    lf = local[mesh.faces]
    lf = lf[(lf >= 0).all(axis=1)]
    sub = adj[gidx][:, gidx].tocsr()
    sub.sort_indices()
    return Submesh(int(part), gidx, int(core_size), lf, sub)


def target_size(partition, growth):
    """Common submesh size ``floor(growth * largest part)``."""
    if growth < 1.0:
        raise PartitionError(f"growth must be >= 1.0, got {growth}")
    return int(math.floor(growth * partition.sizes().max() + 1e-9))


def expand_overlaps(mesh, edges, partition, growth=1.15):
    """Grow every part into an overlapped submesh of common size ``n_d``.

    Each part is extended by breadth-first rings of neighboring vertices
    until it reaches ``n_d = floor(growth * max part size)``.  The ring
    that overshoots is trimmed by ascending global id.  Within a submesh
    the part's own vertices come first, in breadth-first order from the
    part center, followed by the rings.

    Returns
    -------
    list of Submesh
        Indexed by part id.
    """
    n = mesh.n_vertices
    n_d = target_size(partition, growth)
    if n_d > n:
        raise PartitionError(f"submesh size {n_d} exceeds vertex count {n}")
    adj = edges.adjacency()
    indptr, indices = edges.indptr, edges.indices
    centers = part_centers(edges, partition)
    a = partition.assignment
    out = []
    for p in range(partition.k):
        part_vertices = np.flatnonzero(a == p)
        mask = a == p
        order = _ordered_part(adj, mask, centers[p], part_vertices)
        members = mask.copy()
        ring = part_vertices
        while len(order) < n_d:
            nb = np.concatenate([indices[indptr[u]:indptr[u + 1]] for u in ring.tolist()])
            ring = np.unique(nb[~members[nb]])
            if ring.shape[0] == 0:
                # component exhausted: pad with the smallest unused ids
                ring = np.flatnonzero(~members)
            take = ring[:n_d - len(order)]
            members[take] = True
            order.extend(take.tolist())
        out.append(_make_submesh(mesh, adj, p, np.asarray(order, dtype=np.int64),
                                 part_vertices.shape[0]))
    return out


def raw_submeshes(mesh, edges, partition):
    """Non-overlapping blocks, one per part, of unequal sizes."""
    adj = edges.adjacency()
    centers = part_centers(edges, partition)
    a = partition.assignment
    out = []
    for p in range(partition.k):
        part_vertices = np.flatnonzero(a == p)
        order = _ordered_part(adj, a == p, centers[p], part_vertices)
        out.append(_make_submesh(mesh, adj, p, np.asarray(order, dtype=np.int64),
                                 part_vertices.shape[0]))
    return out


def submesh_adjacency(submeshes, n):
    """Boolean (k, k) matrix: blocks sharing at least one vertex."""
    k = len(submeshes)
    rows = np.concatenate([np.full(s.size, i) for i, s in enumerate(submeshes)])
    cols = np.concatenate([s.global_indices for s in submeshes])
    m = sparse.csr_matrix((np.ones(rows.shape[0]), (rows, cols)), shape=(k, n))
    g = (m @ m.T).tocsr()
    g.setdiag(0)
    g.eliminate_zeros()
    g.sort_indices()
    return g


def order_submeshes(submeshes, seed=0, start=None, n=None):
    """Processing order: a seeded start block, then breadth-first over shared vertices.

    Neighbors are visited by ascending id; when a component of the block
    graph is exhausted the smallest unvisited id starts the next one.
    """
    k = len(submeshes)
    if k == 0:
        raise PartitionError("no submeshes to order")
    if start is None:
        start = int(np.random.default_rng(seed).integers(k))
    if n is None:
        n = int(max(s.global_indices.max() for s in submeshes)) + 1
    g = submesh_adjacency(submeshes, n)
    visited = np.zeros(k, dtype=bool)
    seq = []
    for root in [start] + list(range(k)):
        if visited[root]:
            continue
        visited[root] = True
        q = deque([root])
        while q:
            u = q.popleft()
            seq.append(u)
            for w in g.indices[g.indptr[u]:g.indptr[u + 1]].tolist():
                if not visited[w]:
                    visited[w] = True
                    q.append(w)
    return SubmeshOrder(tuple(seq))


def membership_counts(submeshes, n):
    counts = np.zeros(n, dtype=np.int64)
    for s in submeshes:
        counts[s.global_indices] += 1
    return counts


def reconstruct_weighted(results, n, mode="weighted"):
    """Merge per-block reconstructions into one coordinate array.

    Parameters
    ----------
    results : iterable of (Submesh, ndarray of shape (n_d, 3))
    n : int
        Global vertex count.
    mode : {"weighted", "simple"}
        ``"weighted"`` weights each copy by the vertex degree inside its
        block; ``"simple"`` averages copies uniformly.

    Raises
    ------
    PartitionError
        If some vertex is not covered by any block.
    """
    if mode not in ("weighted", "simple"):
        raise ValueError(f"unknown stitching mode {mode!r}")
    acc = np.zeros((n, 3))
    wsum = np.zeros(n)
    for sub, local in results:
        local = np.asarray(local, dtype=np.float64)
        w = sub.local_degrees.astype(np.float64) if mode == "weighted" else np.ones(sub.size)
        np.add.at(acc, sub.global_indices, w[:, None] * local)
        np.add.at(wsum, sub.global_indices, w)
    missing = np.flatnonzero(wsum == 0)
    if missing.shape[0]:
        shown = ", ".join(str(i) for i in missing[:20])
        more = "" if missing.shape[0] <= 20 else f" (+{missing.shape[0] - 20} more)"
        raise PartitionError(f"vertices not covered by any submesh: {shown}{more}")
    return acc / wsum[:, None]


def save_partition_csv(partition, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["vertex_id", "part_id"])
        for v, p in enumerate(partition.assignment.tolist()):
            w.writerow([v, p])


def load_partition_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["vertex_id", "part_id"]:
        raise PartitionError(f"{path}: expected header vertex_id,part_id")
    data = np.array([[int(a), int(b)] for a, b in rows[1:]], dtype=np.int64).reshape(-1, 2)
    assignment = np.full(data.shape[0], -1, dtype=np.int64)
    assignment[data[:, 0]] = data[:, 1]
    if np.any(assignment < 0):
        raise PartitionError(f"{path}: vertex ids are not a permutation of 0..n-1")
    return Partition(assignment, int(assignment.max()) + 1)
