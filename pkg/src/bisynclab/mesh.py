"""King-graph mesh fabric: root trees, local healing, visibility, tree counting."""

from __future__ import annotations

import enum
import hashlib
import json
import math
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np

CLOS_DEFAULT_NS = 50_000_000


class MeshError(Exception):
    pass


class MeshValidationError(MeshError, ValueError):
    pass


class DisconnectedError(MeshError):
    def __init__(self, root, unreachable):
        super().__init__(f"cells unreachable from {root}: {sorted(unreachable)}")
        self.unreachable = sorted(unreachable)


def edge(u: int, v: int) -> tuple[int, int]:
    if u == v:
        raise MeshValidationError(f"self-loop at {u}")
    return (u, v) if u < v else (v, u)


@dataclass(frozen=True)
class OctavalentMesh:
    n: int
    adjacency: dict  # cell -> frozenset of neighbours
    down: frozenset = frozenset()  # edges currently Down

    @property
    def cells(self) -> range:
        return range(self.n * self.n)

    def coords(self, cell: int) -> tuple[int, int]:
        return divmod(cell, self.n)

    def edges(self) -> list[tuple[int, int]]:
        return sorted({edge(u, v) for u, nb in self.adjacency.items() for v in nb})

    def is_up(self, u: int, v: int) -> bool:
        e = edge(u, v)
        return v in self.adjacency[u] and e not in self.down

    def up_edges(self) -> list[tuple[int, int]]:
        return [e for e in self.edges() if e not in self.down]

    def up_neighbors(self, cell: int) -> frozenset:
        return frozenset(v for v in self.adjacency[cell] if edge(cell, v) not in self.down)

    def link_state(self, u: int, v: int) -> str:
        return "Up" if self.is_up(u, v) else "Down"

    def with_down(self, edges: Iterable[tuple[int, int]]) -> "OctavalentMesh":
        return replace(self, down=self.down | {edge(*e) for e in edges})


def build_mesh(n: int) -> OctavalentMesh:
    if n < 2:
        raise MeshValidationError("mesh side must be at least 2")
    adj = {}
    for r in range(n):
        for c in range(n):
            nb = set()
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    if (dr or dc) and 0 <= r + dr < n and 0 <= c + dc < n:
                        nb.add((r + dr) * n + c + dc)
            adj[r * n + c] = frozenset(nb)
    return OctavalentMesh(n, adj)


def cell_id(mesh: OctavalentMesh, text: str) -> int:
    """Parse ``"7"`` or ``"r,c"``."""
    if "," in text:
        r, c = (int(x) for x in text.split(","))
        cell = r * mesh.n + c
    else:
        cell = int(text)
    if cell not in mesh.cells:
        raise MeshValidationError(f"no cell {text!r} in a {mesh.n}x{mesh.n} mesh")
    return cell


# -- Kirchhoff -------------------------------------------------------------------

def laplacian(mesh: OctavalentMesh) -> np.ndarray:
    size = mesh.n * mesh.n
    lap = np.zeros((size, size), dtype=np.int64)
    for u, v in mesh.up_edges():
        lap[u, v] -= 1
        lap[v, u] -= 1
        lap[u, u] += 1
        lap[v, v] += 1
    return lap


def bareiss_determinant(matrix) -> int:
    """Exact determinant of an integer matrix by fraction-free elimination."""
    a = [[int(x) for x in row] for row in matrix]
    n = len(a)
    if n == 0:
        return 1
    sign, prev = 1, 1
    for k in range(n - 1):
        if a[k][k] == 0:
            swap = next((i for i in range(k + 1, n) if a[i][k] != 0), None)
            if swap is None:
                return 0
            a[k], a[swap] = a[swap], a[k]
            sign = -sign
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) // prev
        prev = a[k][k]
    return sign * a[n - 1][n - 1]


def count_spanning_trees(mesh: OctavalentMesh) -> int:
    lap = laplacian(mesh)
    return bareiss_determinant(lap[1:, 1:])


# -- root trees --------------------------------------------------------------------

def root_name(cell: int) -> bytes:
    """Opaque 32-byte identifier standing in for a root's key."""
    return hashlib.sha256(f"root:{cell}".encode()).digest()


@dataclass(frozen=True)
class RootTree:
    root: int
    parent: dict  # cell -> parent cell; the root maps to None
    depth: dict
    alternates: dict  # cell -> tuple of alternate parents, best first
    detached: frozenset = frozenset()

    @property
    def name(self) -> bytes:
        return root_name(self.root)

    def children(self, cell: int) -> list[int]:
        return sorted(c for c, p in self.parent.items() if p == cell)

    def subtree(self, cell: int) -> list[int]:
        out, todo = [], [cell]
        while todo:
            c = todo.pop()
            out.append(c)
            todo.extend(self.children(c))
        return sorted(out)

    def tree_edges(self) -> set:
        return {edge(c, p) for c, p in self.parent.items() if p is not None}

    def child_of(self, e: tuple[int, int]) -> Optional[int]:
        u, v = e
        if self.parent.get(u) == v:
            return u
        if self.parent.get(v) == u:
            return v
        return None


def _bfs(mesh: OctavalentMesh, root: int) -> dict:
    depth = {root: 0}
    q = deque([root])
    while q:
        u = q.popleft()
        for v in sorted(mesh.up_neighbors(u)):
            if v not in depth:
                depth[v] = depth[u] + 1
                q.append(v)
    return depth


def plan_root_tree(mesh: OctavalentMesh, root: int) -> RootTree:
    """BFS tree; parent = shallower neighbour with the lowest id.

    Alternates are the other Up neighbours no deeper than the cell itself,
    ordered by (depth, id).
    """
    if root not in mesh.cells:
        raise MeshValidationError(f"no cell {root}")
    depth = _bfs(mesh, root)
    missing = set(mesh.cells) - set(depth)
    if missing:
        raise DisconnectedError(root, missing)
    parent, alts = {root: None}, {root: ()}
    for c in mesh.cells:
        if c == root:
            continue
        nb = mesh.up_neighbors(c)
        parent[c] = min(v for v in nb if depth[v] == depth[c] - 1)
        alts[c] = tuple(sorted(
            (v for v in nb if v != parent[c] and depth[v] <= depth[c]),
            key=lambda v: (depth[v], v),
        ))
    return RootTree(root, parent, depth, alts)


def tree_is_valid(tree: RootTree, mesh: OctavalentMesh) -> bool:
    """Parent edges are Up, acyclic, and span every attached cell."""
    attached = [c for c in mesh.cells if c not in tree.detached]
    for c in attached:
        seen = set()
        cur = c
        while cur != tree.root:
            if cur in seen or cur in tree.detached:
                return False
            seen.add(cur)
            p = tree.parent.get(cur)
            if p is None or not mesh.is_up(cur, p):
                return False
            if tree.depth[cur] != tree.depth[p] + 1:
                return False
            cur = p
    return True


def spans_component(tree: RootTree, mesh: OctavalentMesh) -> bool:
    """The attached cells are exactly the root's Up component."""
    comp = set(_bfs(mesh, tree.root))
    return tree_is_valid(tree, mesh) and comp == set(mesh.cells) - tree.detached


# -- healing -------------------------------------------------------------------------

class InfoScope(enum.Enum):
    LOCAL_ONLY = "LocalOnly"
    GLOBAL = "Global"


@dataclass(frozen=True)
class LocalView:
    """All a cell may consult when healing: its own links and its neighbours' adverts."""

    cell: int
    depth: int
    up_neighbors: frozenset
    alternates: tuple
    adverts: dict  # neighbour -> (its parent, its depth), heard over the link


def choose_alternate(view: LocalView) -> Optional[int]:
    for alt in view.alternates:
        if alt not in view.up_neighbors:
            continue
        advert = view.adverts.get(alt)
        if advert is None:
            continue
        alt_parent, alt_depth = advert
        if alt_parent == view.cell or alt_depth is None or alt_depth > view.depth:
            continue
        return alt
    return None


@dataclass(frozen=True)
class HealEvent:
    cell: int
    failed_edge: tuple[int, int]
    new_parent: Optional[int]
    slots_to_heal: Optional[int]  # None: unresolved
    info_scope: InfoScope = InfoScope.LOCAL_ONLY
    escalation: bool = False


def inject_failure(mesh: OctavalentMesh, e: tuple[int, int]) -> OctavalentMesh:
    u, v = e
    if v not in mesh.adjacency.get(u, ()):
        raise MeshValidationError(f"{edge(u, v)} is not a mesh edge")
    if not mesh.is_up(u, v):
        raise MeshValidationError(f"edge {edge(u, v)} is already Down")
    return mesh.with_down([e])


def local_view(tree: RootTree, mesh: OctavalentMesh, cell: int) -> LocalView:
    nb = mesh.up_neighbors(cell)
    adverts = {
        v: (tree.parent.get(v), None if v in tree.detached else tree.depth.get(v))
        for v in nb
    }
    return LocalView(cell, tree.depth[cell], nb, tree.alternates.get(cell, ()), adverts)


def heal(
    tree: RootTree, mesh: OctavalentMesh, failed_edge: tuple[int, int]
) -> tuple[RootTree, Optional[HealEvent]]:
    """Repair ``tree`` after ``failed_edge`` went Down in ``mesh``."""
    e = edge(*failed_edge)
    if mesh.is_up(*e):
        raise MeshValidationError(f"edge {e} is still Up")
    child = tree.child_of(e)
    if child is None:
        return tree, None
    alt = choose_alternate(local_view(tree, mesh, child))
    parent = dict(tree.parent)
    depth = dict(tree.depth)
    if alt is None:
        sub = tree.subtree(child)
        for c in sub:
            depth[c] = None
        parent[child] = None
        detached = tree.detached | set(sub)
        ev = HealEvent(child, e, None, None, InfoScope.LOCAL_ONLY, escalation=True)
        return replace(tree, parent=parent, depth=depth, detached=frozenset(detached)), ev
    shift = tree.depth[alt] + 1 - tree.depth[child]
    for c in tree.subtree(child):
        depth[c] = tree.depth[c] + shift
    parent[child] = alt
    return replace(tree, parent=parent, depth=depth), HealEvent(child, e, alt, 1)


# -- failure scripts and simulation -----------------------------------------------------

@dataclass(frozen=True)
class ScriptEvent:
    time_ns: int
    edge: tuple[int, int]
    state: str  # "Down" | "Up"


def parse_failure_script(text: str) -> list[ScriptEvent]:
    """Lines ``<time_ns> <u> <v> Down|Up``; ``#`` starts a comment."""
    out = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4 or parts[3] not in ("Down", "Up"):
            raise MeshValidationError(f"line {lineno}: expected '<time_ns> <u> <v> Down|Up'")
        t, u, v = int(parts[0]), int(parts[1]), int(parts[2])
        if t < 0:
            raise MeshValidationError(f"line {lineno}: negative time")
        out.append(ScriptEvent(t, edge(u, v), parts[3]))
    return out


def format_failure_script(events: Iterable[ScriptEvent]) -> str:
    return "".join(f"{ev.time_ns} {ev.edge[0]} {ev.edge[1]} {ev.state}\n" for ev in events)


def format_topology(mesh: OctavalentMesh) -> str:
    lines = [f"mesh {mesh.n}"]
    lines += [f"edge {u} {v} {mesh.link_state(u, v)}" for u, v in mesh.edges()]
    return "\n".join(lines) + "\n"


def parse_topology(text: str) -> OctavalentMesh:
    mesh, down = None, []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "mesh":
            mesh = build_mesh(int(parts[1]))
        elif parts[0] == "edge" and len(parts) == 4:
            if mesh is None:
                raise MeshValidationError(f"line {lineno}: edge before 'mesh <n>'")
            u, v = int(parts[1]), int(parts[2])
            if v not in mesh.adjacency.get(u, ()):
                raise MeshValidationError(f"line {lineno}: {u}-{v} is not a king-graph edge")
            if parts[3] == "Down":
                down.append((u, v))
            elif parts[3] != "Up":
                raise MeshValidationError(f"line {lineno}: state must be Up or Down")
        else:
            raise MeshValidationError(f"line {lineno}: cannot parse {line!r}")
    if mesh is None:
        raise MeshValidationError("missing 'mesh <n>' line")
    return mesh.with_down(down)


@dataclass(frozen=True)
class DownInterval:
    edge: tuple[int, int]
    cell: Optional[int]  # child cut off from the root, None for a non-tree edge
    start_ns: int
    end_ns: Optional[int]  # None: never healed

    @property
    def length(self) -> Optional[int]:
        if self.cell is None:
            return 0
        return None if self.end_ns is None else self.end_ns - self.start_ns


@dataclass
class MeshRun:
    mesh: OctavalentMesh
    tree: RootTree
    delta_ns: int
    heals: list = field(default_factory=list)
    intervals: list = field(default_factory=list)
    records: list = field(default_factory=list)
    valid_after_every_heal: bool = True

    def trace_lines(self) -> list[str]:
        return [json.dumps(r, separators=(",", ":")) for r in self.records]


def _record(time_ns, kind, e, cell=None, new_parent=None, slots=None, scope=None):
    return {
        "time_ns": time_ns,
        "kind": kind,
        "edge": list(e),
        "cell": cell,
        "new_parent": new_parent,
        "slots_to_heal": slots,
        "info_scope": scope,
    }


def simulate_failures(
    mesh: OctavalentMesh, root: int, script: Iterable[ScriptEvent], delta_ns: int
) -> MeshRun:
    """Apply a failure script; heals land on the next slot boundary after each failure.

    Failures inside one slot are healed together at the boundary, in cell-id order.
    """
    if delta_ns <= 0:
        raise MeshValidationError("slot length must be positive")
    run = MeshRun(mesh, plan_root_tree(mesh, root), delta_ns)
    pending: dict[int, list] = {}
    events = sorted(script, key=lambda ev: ev.time_ns)

    def flush(boundary):
        batch = pending.pop(boundary, [])
        batch.sort(key=lambda item: (item[1] if item[1] is not None else -1, item[0].edge))
        for ev, child in batch:
            tree, hv = heal(run.tree, run.mesh, ev.edge)
            run.tree = tree
            if hv is None:
                continue
            run.heals.append(hv)
            end = None if hv.escalation else boundary
            run.intervals.append(DownInterval(ev.edge, hv.cell, ev.time_ns, end))
            kind = "escalate" if hv.escalation else "heal"
            run.records.append(_record(boundary, kind, ev.edge, hv.cell, hv.new_parent,
                                       hv.slots_to_heal, hv.info_scope.value))
            if not tree_is_valid(run.tree, run.mesh):
                run.valid_after_every_heal = False

    for ev in events:
        for b in sorted(k for k in pending if k <= ev.time_ns):
            flush(b)
        if ev.state == "Down":
            run.mesh = inject_failure(run.mesh, ev.edge)
            child = run.tree.child_of(ev.edge)
            run.records.append(_record(ev.time_ns, "fail", ev.edge, child))
            if child is None:
                run.intervals.append(DownInterval(ev.edge, None, ev.time_ns, ev.time_ns))
            boundary = (ev.time_ns // delta_ns + 1) * delta_ns
            pending.setdefault(boundary, []).append((ev, child))
        else:
            if run.mesh.is_up(*ev.edge):
                raise MeshValidationError(f"edge {ev.edge} is already Up")
            run.mesh = replace(run.mesh, down=run.mesh.down - {ev.edge})
            run.records.append(_record(ev.time_ns, "restore", ev.edge))
    for b in sorted(pending):
        flush(b)
    return run


# -- observer visibility -----------------------------------------------------------------

@dataclass(frozen=True)
class FailureVisibility:
    edge: tuple[int, int]
    cell: Optional[int]
    down_ns: Optional[int]  # None: permanent
    visible: bool  # every observer phase sees at least one disconnected poll
    min_polls: Optional[int]  # None: unbounded
    max_polls: Optional[int]
    sampled_min: Optional[int]
    sampled_max: Optional[int]


@dataclass(frozen=True)
class VisibilityReport:
    poll_period_ns: int
    source: str
    entries: tuple[FailureVisibility, ...]

    @property
    def any_visible(self) -> bool:
        return any(e.visible for e in self.entries)

    @property
    def all_invisible(self) -> bool:
        return not self.any_visible


def _polls_in(start: int, length: int, period: int, phase: int) -> int:
    """Poll instants ``phase + j*period`` inside [start, start+length)."""
    if length <= 0:
        return 0
    first = phase + math.ceil((start - phase) / period) * period
    if first >= start + length:
        return 0
    return (start + length - 1 - first) // period + 1


def _sample_phases(start: int, length: int, period: int, grid: int = 16) -> list[int]:
    phases = {(period * j) // grid for j in range(grid)}
    phases.add((start + length) % period)  # a poll lands exactly at the heal
    phases.add(start % period)  # a poll lands exactly at the failure
    return sorted(phases)


def _visibility(intervals, poll_period: int, source: str) -> VisibilityReport:
    if poll_period <= 0:
        raise MeshValidationError("poll period must be positive")
    out = []
    for iv in intervals:
        L = iv.length
        if L is None:
            out.append(FailureVisibility(iv.edge, iv.cell, None, True, None, None, None, None))
            continue
        lo, hi = L // poll_period, -(-L // poll_period)
        samples = [_polls_in(iv.start_ns, L, poll_period, ph)
                   for ph in _sample_phases(iv.start_ns, L, poll_period)]
        out.append(FailureVisibility(iv.edge, iv.cell, L, lo >= 1, lo, hi, min(samples), max(samples)))
    return VisibilityReport(poll_period, source, tuple(out))


def observer_visibility(run: Union[MeshRun, Iterable[DownInterval]], poll_period: int) -> VisibilityReport:
    intervals = run.intervals if isinstance(run, MeshRun) else list(run)
    return _visibility(intervals, poll_period, "local-heal")


def clos_baseline(
    reconvergence_delay: int = CLOS_DEFAULT_NS,
    run: Union[MeshRun, Iterable[DownInterval]] = (),
    poll_period: int = 1_000_000,
) -> VisibilityReport:
    """Same failures, but every healable one stays down for ``reconvergence_delay``."""
    if reconvergence_delay < 0:
        raise MeshValidationError("reconvergence delay must be non-negative")
    intervals = run.intervals if isinstance(run, MeshRun) else list(run)
    shifted = [
        iv if iv.cell is None or iv.end_ns is None
        else replace(iv, end_ns=iv.start_ns + reconvergence_delay)
        for iv in intervals
    ]
    return _visibility(shifted, poll_period, f"reconvergence-{reconvergence_delay}ns")


def load_failure_script(path: Union[str, Path]) -> list[ScriptEvent]:
    return parse_failure_script(Path(path).read_text())
