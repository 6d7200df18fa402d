"""Quadrilateral meshes, node sets, and the plain-text mesh format.

Meshes are immutable after construction and safe to share across workers.
Connectivity is counter-clockwise; every element must have a positive
Jacobian determinant at the 2x2 Gauss points, which is checked up front.

File format (whitespace-separated ASCII)::

    PFMESH 1
    nodes <count>
    <x> <y>          (one line per node)
    quads <count>
    <n0> <n1> <n2> <n3>
    nodeset <name> <count>
    <index> ...      (any line breaks)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, MeshFormatError

GAUSS_1D = 1.0 / np.sqrt(3.0)
# 2x2 Gauss points on the reference square, unit weights.
GAUSS_POINTS = np.array([
    [-GAUSS_1D, -GAUSS_1D],
    [GAUSS_1D, -GAUSS_1D],
    [GAUSS_1D, GAUSS_1D],
    [-GAUSS_1D, GAUSS_1D],
])


def shape_functions(xi: np.ndarray) -> np.ndarray:
    """Bilinear shape functions at points xi of shape (..., 2)."""
    a, b = xi[..., 0], xi[..., 1]
    return 0.25 * np.stack([
        (1 - a) * (1 - b),
        (1 + a) * (1 - b),
        (1 + a) * (1 + b),
        (1 - a) * (1 + b),
    ], axis=-1)


def shape_gradients(xi: np.ndarray) -> np.ndarray:
    """Reference-coordinate gradients dN/dxi, shape (..., 4, 2)."""
    a, b = xi[..., 0], xi[..., 1]
    da = 0.25 * np.stack([-(1 - b), (1 - b), (1 + b), -(1 + b)], axis=-1)
    db = 0.25 * np.stack([-(1 - a), -(1 + a), (1 + a), (1 - a)], axis=-1)
    return np.stack([da, db], axis=-1)


@dataclass(frozen=True)
class Mesh:
    """Node coordinates [mm], quad connectivity, and named node sets."""

    coords: np.ndarray
    quads: np.ndarray
    node_sets: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        coords = np.ascontiguousarray(np.asarray(self.coords, dtype=float))
        quads = np.ascontiguousarray(np.asarray(self.quads, dtype=np.int64))
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "quads", quads)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise MeshFormatError(f"coords must be (n, 2), got {coords.shape}")
        if quads.ndim != 2 or quads.shape[1] != 4:
            raise MeshFormatError(f"quads must be (m, 4), got {quads.shape}")
        n = coords.shape[0]
        if quads.size and (quads.min() < 0 or quads.max() >= n):
            raise MeshFormatError("quad connectivity references nodes out of range")
        sets = {}
        for name, idx in self.node_sets.items():
            idx = np.asarray(idx, dtype=np.int64)
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise MeshFormatError(f"node set {name!r} references nodes out of range")
            if len(np.unique(idx)) != len(idx):
                raise MeshFormatError(f"node set {name!r} has duplicate entries")
            sets[name] = idx
        object.__setattr__(self, "node_sets", sets)
        self._check_jacobians()

    def _check_jacobians(self):
        dn = shape_gradients(GAUSS_POINTS)  # (4qp, 4, 2)
        xe = self.coords[self.quads]  # (m, 4, 2)
        jac = np.einsum("qnj,eni->eqij", dn, xe)
        det = jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0]
        if det.size and det.min() <= 0.0:
            bad = int(np.argwhere(det <= 0.0)[0][0])
            raise MeshFormatError(
                f"element {bad} has non-positive Jacobian (check node order)")

    @property
    def n_nodes(self) -> int:
        return self.coords.shape[0]

    @property
    def n_elements(self) -> int:
        return self.quads.shape[0]

    def node_set(self, name: str) -> np.ndarray:
        try:
            return self.node_sets[name]
        except KeyError:
            raise ConfigError(
                f"unknown node set {name!r}; available: {sorted(self.node_sets)}"
            ) from None


def build_structured_mesh(nx: int, ny: int, Lx: float, Ly: float) -> Mesh:
    """Regular nx-by-ny quad grid on [0, Lx] x [0, Ly].

    Provides canonical node sets: the four edges ("left", "right",
    "bottom", "top", corners included), the individual corners, and
    "corners" with all four.
    """
    if nx < 1 or ny < 1:
        raise ConfigError(f"element counts must be >= 1, got nx={nx}, ny={ny}")
    if Lx <= 0.0 or Ly <= 0.0:
        raise ConfigError(f"domain lengths must be positive, got {Lx}, {Ly}")
    xs = np.linspace(0.0, Lx, nx + 1)
    ys = np.linspace(0.0, Ly, ny + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    coords = np.column_stack([gx.ravel(), gy.ravel()])

    def nid(i, j):
        return j * (nx + 1) + i

    quads = np.empty((nx * ny, 4), dtype=np.int64)
    k = 0
    for j in range(ny):
        for i in range(nx):
            quads[k] = (nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1))
            k += 1

    ii = np.arange(nx + 1)
    jj = np.arange(ny + 1)
    sets = {
        "left": nid(0, jj),
        "right": nid(nx, jj),
        "bottom": nid(ii, 0),
        "top": nid(ii, ny),
        "corner_bl": np.array([nid(0, 0)]),
        "corner_br": np.array([nid(nx, 0)]),
        "corner_tl": np.array([nid(0, ny)]),
        "corner_tr": np.array([nid(nx, ny)]),
    }
    sets["corners"] = np.array([nid(0, 0), nid(nx, 0), nid(0, ny), nid(nx, ny)])
    return Mesh(coords, quads, sets)


def write_mesh(mesh: Mesh, path) -> None:
    lines = ["PFMESH 1", f"nodes {mesh.n_nodes}"]
    for x, y in mesh.coords:
        lines.append(f"{float(x)!r} {float(y)!r}")
    lines.append(f"quads {mesh.n_elements}")
    for quad in mesh.quads:
        lines.append(" ".join(str(int(n)) for n in quad))
    for name in sorted(mesh.node_sets):
        idx = mesh.node_sets[name]
        lines.append(f"nodeset {name} {len(idx)}")
        lines.append(" ".join(str(int(n)) for n in idx))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    with open(path) as fh:
        tokens = []
        for lineno, line in enumerate(fh, start=1):
            for tok in line.split():
                tokens.append((tok, lineno))
    pos = 0

    def take(expect=None):
        nonlocal pos
        if pos >= len(tokens):
            raise MeshFormatError(f"{path}: unexpected end of file")
        tok, lineno = tokens[pos]
        pos += 1
        if expect is not None and tok != expect:
            raise MeshFormatError(f"{path}:{lineno}: expected {expect!r}, got {tok!r}")
        return tok, lineno

    def take_int():
        tok, lineno = take()
        try:
            return int(tok)
        except ValueError:
            raise MeshFormatError(f"{path}:{lineno}: expected integer, got {tok!r}") from None

    def take_float():
        tok, lineno = take()
        try:
            return float(tok)
        except ValueError:
            raise MeshFormatError(f"{path}:{lineno}: expected number, got {tok!r}") from None

    take("PFMESH")
    version, lineno = take()
    if version != "1":
        raise MeshFormatError(f"{path}:{lineno}: unsupported mesh format version {version!r}")
    take("nodes")
    n_nodes = take_int()
    coords = np.empty((n_nodes, 2))
    for i in range(n_nodes):
        coords[i, 0] = take_float()
        coords[i, 1] = take_float()
    take("quads")
    n_quads = take_int()
    quads = np.empty((n_quads, 4), dtype=np.int64)
    for i in range(n_quads):
        for j in range(4):
            quads[i, j] = take_int()
    sets = {}
    while pos < len(tokens):
        take("nodeset")
        name, _ = take()
        count = take_int()
        sets[name] = np.array([take_int() for _ in range(count)], dtype=np.int64)
    return Mesh(coords, quads, sets)
