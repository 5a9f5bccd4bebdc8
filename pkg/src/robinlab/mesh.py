"""Domains and uniform P1 meshes for intervals and axis-aligned rectangles."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class Domain:
    """An interval [a, b] or a rectangle [0, lx] x [0, ly]."""

    kind: str
    a: float = 0.0
    b: float = 1.0
    lx: float = 1.0
    ly: float = 1.0

    def __post_init__(self):
        if self.kind == "interval":
            if not (math.isfinite(self.a) and math.isfinite(self.b)):
                raise MeshError(f"interval bounds must be finite, got ({self.a}, {self.b})")
            if not self.b > self.a:
                raise MeshError(f"interval needs b > a, got ({self.a}, {self.b})")
        elif self.kind == "rectangle":
            if not (math.isfinite(self.lx) and math.isfinite(self.ly)):
                raise MeshError("rectangle sides must be finite")
            if not (self.lx > 0 and self.ly > 0):
                raise MeshError(f"degenerate rectangle sides ({self.lx}, {self.ly})")
        else:
            raise MeshError(f"unknown domain kind {self.kind!r}")

    @classmethod
    def interval(cls, a, b):
        return cls("interval", a=float(a), b=float(b))

    @classmethod
    def rectangle(cls, lx, ly):
        return cls("rectangle", lx=float(lx), ly=float(ly))

    @property
    def dimension(self) -> int:
        return 1 if self.kind == "interval" else 2

    @property
    def volume(self) -> float:
        if self.kind == "interval":
            return self.b - self.a
        return self.lx * self.ly

    @property
    def boundary_measure(self) -> float:
        # counting measure of the two endpoints in 1D
        if self.kind == "interval":
            return 2.0
        return 2.0 * (self.lx + self.ly)


def _frozen(arr):
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming simplicial mesh.

    nodes has shape (n_nodes, N), cells (n_cells, N+1), facets (n_facets, N)
    with facet_measures the surface measure of each boundary facet.
    """

    domain: Domain
    nodes: np.ndarray
    cells: np.ndarray
    facets: np.ndarray
    facet_measures: np.ndarray
    h: float
    _boundary: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        for name in ("nodes", "cells", "facets", "facet_measures"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        bnd = np.zeros(len(self.nodes), dtype=bool)
        bnd[np.unique(self.facets)] = True
        object.__setattr__(self, "_boundary", _frozen(bnd))
        n = len(self.nodes)
        if self.cells.min() < 0 or self.cells.max() >= n or self.facets.max() >= n:
            raise MeshError("cell or facet references a node out of range")
        if not self.h > 0:
            raise MeshError("mesh size must be positive")

    @property
    def dimension(self) -> int:
        return self.domain.dimension

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def boundary_mask(self) -> np.ndarray:
        return self._boundary

    @property
    def boundary_nodes(self) -> np.ndarray:
        return np.flatnonzero(self._boundary)

    @property
    def interior_nodes(self) -> np.ndarray:
        return np.flatnonzero(~self._boundary)

    def cell_measures(self) -> np.ndarray:
        x = self.nodes[self.cells]
        if self.dimension == 1:
            return x[:, 1, 0] - x[:, 0, 0]
        e1 = x[:, 1] - x[:, 0]
        e2 = x[:, 2] - x[:, 0]
        return 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def summary(self) -> dict:
        return {
            "dimension": self.dimension,
            "n_nodes": self.n_nodes,
            "n_cells": self.n_cells,
            "h": self.h,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary())


def build_interval_mesh(a, b, n) -> Mesh:
    """Uniform mesh of [a, b] with n segments."""
    if int(n) != n or n < 2:
        raise MeshError(f"need an integer n >= 2 segments, got {n!r}")
    n = int(n)
    dom = Domain.interval(a, b)
    x = np.linspace(dom.a, dom.b, n + 1)
    cells = np.column_stack([np.arange(n), np.arange(1, n + 1)])
    facets = np.array([[0], [n]])
    return Mesh(dom, x[:, None], cells, facets, np.ones(2), (dom.b - dom.a) / n)


def build_rectangle_mesh(lx, ly, nx, ny) -> Mesh:
    """Tensor grid on [0,lx]x[0,ly], each square cut along its (i,j)-(i+1,j+1) diagonal."""
    for v, name in ((nx, "nx"), (ny, "ny")):
        if int(v) != v or v < 2:
            raise MeshError(f"need an integer {name} >= 2, got {v!r}")
    nx, ny = int(nx), int(ny)
    dom = Domain.rectangle(lx, ly)
    xs = np.linspace(0.0, dom.lx, nx + 1)
    ys = np.linspace(0.0, dom.ly, ny + 1)
    X, Y = np.meshgrid(xs, ys)  # row j is y_j
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def idx(i, j):
        return i + j * (nx + 1)

    I, J = np.meshgrid(np.arange(nx), np.arange(ny))
    I, J = I.ravel(), J.ravel()
    p00, p10, p11, p01 = idx(I, J), idx(I + 1, J), idx(I + 1, J + 1), idx(I, J + 1)
    lower = np.column_stack([p00, p10, p11])
    upper = np.column_stack([p00, p11, p01])
    cells = np.empty((2 * len(I), 3), dtype=np.int64)
    cells[0::2] = lower
    cells[1::2] = upper

    ix = np.arange(nx)
    iy = np.arange(ny)
    bottom = np.column_stack([idx(ix, 0), idx(ix + 1, 0)])
    right = np.column_stack([idx(nx, iy), idx(nx, iy + 1)])
    top = np.column_stack([idx(ix + 1, ny), idx(ix, ny)])
    left = np.column_stack([idx(0, iy + 1), idx(0, iy)])
    facets = np.vstack([bottom, right, top, left])
    hx, hy = dom.lx / nx, dom.ly / ny
    meas = np.concatenate([np.full(nx, hx), np.full(ny, hy), np.full(nx, hx), np.full(ny, hy)])
    return Mesh(dom, nodes, cells, facets, meas, math.sqrt(hx * hx + hy * hy))


def build_mesh(domain: Domain, resolution) -> Mesh:
    """Build from a domain and either n (interval) or (nx, ny) (rectangle)."""
    if domain.kind == "interval":
        return build_interval_mesh(domain.a, domain.b, resolution)
    nx, ny = resolution
    return build_rectangle_mesh(domain.lx, domain.ly, nx, ny)
