"""Planar object shapes: extents, area and signed distance in the object frame.

Object frames sit at the bottom-centre of the shape; +z points up.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

GEOMETRIES = ("disk", "box", "capsule")


@dataclass(frozen=True)
class ObjectSpec:
    object_id: str
    geometry: str
    dims: tuple[float, ...]
    density_scale: float = 1.0
    category: str = ""

    def __post_init__(self):
        if self.geometry not in GEOMETRIES:
            raise ValueError(f"{self.object_id}: unknown geometry {self.geometry!r}")
        want = {"disk": 1, "box": 2, "capsule": 2}[self.geometry]
        if len(self.dims) != want:
            raise ValueError(f"{self.object_id}: {self.geometry} needs {want} dims, got {len(self.dims)}")
        if any(d <= 0 for d in self.dims):
            raise ValueError(f"{self.object_id}: dimensions must be positive")
        if not 0.1 <= self.density_scale <= 50.0:
            raise ValueError(f"{self.object_id}: density scale {self.density_scale} outside [0.1, 50]")

    @property
    def half_extents(self) -> tuple[float, float]:
        """(half width, half height) of the axis-aligned shape."""
        if self.geometry == "disk":
            r = self.dims[0]
            return r, r
        if self.geometry == "box":
            return self.dims[0] / 2, self.dims[1] / 2
        r, length = self.dims
        return length / 2 + r, r

    @property
    def area(self) -> float:
        if self.geometry == "disk":
            return math.pi * self.dims[0] ** 2
        if self.geometry == "box":
            return self.dims[0] * self.dims[1]
        r, length = self.dims
        return math.pi * r * r + 2 * r * length

    def sdf_local(self, px: float, pz: float) -> float:
        """Signed distance of a point given relative to the shape centre (unrotated)."""
        if self.geometry == "disk":
            return math.hypot(px, pz) - self.dims[0]
        if self.geometry == "box":
            hw, hh = self.dims[0] / 2, self.dims[1] / 2
            qx, qz = abs(px) - hw, abs(pz) - hh
            outside = math.hypot(max(qx, 0.0), max(qz, 0.0))
            return outside + min(max(qx, qz), 0.0)
        r, length = self.dims
        cx = min(max(px, -length / 2), length / 2)
        return math.hypot(px - cx, pz) - r

    def to_dict(self) -> dict:
        return {
            "object_id": self.object_id,
            "geometry": self.geometry,
            "dims": list(self.dims),
            "density_scale": self.density_scale,
            "category": self.category,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectSpec":
        return cls(
            object_id=d["object_id"],
            geometry=d["geometry"],
            dims=tuple(float(v) for v in d["dims"]),
            density_scale=float(d.get("density_scale", 1.0)),
            category=d.get("category", ""),
        )


def rotate(x: float, z: float, th: float) -> tuple[float, float]:
    c, s = math.cos(th), math.sin(th)
    return c * x - s * z, s * x + c * z


def object_center(obj: ObjectSpec, x: float, z: float, th: float) -> tuple[float, float]:
    _, hh = obj.half_extents
    ox, oz = rotate(0.0, hh, th)
    return x + ox, z + oz


def sdf_world(obj: ObjectSpec, pose: tuple[float, float, float], px: float, pz: float) -> float:
    cx, cz = object_center(obj, *pose)
    lx, lz = rotate(px - cx, pz - cz, -pose[2])
    return obj.sdf_local(lx, lz)
