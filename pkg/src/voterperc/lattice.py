"""Lattice geometry primitives: sites, windows, annuli, adjacency, paths.

Conventions used throughout the package: ``|x|`` written without a subscript
is the l-infinity norm, ``|x|_1`` the l1 norm.  ``B(c, L)`` denotes the
closed l-infinity ball, ``B_1(c, L)`` the closed l1 ball, ``S(c, L)`` the
l-infinity sphere.  Two sites are *neighbours* when their l1 distance is 1
(2d of them) and *-neighbours when their l-infinity distance is 1
(3^d - 1 of them).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator, Sequence

Site = tuple[int, ...]

# Coordinates are 64-bit signed in practice; anything past this bound is a
# bug in the caller, not a simulation outcome.
COORD_BOUND = 1 << 40


class Connectivity(Enum):
    NEAREST = "nearest"
    STAR = "star"


def as_connectivity(mode: "Connectivity | str") -> Connectivity:
    if isinstance(mode, Connectivity):
        return mode
    try:
        return Connectivity(mode)
    except ValueError:
        raise ValueError(f"unknown connectivity mode {mode!r}; expected 'nearest' or 'star'")


def check_site(p: Sequence[int], d: int | None = None) -> Site:
    """Validate a lattice site and return it as a tuple of ints."""
    for c in p:
        if int(c) != c:
            raise ValueError(f"coordinate {c!r} is not an integer")
    t = tuple(int(c) for c in p)
    if d is not None and len(t) != d:
        raise ValueError(f"site {t} has dimension {len(t)}, expected {d}")
    if not t:
        raise ValueError("site must have at least one coordinate")
    for c in t:
        if abs(c) > COORD_BOUND:
            raise OverflowError(f"coordinate {c} exceeds safe bound 2**40")
    return t


def linf(p: Sequence[int]) -> int:
    return max(abs(int(c)) for c in p)


def l1(p: Sequence[int]) -> int:
    return sum(abs(int(c)) for c in p)


def site_sub(a: Site, b: Site) -> Site:
    return tuple(x - y for x, y in zip(a, b))


def site_add(a: Site, b: Site) -> Site:
    return tuple(x + y for x, y in zip(a, b))


def dist_linf(a: Site, b: Site) -> int:
    return max(abs(x - y) for x, y in zip(a, b))


def dist_l1(a: Site, b: Site) -> int:
    return sum(abs(x - y) for x, y in zip(a, b))


@dataclass(frozen=True)
class Window:
    """A finite ball of sites: ``{x : |x - center| <= radius}`` in the given norm."""

    center: Site
    radius: int
    norm: str = "linf"

    def __post_init__(self):
        object.__setattr__(self, "center", check_site(self.center))
        if self.radius < 0:
            raise ValueError("window radius must be >= 0")
        if self.norm not in ("linf", "l1"):
            raise ValueError(f"unknown norm {self.norm!r}; expected 'linf' or 'l1'")

    @property
    def d(self) -> int:
        return len(self.center)

    def __contains__(self, p: Sequence[int]) -> bool:
        q = site_sub(tuple(p), self.center)
        r = linf(q) if self.norm == "linf" else l1(q)
        return r <= self.radius

    def n_sites(self) -> int:
        if self.norm == "linf":
            return (2 * self.radius + 1) ** self.d
        return sum(1 for _ in self.sites())

    def sites(self) -> Iterator[Site]:
        """Sites in lexicographic order of coordinates."""
        rng = range(-self.radius, self.radius + 1)
        if self.norm == "linf":
            for off in itertools.product(rng, repeat=self.d):
                yield site_add(self.center, off)
        else:
            for off in itertools.product(rng, repeat=self.d):
                if sum(abs(c) for c in off) <= self.radius:
                    yield site_add(self.center, off)


@dataclass(frozen=True)
class Annulus:
    """The region between ``B(center, inner)`` and ``B(center, outer)^c`` (l-infinity)."""

    center: Site
    inner: int
    outer: int

    def __post_init__(self):
        object.__setattr__(self, "center", check_site(self.center))
        if not (0 <= self.inner < self.outer):
            raise ValueError(f"annulus needs 0 <= inner < outer, got {self.inner}, {self.outer}")

    @property
    def d(self) -> int:
        return len(self.center)


def enumerate_region(window: Window) -> list[Site]:
    """All sites of the window in lexicographic order (the canonical site order)."""
    return list(window.sites())


def enumerate_sphere(center: Site, L: int) -> list[Site]:
    """Sites at l-infinity distance exactly L from center, lexicographic order."""
    center = check_site(center)
    if L < 0:
        raise ValueError("sphere radius must be >= 0")
    if L == 0:
        return [center]
    d = len(center)
    out = []
    rng = range(-L, L + 1)
    for off in itertools.product(rng, repeat=d):
        if max(abs(c) for c in off) == L:
            out.append(site_add(center, off))
    return out


def sphere_size(d: int, L: int) -> int:
    if L == 0:
        return 1
    return (2 * L + 1) ** d - (2 * L - 1) ** d


def neighbors(p: Sequence[int], mode: "Connectivity | str" = Connectivity.NEAREST) -> list[Site]:
    """Adjacent sites: 2d nearest neighbours or 3^d - 1 *-neighbours, lexicographic."""
    p = check_site(p)
    mode = as_connectivity(mode)
    d = len(p)
    if mode is Connectivity.NEAREST:
        out = []
        for i in range(d):
            for s in (-1, 1):
                q = list(p)
                q[i] += s
                out.append(tuple(q))
        return sorted(out)
    out = []
    for off in itertools.product((-1, 0, 1), repeat=d):
        if any(off):
            out.append(site_add(p, off))
    return out


def are_adjacent(a: Site, b: Site, mode: "Connectivity | str") -> bool:
    mode = as_connectivity(mode)
    if mode is Connectivity.NEAREST:
        return dist_l1(a, b) == 1
    return dist_linf(a, b) == 1


def validate_path(seq: Iterable[Sequence[int]], mode: "Connectivity | str") -> bool:
    """True when consecutive entries are adjacent under the mode.

    A single site is a valid path; an empty sequence is an error.
    """
    mode = as_connectivity(mode)
    sites = [check_site(p) for p in seq]
    if not sites:
        raise ValueError("empty path")
    d = len(sites[0])
    for p in sites:
        check_site(p, d)
    return all(are_adjacent(a, b, mode) for a, b in zip(sites, sites[1:]))
