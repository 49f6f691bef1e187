"""Region graphs: sites, overlapping regions and the overlap pairs that carry consensus."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

GEOMETRIES = ("ring", "ladder", "torus", "hub")


@dataclass(frozen=True)
class Overlap:
    """Unordered region pair ``(a, b)`` with ``a < b`` and their shared sites."""

    a: int
    b: int
    shared: tuple[int, ...]

    @property
    def n_qubits(self) -> int:
        return len(self.shared)


@dataclass(frozen=True)
class RegionGraph:
    n_sites: int
    regions: tuple[tuple[int, ...], ...]
    overlaps: tuple[Overlap, ...]
    kind: str = "custom"

    @property
    def n_regions(self) -> int:
        return len(self.regions)

    def region_qubits(self) -> list[int]:
        return [len(r) for r in self.regions]

    def neighbors(self, r: int) -> list[int]:
        out = []
        for ov in self.overlaps:
            if ov.a == r:
                out.append(ov.b)
            elif ov.b == r:
                out.append(ov.a)
        return out

    def degree(self, r: int) -> int:
        return len(self.neighbors(r))

    def max_degree(self) -> int:
        return max((self.degree(r) for r in range(self.n_regions)), default=0)

    def local_positions(self, r: int, sites: Iterable[int]) -> list[int]:
        """Positions of global ``sites`` inside region ``r``'s ordered site list."""
        reg = self.regions[r]
        return [reg.index(s) for s in sites]

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n_sites": self.n_sites,
            "regions": [list(r) for r in self.regions],
            "overlaps": [
                {"pair": [ov.a, ov.b], "shared": list(ov.shared)} for ov in self.overlaps
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> RegionGraph:
        overlaps = tuple(
            Overlap(int(o["pair"][0]), int(o["pair"][1]), tuple(int(s) for s in o["shared"]))
            for o in data["overlaps"]
        )
        return cls(
            n_sites=int(data["n_sites"]),
            regions=tuple(tuple(int(s) for s in r) for r in data["regions"]),
            overlaps=overlaps,
            kind=str(data.get("kind", "custom")),
        )

    @classmethod
    def from_json(cls, text: str) -> RegionGraph:
        return cls.from_dict(json.loads(text))


def from_regions(
    n_sites: int,
    regions: Sequence[Iterable[int]],
    pairs: Sequence[tuple[int, int]] | None = None,
    kind: str = "custom",
) -> RegionGraph:
    """Build a graph from explicit region site lists.

    By default every pair of regions with a nonempty intersection becomes an
    overlap; pass ``pairs`` to restrict the consensus constraints to a subset.
    """
    regs = tuple(tuple(sorted(set(int(s) for s in r))) for r in regions)
    if pairs is None:
        pairs = [
            (a, b)
            for a, b in itertools.combinations(range(len(regs)), 2)
            if set(regs[a]) & set(regs[b])
        ]
    overlaps = []
    for a, b in pairs:
        a, b = min(a, b), max(a, b)
        shared = tuple(sorted(set(regs[a]) & set(regs[b])))
        overlaps.append(Overlap(a, b, shared))
    overlaps.sort(key=lambda o: (o.a, o.b))
    return RegionGraph(n_sites=n_sites, regions=regs, overlaps=tuple(overlaps), kind=kind)


def _ring() -> RegionGraph:
    regs = [[(2 * r + i) % 12 for i in range(4)] for r in range(6)]
    return from_regions(12, regs, kind="ring")


def _ladder() -> RegionGraph:
    # site = 2 * column + leg, six columns on a periodic two-leg ladder
    regs = [
        [2 * c + leg for c in (r, (r + 1) % 6) for leg in (0, 1)] for r in range(6)
    ]
    return from_regions(12, regs, kind="ladder")


def _torus() -> RegionGraph:
    # 4x4 lattice, site = 4 * row + col; 2x2 plaquettes anchored on a 3x3 grid
    anchors = [(i, j) for i in range(3) for j in range(3)]
    regs = [
        [4 * (i + di) + (j + dj) for di in (0, 1) for dj in (0, 1)] for i, j in anchors
    ]
    pairs = []
    for a, (i, j) in enumerate(anchors):
        for b, (k, l) in enumerate(anchors):
            if a < b and abs(i - k) + abs(j - l) == 1:
                pairs.append((a, b))
    return from_regions(16, regs, pairs=pairs, kind="torus")


def _hub() -> RegionGraph:
    regs = [[0, 1, 2 + 2 * r, 3 + 2 * r] for r in range(6)]
    return from_regions(14, regs, kind="hub")


_BUILDERS = {"ring": _ring, "ladder": _ladder, "torus": _torus, "hub": _hub}


def build_geometry(kind: str) -> RegionGraph:
    """One of the four fixed benchmark geometries: ring, ladder, torus or hub."""
    key = kind.lower()
    if key not in _BUILDERS:
        raise ValueError(f"unknown geometry {kind!r}; expected one of {GEOMETRIES}")
    return _BUILDERS[key]()


@dataclass
class ValidationReport:
    ok: bool
    problems: list[str]

    def __bool__(self) -> bool:
        return self.ok


def validate(g: RegionGraph) -> ValidationReport:
    problems = []
    for r, reg in enumerate(g.regions):
        if not reg:
            problems.append(f"region {r} is empty")
        if list(reg) != sorted(set(reg)):
            problems.append(f"region {r} sites not strictly ascending: {list(reg)}")
        bad = [s for s in reg if not 0 <= s < g.n_sites]
        if bad:
            problems.append(f"region {r} has out-of-range sites {bad}")
    covered = set(itertools.chain.from_iterable(g.regions))
    missing = sorted(set(range(g.n_sites)) - covered)
    if missing:
        problems.append(f"sites not covered by any region: {missing}")
    seen = set()
    for ov in g.overlaps:
        key = (min(ov.a, ov.b), max(ov.a, ov.b))
        if key in seen:
            problems.append(f"duplicate overlap {key}")
            continue
        seen.add(key)
        if ov.a == ov.b or not (0 <= ov.a < g.n_regions and 0 <= ov.b < g.n_regions):
            problems.append(f"overlap {key} references invalid regions")
            continue
        actual = sorted(set(g.regions[ov.a]) & set(g.regions[ov.b]))
        if not actual:
            problems.append(f"overlap {key} has empty intersection")
        if list(ov.shared) != actual:
            problems.append(
                f"overlap {key} stored shared set {list(ov.shared)} != intersection {actual}"
            )
    return ValidationReport(ok=not problems, problems=problems)
