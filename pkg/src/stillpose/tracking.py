"""Instance association across frames by flow warping, and track assembly.

A mask is warped into a neighboring frame along the optical flow; it connects
to the candidate instance holding the largest fraction of the warped pixels,
kept only when that fraction reaches k1 and when the reverse pass agrees.
Connected components of the surviving edges become tracks; components covering
fewer than ceil(k2 * N) frames, or holding two instances in one frame, are
dropped as ambiguous.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scene import FlowField, InstanceMask, Sequence


@dataclass(frozen=True)
class TrackingConfig:
    k1: float = 0.5  # minimum fraction of warped source pixels inside the match
    k2: float = 0.2  # minimum component size as a fraction of sequence length
    neighbor_radius: int = 1  # how many frames ahead to attempt association

    def __post_init__(self):
        if not 0 < self.k1 <= 1:
            raise ValueError("k1 must lie in (0, 1]")
        if not 0 < self.k2 <= 1:
            raise ValueError("k2 must lie in (0, 1]")
        if self.neighbor_radius < 1:
            raise ValueError("neighbor_radius must be >= 1")


@dataclass(frozen=True)
class AssociationEdge:
    frame_a: int
    instance_a: int
    frame_b: int
    instance_b: int
    overlap_ratio: float

    @property
    def key(self):
        return (self.frame_a, self.instance_a, self.frame_b, self.instance_b)


@dataclass
class Track:
    nodes: list[tuple[int, int]]  # ordered (frame_index, instance_id)

    def __post_init__(self):
        self.nodes = sorted(self.nodes)
        frames = [f for f, _ in self.nodes]
        if len(set(frames)) != len(frames):
            raise ValueError("a track may hold at most one instance per frame")

    @property
    def covered_frame_count(self) -> int:
        return len(self.nodes)

    @property
    def frames(self) -> list[int]:
        return [f for f, _ in self.nodes]

    def instance_in(self, frame: int) -> int | None:
        for f, inst in self.nodes:
            if f == frame:
                return inst
        return None


def warp_pixels(pixels: np.ndarray, flows: list[FlowField]) -> np.ndarray:
    """Push float pixels through a chain of flow fields (float positions out)."""
    pos = np.asarray(pixels, dtype=float)
    for flow in flows:
        pos = pos + flow.sample(pos)
    return pos


def warp_mask(mask: InstanceMask, flow: FlowField) -> np.ndarray:
    """Warp every mask pixel by its bilinearly sampled flow vector.

    Returns the surviving integer target pixels (n, 2); displaced pixels are
    rounded to the nearest pixel and dropped when they leave the image.
    """
    if flow.source_frame != mask.frame_index:
        raise ValueError(
            f"flow source frame {flow.source_frame} != mask frame {mask.frame_index}"
        )
    src = mask.pixels().astype(float)
    if not len(src):
        return np.empty((0, 2), dtype=np.int64)
    moved = np.rint(src + flow.sample(src)).astype(np.int64)
    h, w = flow.shape
    keep = (moved[:, 0] >= 0) & (moved[:, 0] < w) & (moved[:, 1] >= 0) & (moved[:, 1] < h)
    return moved[keep]


def associate(
    source: InstanceMask,
    candidates: list[InstanceMask],
    flows: list[FlowField] | FlowField,
    k1: float = 0.5,
) -> AssociationEdge | None:
    """Best target instance for a source mask, or None below the k1 threshold.

    The overlap ratio is |warped source pixels inside candidate| / |source
    pixels|: pixels warped out of the image still count in the denominator, so
    truncated instances fail conservatively. Ties break to the lower
    instance_id, making the result independent of candidate order.
    """
    chain = [flows] if isinstance(flows, FlowField) else list(flows)
    target_frame = chain[-1].target_frame
    for cand in candidates:
        if cand.frame_index != target_frame:
            raise ValueError("candidates must live in the flow's target frame")
    denom = source.pixel_count
    if denom == 0 or not candidates:
        return None
    src = source.pixels().astype(float)
    moved = np.rint(warp_pixels(src, chain)).astype(np.int64)
    h, w = chain[-1].shape
    keep = (moved[:, 0] >= 0) & (moved[:, 0] < w) & (moved[:, 1] >= 0) & (moved[:, 1] < h)
    moved = moved[keep]

    best: tuple[float, int] | None = None
    for cand in candidates:
        ratio = float(cand.contains(moved).sum()) / denom if len(moved) else 0.0
        key = (ratio, -cand.instance_id)  # ties -> lower instance id
        if best is None or key > best[0]:
            best = (key, cand.instance_id, ratio)
    _, best_id, best_ratio = best
    if best_ratio < k1:
        return None
    return AssociationEdge(
        source.frame_index, source.instance_id, target_frame, best_id, best_ratio
    )


def forward_backward_filter(
    edges_fw: list[AssociationEdge], edges_bw: list[AssociationEdge]
) -> list[AssociationEdge]:
    """Keep a forward edge a->b only when the backward pass links b->a."""
    reverse = {(e.frame_a, e.instance_a, e.frame_b, e.instance_b) for e in edges_bw}
    return [
        e
        for e in edges_fw
        if (e.frame_b, e.instance_b, e.frame_a, e.instance_a) in reverse
    ]


def _flow_chain(seq: Sequence, start: int, steps: int, forward: bool) -> list[FlowField] | None:
    flows = []
    frame = start
    for _ in range(steps):
        table = seq.flows_fw if forward else seq.flows_bw
        if frame not in table:
            return None
        flows.append(table[frame])
        frame = table[frame].target_frame
    return flows


def _pass_edges(seq: Sequence, config: TrackingConfig, forward: bool) -> list[AssociationEdge]:
    edges = []
    for frame in range(seq.n_frames):
        for dist in range(1, config.neighbor_radius + 1):
            target = frame + dist if forward else frame - dist
            if not 0 <= target < seq.n_frames:
                continue
            chain = _flow_chain(seq, frame, dist, forward)
            if chain is None:
                continue
            for mask in seq.masks[frame]:
                edge = associate(mask, seq.masks[target], chain, config.k1)
                if edge is not None:
                    edges.append(edge)
    return edges


class _UnionFind:
    def __init__(self):
        self.parent: dict = {}

    def find(self, x):
        self.parent.setdefault(x, x)
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def build_tracks(seq: Sequence, config: TrackingConfig = TrackingConfig()) -> list[Track]:
    """Assemble per-instance tracks from mutually confirmed associations.

    Deterministic: tracks come out ordered by their first (frame, instance).
    """
    fw = _pass_edges(seq, config, forward=True)
    bw = _pass_edges(seq, config, forward=False)
    kept = forward_backward_filter(fw, bw)

    uf = _UnionFind()
    for frame in range(seq.n_frames):
        for mask in seq.masks[frame]:
            uf.find((frame, mask.instance_id))
    for e in kept:
        uf.union((e.frame_a, e.instance_a), (e.frame_b, e.instance_b))

    groups: dict = {}
    for node in sorted(uf.parent):
        groups.setdefault(uf.find(node), []).append(node)

    min_nodes = int(np.ceil(config.k2 * seq.n_frames))
    tracks = []
    for root in sorted(groups):
        nodes = groups[root]
        if len(nodes) < min_nodes:
            continue
        frames = [f for f, _ in nodes]
        if len(set(frames)) != len(frames):
            continue  # two instances share a frame: ambiguous, discard
        tracks.append(Track(nodes))
    return tracks


def save_tracks(path: str | Path, tracks: list[Track]) -> None:
    doc = {
        "tracks": [
            {"track_id": i, "nodes": [[int(f), int(inst)] for f, inst in t.nodes]}
            for i, t in enumerate(tracks)
        ]
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1))


def load_tracks(path: str | Path) -> list[Track]:
    doc = json.loads(Path(path).read_text())
    entries = sorted(doc["tracks"], key=lambda t: t["track_id"])
    return [Track([(int(f), int(i)) for f, i in t["nodes"]]) for t in entries]
