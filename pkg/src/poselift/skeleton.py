"""Kinematic skeleton definitions and the derived parent hierarchy.

Skeletons are data: a :class:`SkeletonDef` is usually loaded from a JSON
config (see ``data/h36m17.skeleton.json``) and compiled into an immutable
:class:`KinematicTree` with :func:`build_skeleton`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import (
    CycleDetected,
    IndexOutOfRange,
    InvariantViolation,
    MultipleRoots,
    ParseError,
)

DEFAULT_SKELETON = "h36m17"


@dataclass(frozen=True)
class SkeletonDef:
    """Joint list plus evaluation metadata.

    Args:
        name: skeleton id, referenced by poses built on it.
        joints: ordered ``(name, parent_index)`` pairs. The root is its own parent.
        root_index: index of the root joint.
        eval_subset: joint indices used by the evaluation metrics.
        symmetry_groups: group name -> list of ``(left, right)`` index pairs.
        units: always ``"millimeters"``.
    """

    name: str
    joints: tuple[tuple[str, int], ...]
    root_index: int
    eval_subset: tuple[int, ...]
    symmetry_groups: dict[str, tuple[tuple[int, int], ...]] = field(default_factory=dict)
    units: str = "millimeters"

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def joint_names(self) -> list[str]:
        return [n for n, _ in self.joints]

    def index(self, joint_name: str) -> int:
        return self.joint_names.index(joint_name)

    def joint_groups(self) -> dict[str, list[int]]:
        """Joint indices per symmetry group (both sides merged)."""
        return {g: sorted({i for pair in pairs for i in pair})
                for g, pairs in self.symmetry_groups.items()}


@dataclass(frozen=True, eq=False)
class KinematicTree:
    """Compiled parent hierarchy of a skeleton.

    ``parent1[root] == root`` and ``parent2`` is clamped at the root, so
    relative encodings never need a sentinel index.
    """

    skeleton: SkeletonDef
    parent1: np.ndarray
    parent2: np.ndarray
    depth: np.ndarray
    topological_order: np.ndarray

    @property
    def skeleton_id(self) -> str:
        return self.skeleton.name

    @property
    def root(self) -> int:
        return self.skeleton.root_index

    @property
    def n_joints(self) -> int:
        return len(self.parent1)

    def parents(self, order: int) -> np.ndarray:
        if order == 1:
            return self.parent1
        if order == 2:
            return self.parent2
        raise ValueError(f"order must be 1 or 2, got {order!r}")


def _validate_metadata(sk: SkeletonDef) -> None:
    n = sk.n_joints
    if n < 2:
        raise InvariantViolation(f"skeleton needs at least 2 joints, got {n}")
    if sk.units != "millimeters":
        raise InvariantViolation(f"units must be 'millimeters', got {sk.units!r}")
    if not 0 <= sk.root_index < n:
        raise IndexOutOfRange(f"root_index {sk.root_index} outside [0, {n})")
    subset = set(sk.eval_subset)
    if len(subset) != len(sk.eval_subset):
        raise InvariantViolation("eval_subset contains duplicates")
    for i in subset:
        if not 0 <= i < n:
            raise IndexOutOfRange(f"eval_subset index {i} outside [0, {n})")
    seen: set[int] = set()
    for group, pairs in sk.symmetry_groups.items():
        for pair in pairs:
            if len(pair) != 2:
                raise InvariantViolation(f"symmetry group {group!r}: {pair!r} is not a pair")
            for i in pair:
                if not 0 <= i < n:
                    raise IndexOutOfRange(f"symmetry group {group!r}: index {i} outside [0, {n})")
                if i not in subset:
                    raise InvariantViolation(f"symmetry group {group!r}: joint {i} not in eval_subset")
                if i in seen:
                    raise InvariantViolation(f"symmetry group {group!r}: joint {i} used twice")
                seen.add(i)


def build_skeleton(sk: SkeletonDef) -> KinematicTree:
    """Validate ``sk`` and compile its parent arrays, depths and topological order."""
    _validate_metadata(sk)
    n = sk.n_joints
    parent = np.array([p for _, p in sk.joints], dtype=np.intp)
    bad = np.flatnonzero((parent < 0) | (parent >= n))
    if bad.size:
        raise IndexOutOfRange(f"joint {bad[0]} has parent {parent[bad[0]]} outside [0, {n})")

    roots = np.flatnonzero(parent == np.arange(n))
    if roots.size > 1:
        raise MultipleRoots(f"joints {roots.tolist()} are all their own parent")
    if roots.size == 1 and roots[0] != sk.root_index:
        raise MultipleRoots(f"joint {roots[0]} is self-parented but root_index is {sk.root_index}")
    if parent[sk.root_index] != sk.root_index:
        # No self-parented joint at all: walking up never terminates.
        raise CycleDetected(f"root joint {sk.root_index} is not its own parent")

    depth = np.full(n, -1, dtype=np.intp)
    depth[sk.root_index] = 0
    for j in range(n):
        path = []
        k = j
        while depth[k] < 0:
            path.append(k)
            if len(path) > n:
                raise CycleDetected(f"joint {j} ({sk.joints[j][0]!r}) never reaches the root")
            k = parent[k]
        for d, node in enumerate(reversed(path), start=depth[k] + 1):
            depth[node] = d

    parent2 = parent[parent]
    order = np.argsort(depth, kind="stable")
    for arr in (parent, parent2, depth, order):
        arr.setflags(write=False)
    return KinematicTree(sk, parent, parent2, depth, order)


_TOP_KEYS = {"name", "joints", "root", "eval_subset", "symmetry", "units"}
_REQUIRED_KEYS = {"name", "joints", "root"}


def skeleton_from_dict(data, source: str = "<dict>") -> SkeletonDef:
    """Parse the JSON skeleton schema (parents referenced by joint name)."""
    if not isinstance(data, dict):
        raise ParseError(f"{source}: top level must be an object")
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ParseError(f"{source}: unknown field(s) {sorted(unknown)}")
    missing = _REQUIRED_KEYS - set(data)
    if missing:
        raise ParseError(f"{source}: missing field(s) {sorted(missing)}")

    raw_joints = data["joints"]
    if not isinstance(raw_joints, list) or not raw_joints:
        raise ParseError(f"{source}: 'joints' must be a non-empty list")
    names = []
    for i, entry in enumerate(raw_joints):
        if not isinstance(entry, dict) or set(entry) != {"name", "parent"}:
            raise ParseError(f"{source}: joints[{i}] must be an object with exactly 'name' and 'parent'")
        if not isinstance(entry["name"], str) or not isinstance(entry["parent"], str):
            raise ParseError(f"{source}: joints[{i}] name/parent must be strings")
        if entry["name"] in names:
            raise ParseError(f"{source}: joints[{i}] duplicate joint name {entry['name']!r}")
        names.append(entry["name"])
    index = {n: i for i, n in enumerate(names)}

    def lookup(ref, where):
        if isinstance(ref, str):
            if ref not in index:
                raise ParseError(f"{source}: {where} references unknown joint {ref!r}")
            return index[ref]
        if isinstance(ref, int) and not isinstance(ref, bool):
            return ref
        raise ParseError(f"{source}: {where} must be a joint name or index")

    joints = tuple((e["name"], lookup(e["parent"], f"joints[{i}].parent"))
                   for i, e in enumerate(raw_joints))
    root = lookup(data["root"], "root")
    subset = data.get("eval_subset", list(range(len(joints))))
    if not isinstance(subset, list):
        raise ParseError(f"{source}: 'eval_subset' must be a list")
    subset = tuple(lookup(s, f"eval_subset[{i}]") for i, s in enumerate(subset))
    sym_raw = data.get("symmetry", {})
    if not isinstance(sym_raw, dict):
        raise ParseError(f"{source}: 'symmetry' must be an object")
    sym = {}
    for g, pairs in sym_raw.items():
        if not isinstance(pairs, list):
            raise ParseError(f"{source}: symmetry.{g} must be a list of pairs")
        out = []
        for i, pair in enumerate(pairs):
            if not isinstance(pair, list) or len(pair) != 2:
                raise ParseError(f"{source}: symmetry.{g}[{i}] must be a 2-element list")
            out.append(tuple(lookup(x, f"symmetry.{g}[{i}]") for x in pair))
        sym[g] = tuple(out)
    units = data.get("units", "millimeters")
    return SkeletonDef(str(data["name"]), joints, root, subset, sym, units)


def skeleton_to_dict(sk: SkeletonDef) -> dict:
    names = sk.joint_names
    return {
        "name": sk.name,
        "units": sk.units,
        "joints": [{"name": n, "parent": names[p]} for n, p in sk.joints],
        "root": names[sk.root_index],
        "eval_subset": list(sk.eval_subset),
        "symmetry": {g: [list(p) for p in pairs] for g, pairs in sk.symmetry_groups.items()},
    }


def load_skeleton(path) -> SkeletonDef:
    """Read a skeleton config file and check it compiles into a tree.

    ``path`` may also be the id of a bundled skeleton (e.g. ``"h36m17"``).
    """
    p = Path(path)
    if not p.exists() and str(path) in bundled_skeletons():
        text = resources.files("poselift.data").joinpath(f"{path}.skeleton.json").read_text()
        source = f"<bundled {path}>"
    else:
        text = p.read_text()
        source = str(p)
    if not text.strip():
        raise ParseError(f"{source}: empty file")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"{source}: line {e.lineno} col {e.colno}: {e.msg}") from None
    sk = skeleton_from_dict(data, source)
    build_skeleton(sk)
    return sk


def bundled_skeletons() -> list[str]:
    suffix = ".skeleton.json"
    return sorted(f.name[: -len(suffix)] for f in resources.files("poselift.data").iterdir()
                  if f.name.endswith(suffix))


def default_tree() -> KinematicTree:
    return build_skeleton(load_skeleton(DEFAULT_SKELETON))
