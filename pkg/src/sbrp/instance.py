"""Instance data model, synthetic generation, candidate stop sets and JSON I/O."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import InstanceFormatError, StudentUnreachable
from .kernels import pairwise_distance


@dataclass(frozen=True)
class Student:
    id: int
    x: float
    y: float
    dist_school: float


@dataclass(frozen=True)
class Stop:
    id: int
    x: float
    y: float


@dataclass(frozen=True)
class Site:
    kind: str  # "school" | "depot"
    id: int
    x: float
    y: float


@dataclass(frozen=True)
class Instance:
    """A single-school instance.

    ``walk_matrix`` (students x stops, file order) and ``travel_matrix``
    (locations x locations in the order depots, stops, school) are optional
    overrides for real road data; when absent the metrics are Euclidean.
    """

    students: tuple
    stops: tuple
    school: Site
    depots: tuple
    walk_limit: float
    stop_capacity: int
    seed: Optional[int] = None
    walk_matrix: Optional[np.ndarray] = field(default=None, compare=False)
    travel_matrix: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        if not self.walk_limit > 0:
            raise ValueError("walk_limit must be positive")
        if self.stop_capacity < 1:
            raise ValueError("stop_capacity must be >= 1")
        if not self.depots:
            raise ValueError("at least one depot is required")
        for label, items in (("student", self.students), ("stop", self.stops), ("depot", self.depots)):
            ids = [it.id for it in items]
            if len(set(ids)) != len(ids):
                raise ValueError(f"duplicate {label} ids")
        if any(s.dist_school < 0 for s in self.students):
            raise ValueError("dist_school must be >= 0")

    @property
    def student_xy(self):
        return np.array([(s.x, s.y) for s in self.students], dtype=float).reshape(-1, 2)

    @property
    def stop_xy(self):
        return np.array([(s.x, s.y) for s in self.stops], dtype=float).reshape(-1, 2)

    @property
    def distances_to_school(self):
        return np.array([s.dist_school for s in self.students], dtype=float)

    def walk_distances(self):
        """Student x stop walking distance matrix (file order)."""
        if self.walk_matrix is not None:
            return np.asarray(self.walk_matrix, dtype=float)
        return pairwise_distance(self.student_xy, self.stop_xy)

    def subset(self, keep_ids):
        """Instance restricted to the given student ids (walk matrix rows follow)."""
        keep = set(keep_ids)
        rows = [k for k, s in enumerate(self.students) if s.id in keep]
        walk = None
        if self.walk_matrix is not None:
            walk = np.asarray(self.walk_matrix)[rows]
        return Instance(
            students=tuple(self.students[k] for k in rows),
            stops=self.stops,
            school=self.school,
            depots=self.depots,
            walk_limit=self.walk_limit,
            stop_capacity=self.stop_capacity,
            seed=self.seed,
            walk_matrix=walk,
            travel_matrix=self.travel_matrix,
        )


@dataclass(frozen=True)
class CandidateSets:
    stops_of_student: dict  # student id -> frozenset of stop ids (P(i))
    students_of_stop: dict  # stop id -> frozenset of student ids (A(j))


def walk_distance(a, b):
    """Euclidean distance between two planar points, in miles."""
    return math.hypot(float(a[0]) - float(b[0]), float(a[1]) - float(b[1]))


def grid_stops(side, walk_limit, spacing=None):
    """Square grid of stops covering [0, side]^2.

    Default spacing is walk_limit/sqrt(2), so every point of the square lies
    within walk_limit/2 of some stop.
    """
    if spacing is None:
        spacing = walk_limit / math.sqrt(2.0)
    m = int(math.ceil(side / spacing - 1e-12)) + 1
    ticks = np.linspace(0.0, side, m)
    stops = []
    for r, y in enumerate(ticks):
        for c, x in enumerate(ticks):
            stops.append(Stop(id=r * m + c, x=float(x), y=float(y)))
    return tuple(stops)


def generate_synthetic(n, alpha, beta, side=3.0, seed=0, walk_limit=0.5,
                       stop_capacity=20, stop_spacing=None):
    """Students with Beta(alpha, beta)-distributed coordinates on a square.

    The school sits at the centre with a single co-located depot, and a
    regular grid of candidate stops is laid over the square.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not (alpha > 0 and beta > 0):
        raise ValueError("alpha and beta must be positive")
    if not side > 0:
        raise ValueError("side must be positive")
    rng = np.random.default_rng(seed)
    xy = side * rng.beta(alpha, beta, size=(n, 2))
    centre = side / 2.0
    school = Site("school", 0, centre, centre)
    depot = Site("depot", 0, centre, centre)
    students = tuple(
        Student(id=i, x=float(x), y=float(y), dist_school=walk_distance((x, y), (centre, centre)))
        for i, (x, y) in enumerate(xy)
    )
    return Instance(
        students=students,
        stops=grid_stops(side, walk_limit, stop_spacing),
        school=school,
        depots=(depot,),
        walk_limit=float(walk_limit),
        stop_capacity=int(stop_capacity),
        seed=int(seed),
    )


def build_candidate_sets(instance):
    """P(i) and A(j) from the walk limit; raises StudentUnreachable on empty P(i)."""
    dist = instance.walk_distances()
    reach = dist <= instance.walk_limit
    stop_ids = [s.id for s in instance.stops]
    stu_ids = [s.id for s in instance.students]
    p_of = {}
    a_of = {j: set() for j in stop_ids}
    missing = []
    for r, sid in enumerate(stu_ids):
        cols = np.flatnonzero(reach[r])
        if cols.size == 0:
            missing.append(sid)
        p_of[sid] = frozenset(stop_ids[c] for c in cols)
        for c in cols:
            a_of[stop_ids[c]].add(sid)
    if missing:
        raise StudentUnreachable(missing)
    return CandidateSets(p_of, {j: frozenset(v) for j, v in a_of.items()})


# --------------------------------------------------------------------------
# JSON I/O
# --------------------------------------------------------------------------

def _site_to_dict(site):
    return {"id": site.id, "x": site.x, "y": site.y}


def instance_to_dict(instance, provenance=None):
    d = {
        "school": _site_to_dict(instance.school),
        "depots": [_site_to_dict(s) for s in instance.depots],
        "students": [{"id": s.id, "x": s.x, "y": s.y, "dist_school": s.dist_school}
                     for s in instance.students],
        "stops": [{"id": s.id, "x": s.x, "y": s.y} for s in instance.stops],
        "walk_limit": instance.walk_limit,
        "stop_capacity": instance.stop_capacity,
        "seed": instance.seed,
    }
    if instance.walk_matrix is not None or instance.travel_matrix is not None:
        mats = {}
        if instance.walk_matrix is not None:
            mats["walk"] = np.asarray(instance.walk_matrix, dtype=float).tolist()
        if instance.travel_matrix is not None:
            mats["travel"] = np.asarray(instance.travel_matrix, dtype=float).tolist()
        d["matrices"] = mats
    if provenance:
        d["provenance"] = provenance
    return d


def save_instance(instance, path, provenance=None):
    # json writes floats with repr(), which round-trips float64 exactly
    Path(path).write_text(json.dumps(instance_to_dict(instance, provenance), indent=1) + "\n")


class _Locator:
    """Maps JSON paths back to approximate source lines for diagnostics."""

    def __init__(self, text):
        self.text = text

    def line_of(self, needle, start=0):
        pos = self.text.find(needle, start)
        return None if pos < 0 else self.text.count("\n", 0, pos) + 1


def _number(obj, key, path, loc, kind=float):
    if key not in obj:
        raise InstanceFormatError("missing required field", line=loc.line_of(path.split(".")[0]), field=f"{path}.{key}")
    val = obj[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise InstanceFormatError(f"expected a number, got {val!r}", line=loc.line_of(json.dumps(val)),
                                  field=f"{path}.{key}")
    if kind is int:
        if float(val) != int(val):
            raise InstanceFormatError(f"expected an integer, got {val!r}", field=f"{path}.{key}")
        return int(val)
    val = float(val)
    if not math.isfinite(val):
        raise InstanceFormatError("non-finite number", field=f"{path}.{key}")
    return val


def instance_from_dict(d, text=""):
    loc = _Locator(text)
    if not isinstance(d, dict):
        raise InstanceFormatError("top level must be a JSON object", line=1)
    allowed = {"school", "depots", "students", "stops", "walk_limit", "stop_capacity",
               "seed", "matrices", "provenance"}
    for key in d:
        if key not in allowed:
            raise InstanceFormatError("unknown field", line=loc.line_of(f'"{key}"'), field=key)
    for key in ("school", "depots", "students", "stops", "walk_limit", "stop_capacity"):
        if key not in d:
            raise InstanceFormatError("missing required field", field=key)

    def site(obj, kind, path):
        if not isinstance(obj, dict):
            raise InstanceFormatError("expected an object", field=path)
        return Site(kind, _number(obj, "id", path, loc, int), _number(obj, "x", path, loc),
                    _number(obj, "y", path, loc))

    school = site(d["school"], "school", "school")
    if not isinstance(d["depots"], list) or not d["depots"]:
        raise InstanceFormatError("depots must be a non-empty list", line=loc.line_of('"depots"'), field="depots")
    depots = tuple(site(o, "depot", f"depots[{k}]") for k, o in enumerate(d["depots"]))
    students = []
    for k, o in enumerate(d["students"]):
        path = f"students[{k}]"
        if not isinstance(o, dict):
            raise InstanceFormatError("expected an object", field=path)
        sid = _number(o, "id", path, loc, int)
        x = _number(o, "x", path, loc)
        y = _number(o, "y", path, loc)
        ds = _number(o, "dist_school", path, loc) if "dist_school" in o else walk_distance((x, y), (school.x, school.y))
        if ds < 0:
            raise InstanceFormatError("dist_school must be >= 0", field=f"{path}.dist_school")
        students.append(Student(sid, x, y, ds))
    stops = []
    for k, o in enumerate(d["stops"]):
        path = f"stops[{k}]"
        if not isinstance(o, dict):
            raise InstanceFormatError("expected an object", field=path)
        stops.append(Stop(_number(o, "id", path, loc, int), _number(o, "x", path, loc), _number(o, "y", path, loc)))
    walk_limit = _number(d, "walk_limit", "walk_limit", loc)
    if walk_limit <= 0:
        raise InstanceFormatError("walk_limit must be positive", line=loc.line_of('"walk_limit"'), field="walk_limit")
    cap = _number(d, "stop_capacity", "stop_capacity", loc, int)
    if cap < 1:
        raise InstanceFormatError("stop_capacity must be >= 1", line=loc.line_of('"stop_capacity"'),
                                  field="stop_capacity")
    seed = d.get("seed")
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int)):
        raise InstanceFormatError("seed must be an integer or null", field="seed")
    walk = travel = None
    mats = d.get("matrices")
    if mats is not None:
        if not isinstance(mats, dict):
            raise InstanceFormatError("matrices must be an object", field="matrices")
        if "walk" in mats:
            walk = _matrix(mats["walk"], (len(students), len(stops)), "matrices.walk")
        if "travel" in mats:
            n_loc = len(depots) + len(stops) + 1
            travel = _matrix(mats["travel"], (n_loc, n_loc), "matrices.travel")
    for label, items in (("students", students), ("stops", stops), ("depots", depots)):
        ids = [it.id for it in items]
        if len(set(ids)) != len(ids):
            raise InstanceFormatError("duplicate ids", field=label)
    return Instance(tuple(students), tuple(stops), school, depots, walk_limit, cap, seed, walk, travel)


def _matrix(obj, shape, field_name):
    try:
        arr = np.asarray(obj, dtype=float)
    except (TypeError, ValueError) as exc:
        raise InstanceFormatError(f"matrix is not numeric: {exc}", field=field_name) from None
    if arr.shape != shape:
        raise InstanceFormatError(f"expected shape {shape}, got {arr.shape}", field=field_name)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise InstanceFormatError("matrix entries must be finite and >= 0", field=field_name)
    return arr


def load_instance(path):
    text = Path(path).read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceFormatError(f"invalid JSON: {exc.msg}", line=exc.lineno) from None
    return instance_from_dict(d, text)
