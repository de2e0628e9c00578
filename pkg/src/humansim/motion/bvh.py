"""BVH (Biovision Hierarchy) parsing, serialization and forward kinematics."""

import math
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import BvhParseError
from ..geometry import RigidTransform, transform_point
from .skeleton import harmonize

POSITION_CHANNELS = ("Xposition", "Yposition", "Zposition")
ROTATION_CHANNELS = ("Xrotation", "Yrotation", "Zrotation")
VALID_CHANNELS = POSITION_CHANNELS + ROTATION_CHANNELS


@dataclass(eq=False)
class BvhJoint:
    name: str
    offset: np.ndarray
    channels: tuple = ()
    children: list = field(default_factory=list)
    end_site_offset: np.ndarray = None

    def walk(self):
        """Depth-first iteration in declaration order (the channel order)."""
        yield self
        for c in self.children:
            yield from c.walk()


@dataclass(eq=False)
class BvhClip:
    root: BvhJoint
    frame_time: float
    frames: np.ndarray
    unit_scale: float = 0.01

    def __post_init__(self):
        self.frames = np.atleast_2d(np.asarray(self.frames, dtype=float))
        self._joints = list(self.root.walk())
        self._index = {}
        col = 0
        for j in self._joints:
            self._index[j.name] = col
            col += len(j.channels)
        self.channel_count = col
        if self.frames.shape[1] != col:
            raise ValueError(f"frame rows have {self.frames.shape[1]} values, hierarchy declares {col}")
        if len(self.frames) < 1:
            raise ValueError("a clip needs at least one frame")
        if not self.frame_time > 0:
            raise ValueError("frame_time must be positive")

    @property
    def joints(self):
        return list(self._joints)

    @property
    def n_frames(self):
        return len(self.frames)

    @property
    def duration(self):
        return (self.n_frames - 1) * self.frame_time

    def channel_offset(self, joint_name):
        return self._index[joint_name]


def _fmt(x):
    # repr of a float round-trips exactly
    x = float(x)
    if x == 0:
        return "0"
    return repr(x)


# ---------------------------------------------------------------- parsing


class _Tokens:
    def __init__(self, text):
        self.items = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            for tok in line.split():
                self.items.append((tok, lineno))
        self.pos = 0

    def peek(self):
        return self.items[self.pos] if self.pos < len(self.items) else (None, self._last_line())

    def next(self, what="token"):
        if self.pos >= len(self.items):
            raise BvhParseError(f"unexpected end of file, expected {what}", self._last_line())
        tok = self.items[self.pos]
        self.pos += 1
        return tok

    def expect(self, word):
        tok, line = self.next(repr(word))
        if tok != word:
            raise BvhParseError(f"expected {word!r}, found {tok!r}", line)
        return line

    def number(self, what):
        tok, line = self.next(what)
        try:
            v = float(tok)
        except ValueError:
            raise BvhParseError(f"expected a number for {what}, found {tok!r}", line) from None
        if not math.isfinite(v):
            raise BvhParseError(f"non-finite value for {what}", line)
        return v

    def _last_line(self):
        return self.items[-1][1] if self.items else 1


def _parse_joint(tokens, name, scale, names):
    tokens.expect("{")
    tok, line = tokens.next("OFFSET")
    if tok != "OFFSET":
        raise BvhParseError(f"joint {name}: expected OFFSET, found {tok!r}", line)
    offset = np.array([tokens.number("OFFSET") for _ in range(3)]) * scale
    channels = ()
    tok, line = tokens.peek()
    if tok == "CHANNELS":
        tokens.next()
        n_tok, n_line = tokens.next("channel count")
        try:
            n = int(n_tok)
        except ValueError:
            raise BvhParseError(f"bad channel count {n_tok!r}", n_line) from None
        if n not in (0, 3, 6):
            raise BvhParseError(f"joint {name}: channel count must be 0, 3 or 6, got {n}", n_line)
        chans = []
        for _ in range(n):
            c, c_line = tokens.next("channel name")
            if c not in VALID_CHANNELS:
                raise BvhParseError(f"unknown channel {c!r}", c_line)
            chans.append(c)
        channels = tuple(chans)
    joint = BvhJoint(name, offset, channels)
    while True:
        tok, line = tokens.next("'}'")
        if tok == "}":
            return joint
        if tok == "JOINT":
            child_name, child_line = tokens.next("joint name")
            if child_name in names:
                raise BvhParseError(f"duplicate joint name {child_name!r}", child_line)
            names.add(child_name)
            joint.children.append(_parse_joint(tokens, child_name, scale, names))
        elif tok == "End":
            tokens.expect("Site")
            tokens.expect("{")
            tokens.expect("OFFSET")
            joint.end_site_offset = np.array([tokens.number("End Site OFFSET") for _ in range(3)]) * scale
            tokens.expect("}")
        else:
            raise BvhParseError(f"unexpected token {tok!r} inside joint {name}", line)


def parse_bvh(text, unit_scale=0.01):
    """Parse BVH text. Lengths (offsets, position channels) are multiplied by ``unit_scale``."""
    lines = text.splitlines()
    stripped = [ln.strip() for ln in lines]
    if "HIERARCHY" not in [s.split()[0] if s else "" for s in stripped]:
        raise BvhParseError("missing HIERARCHY section", 1)
    motion_line = next((i for i, s in enumerate(stripped) if s.split()[:1] == ["MOTION"]), None)
    if motion_line is None:
        raise BvhParseError("missing MOTION section", len(lines) or 1)

    header = "\n".join(lines[:motion_line])
    tokens = _Tokens(header)
    tokens.expect("HIERARCHY")
    tok, line = tokens.next("ROOT")
    if tok != "ROOT":
        raise BvhParseError(f"expected ROOT, found {tok!r}", line)
    root_name, _ = tokens.next("root name")
    root = _parse_joint(tokens, root_name, unit_scale, {root_name})
    tok, line = tokens.peek()
    if tok is not None:
        raise BvhParseError(f"unexpected token {tok!r} after the hierarchy", line)

    joints = list(root.walk())
    width = sum(len(j.channels) for j in joints)

    # MOTION block
    idx = motion_line + 1
    body = [(i + 1, s) for i, s in enumerate(stripped) if i >= idx and s]
    if len(body) < 2:
        raise BvhParseError("MOTION section needs 'Frames:' and 'Frame Time:' lines", motion_line + 1)
    (l1, s1), (l2, s2) = body[0], body[1]
    if not s1.startswith("Frames:"):
        raise BvhParseError("expected 'Frames:'", l1)
    try:
        n_frames = int(s1.split(":", 1)[1])
    except ValueError:
        raise BvhParseError("bad frame count", l1) from None
    if not s2.startswith("Frame Time:"):
        raise BvhParseError("expected 'Frame Time:'", l2)
    try:
        frame_time = float(s2.split(":", 1)[1])
    except ValueError:
        raise BvhParseError("bad frame time", l2) from None
    if not frame_time > 0:
        raise BvhParseError("frame time must be positive", l2)
    rows = body[2:]
    if n_frames < 1:
        raise BvhParseError("clip must contain at least one frame", l1)
    if len(rows) != n_frames:
        raise BvhParseError(f"header declares {n_frames} frames, found {len(rows)}", l1)
    frames = np.empty((n_frames, width))
    for k, (lineno, s) in enumerate(rows):
        parts = s.split()
        if len(parts) != width:
            raise BvhParseError(f"frame row has {len(parts)} values, hierarchy declares {width} channels", lineno)
        try:
            frames[k] = [float(p) for p in parts]
        except ValueError:
            raise BvhParseError("non-numeric frame data", lineno) from None
        if not np.all(np.isfinite(frames[k])):
            raise BvhParseError("non-finite frame data", lineno)

    col = 0
    for j in joints:
        for c in j.channels:
            if c in POSITION_CHANNELS:
                frames[:, col] *= unit_scale
            col += 1
    return BvhClip(root, frame_time, frames, unit_scale)


def load_bvh(path, unit_scale=0.01):
    with open(path, encoding="utf-8") as fh:
        return parse_bvh(fh.read(), unit_scale=unit_scale)


def serialize_bvh(clip):
    """Emit BVH text in the clip's original length units."""
    s = clip.unit_scale
    out = ["HIERARCHY"]

    def emit(j, depth, keyword):
        pad = "\t" * depth
        out.append(f"{pad}{keyword} {j.name}")
        out.append(f"{pad}{{")
        out.append(f"{pad}\tOFFSET " + " ".join(_fmt(v / s) for v in j.offset))
        if j.channels:
            out.append(f"{pad}\tCHANNELS {len(j.channels)} " + " ".join(j.channels))
        for c in j.children:
            emit(c, depth + 1, "JOINT")
        if j.end_site_offset is not None:
            out.append(f"{pad}\tEnd Site")
            out.append(f"{pad}\t{{")
            out.append(f"{pad}\t\tOFFSET " + " ".join(_fmt(v / s) for v in j.end_site_offset))
            out.append(f"{pad}\t}}")
        out.append(f"{pad}}}")

    emit(clip.root, 0, "ROOT")
    out.append("MOTION")
    out.append(f"Frames: {clip.n_frames}")
    out.append(f"Frame Time: {_fmt(clip.frame_time)}")
    is_pos = np.array([c in POSITION_CHANNELS for j in clip.joints for c in j.channels], dtype=bool)
    for row in clip.frames:
        vals = np.where(is_pos, row / s, row)
        out.append(" ".join(_fmt(v) for v in vals))
    return "\n".join(out) + "\n"


# ------------------------------------------------------ forward kinematics

_AXES = {"X": 0, "Y": 1, "Z": 2}


def _axis_rotation(axis, deg):
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    if axis == 0:
        return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
    if axis == 1:
        return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def _fk_row(clip, row):
    out = {}

    def visit(j, parent_r, parent_t, col):
        local_t = j.offset.copy()
        local_r = np.eye(3)
        for c in j.channels:
            v = row[col]
            col += 1
            if c in POSITION_CHANNELS:
                local_t[_AXES[c[0]]] += v
            else:
                local_r = local_r @ _axis_rotation(_AXES[c[0]], v)
        t = parent_r @ local_t + parent_t
        r = parent_r @ local_r
        out[j.name] = t
        if j.end_site_offset is not None:
            out[j.name + "_end"] = r @ j.end_site_offset + t
        for child in j.children:
            col = visit(child, r, t, col)
        return col

    visit(clip.root, np.eye(3), np.zeros(3), 0)
    return out


def forward_kinematics(clip, frame_index):
    """Joint positions (clip units after scaling) at one frame.

    Each joint's local transform is its offset translation followed by the
    rotation channels in declared order (Euler degrees). End sites appear as
    ``"<joint>_end"``.
    """
    if not 0 <= frame_index < clip.n_frames:
        raise IndexError(f"frame index {frame_index} out of range [0, {clip.n_frames})")
    return _fk_row(clip, clip.frames[frame_index])


def interpolate_channels(clip, t):
    """Per-channel linear interpolation of the frame rows at time ``t``."""
    eps = 1e-9 * max(1.0, clip.duration)
    if t < -eps or t > clip.duration + eps:
        raise ValueError(f"t={t} outside clip range [0, {clip.duration}]")
    t = min(max(t, 0.0), clip.duration)
    x = t / clip.frame_time
    k = int(math.floor(x))
    if k >= clip.n_frames - 1:
        return clip.frames[-1].copy()
    a = x - k
    if a == 0.0:
        return clip.frames[k].copy()
    return (1.0 - a) * clip.frames[k] + a * clip.frames[k + 1]


def sample_pose(clip, t, world_from_root=None, hmap=None):
    """Canonical world-frame pose at time ``t`` of a BVH clip."""
    from .skeleton import DEFAULT_BVH_MAP

    raw = _fk_row(clip, interpolate_channels(clip, t))
    if world_from_root is None:
        world_from_root = RigidTransform.identity()
    names = list(raw)
    pts = transform_point(world_from_root, np.array([raw[n] for n in names]))
    world = dict(zip(names, pts))
    return harmonize(world, hmap if hmap is not None else DEFAULT_BVH_MAP, timestamp=t)
