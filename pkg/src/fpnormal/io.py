"""Text formats: XYZ (optionally with normals), ASCII PLY, OFF, label dumps, dataset manifests.

Parsers are strict and report the 1-based line number and offending token. Writers use
17 significant digits so finite doubles survive a round trip unchanged.
"""
import os
from dataclasses import dataclass

import numpy as np

FLOAT = "%.17g"
LABEL_MAGIC = "# fpnormal-labels 1"


class FormatError(ValueError):
    def __init__(self, path, line, msg, token=None):
        self.path, self.line, self.token = path, line, token
        text = "%s:%d: %s" % (path, line, msg)
        if token is not None:
            text += " (token %r)" % token
        super().__init__(text)


def _lines(path):
    with open(path, "r", encoding="ascii", errors="strict") as f:
        for no, raw in enumerate(f, 1):
            yield no, raw.strip()


def _floats(path, no, toks):
    out = []
    for t in toks:
        try:
            v = float(t)
        except ValueError:
            raise FormatError(path, no, "not a number", t) from None
        if not np.isfinite(v):
            raise FormatError(path, no, "non-finite value", t)
        out.append(v)
    return out


def _int(path, no, t, lo=0, hi=None):
    try:
        v = int(t)
    except ValueError:
        raise FormatError(path, no, "not an integer", t) from None
    if v < lo or (hi is not None and v >= hi):
        raise FormatError(path, no, "integer out of range", t)
    return v


def _fmt(row):
    return " ".join(FLOAT % v for v in row)


# -- XYZ ------------------------------------------------------------------------------------

def read_xyz(path):
    """Returns (points, normals or None). Accepts 3 or 6 columns, blank and '#' lines."""
    rows, width = [], None
    for no, line in _lines(path):
        if not line or line.startswith("#"):
            continue
        toks = line.split()
        if width is None:
            if len(toks) not in (3, 6):
                raise FormatError(path, no, "expected 3 or 6 columns, got %d" % len(toks), line)
            width = len(toks)
        elif len(toks) != width:
            raise FormatError(path, no, "expected %d columns, got %d" % (width, len(toks)), line)
        rows.append(_floats(path, no, toks))
    if not rows:
        raise FormatError(path, 0, "empty input")
    a = np.array(rows, dtype=np.float64)
    return (a[:, :3], a[:, 3:] if width == 6 else None)


def write_xyz(path, points, normals=None):
    a = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if normals is not None:
        a = np.hstack([a, np.asarray(normals, dtype=np.float64).reshape(-1, 3)])
    with open(path, "w") as f:
        for row in a:
            f.write(_fmt(row) + "\n")


# -- PLY ------------------------------------------------------------------------------------

_PLY_INT = {"char", "uchar", "short", "ushort", "int", "uint", "int8", "uint8", "int16", "uint16",
            "int32", "uint32"}
_PLY_FLOAT = {"float", "double", "float32", "float64"}


def read_ply(path):
    """ASCII PLY with a vertex element (x y z, optional nx ny nz, red green blue) and an
    optional triangle face element. Returns a dict with points, normals, colors, faces."""
    lines = list(_lines(path))
    if not lines or lines[0][1] != "ply":
        raise FormatError(path, 1, "missing 'ply' magic", lines[0][1] if lines else "")
    elements = []
    k = 1
    while True:
        if k >= len(lines):
            raise FormatError(path, k, "missing end_header")
        no, line = lines[k]
        k += 1
        toks = line.split()
        if not toks or toks[0] in ("comment", "obj_info"):
            continue
        if toks[0] == "format":
            if toks[1:2] != ["ascii"]:
                raise FormatError(path, no, "only ascii PLY is supported", " ".join(toks[1:]))
        elif toks[0] == "element":
            if len(toks) != 3:
                raise FormatError(path, no, "malformed element line", line)
            elements.append((toks[1], _int(path, no, toks[2]), []))
        elif toks[0] == "property":
            if not elements:
                raise FormatError(path, no, "property before element", line)
            if toks[1] == "list":
                if len(toks) != 5:
                    raise FormatError(path, no, "malformed list property", line)
                elements[-1][2].append((toks[4], "list"))
            else:
                if len(toks) != 3 or toks[1] not in _PLY_INT | _PLY_FLOAT:
                    raise FormatError(path, no, "malformed property", line)
                elements[-1][2].append((toks[2], toks[1]))
        elif toks[0] == "end_header":
            break
        else:
            raise FormatError(path, no, "unknown header keyword", toks[0])
    body = [(no, line) for no, line in lines[k:] if line]
    pos = 0
    out = {"points": None, "normals": None, "colors": None, "faces": None}
    for name, count, props in elements:
        if pos + count > len(body):
            last = body[-1][0] if body else lines[-1][0]
            raise FormatError(path, last, "element %r declares %d rows, file ends early" % (name, count))
        rows = body[pos:pos + count]
        pos += count
        if name == "vertex":
            names = [p[0] for p in props]
            for need in ("x", "y", "z"):
                if need not in names:
                    raise FormatError(path, k, "vertex element lacks %r" % need)
            data = np.empty((count, len(props)))
            for r, (no, line) in enumerate(rows):
                toks = line.split()
                if len(toks) != len(props):
                    raise FormatError(path, no, "expected %d vertex values, got %d" % (len(props), len(toks)), line)
                data[r] = _floats(path, no, toks)
            col = {n: i for i, n in enumerate(names)}
            out["points"] = data[:, [col["x"], col["y"], col["z"]]]
            if all(c in col for c in ("nx", "ny", "nz")):
                out["normals"] = data[:, [col["nx"], col["ny"], col["nz"]]]
            if all(c in col for c in ("red", "green", "blue")):
                out["colors"] = data[:, [col["red"], col["green"], col["blue"]]].astype(np.uint8)
        elif name == "face":
            nv = len(out["points"]) if out["points"] is not None else None
            faces = []
            for no, line in rows:
                toks = line.split()
                n = _int(path, no, toks[0], lo=3)
                if len(toks) != n + 1:
                    raise FormatError(path, no, "face declares %d indices, got %d" % (n, len(toks) - 1), line)
                idx = [_int(path, no, t, 0, nv) for t in toks[1:]]
                faces.extend([idx[0], idx[j], idx[j + 1]] for j in range(1, n - 1))
            out["faces"] = np.array(faces, dtype=np.int64).reshape(-1, 3)
    if pos != len(body):
        raise FormatError(path, body[pos][0], "trailing data after declared elements", body[pos][1])
    if out["points"] is None:
        raise FormatError(path, 1, "no vertex element")
    return out


def write_ply(path, points, normals=None, colors=None, faces=None):
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cols = [points]
    head = ["ply", "format ascii 1.0", "element vertex %d" % len(points),
            "property double x", "property double y", "property double z"]
    if normals is not None:
        cols.append(np.asarray(normals, dtype=np.float64).reshape(-1, 3))
        head += ["property double nx", "property double ny", "property double nz"]
    if colors is not None:
        head += ["property uchar red", "property uchar green", "property uchar blue"]
    if faces is not None:
        faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        head += ["element face %d" % len(faces), "property list uchar int vertex_indices"]
    head.append("end_header")
    data = np.hstack(cols)
    with open(path, "w") as f:
        f.write("\n".join(head) + "\n")
        for i, row in enumerate(data):
            line = _fmt(row)
            if colors is not None:
                line += " %d %d %d" % tuple(np.asarray(colors[i], dtype=np.uint8))
            f.write(line + "\n")
        if faces is not None:
            for t in faces:
                f.write("3 %d %d %d\n" % tuple(t))


# -- OFF ------------------------------------------------------------------------------------

def read_off(path):
    """(vertices, triangles); polygons are fan-triangulated."""
    body = [(no, line.split("#", 1)[0].strip()) for no, line in _lines(path)]
    body = [(no, line) for no, line in body if line]
    if not body or not body[0][1].startswith("OFF"):
        raise FormatError(path, body[0][0] if body else 1, "missing OFF magic", body[0][1] if body else "")
    no, line = body[0]
    rest = line[3:].split()
    k = 1
    if not rest:
        if len(body) < 2:
            raise FormatError(path, no, "missing counts line")
        no, line = body[1]
        rest = line.split()
        k = 2
    if len(rest) != 3:
        raise FormatError(path, no, "expected 'nv nf ne'", line)
    nv, nf = _int(path, no, rest[0]), _int(path, no, rest[1])
    _int(path, no, rest[2])
    if len(body) - k < nv + nf:
        raise FormatError(path, body[-1][0], "expected %d vertex and %d face lines" % (nv, nf))
    verts = np.empty((nv, 3))
    for r in range(nv):
        no, line = body[k + r]
        toks = line.split()
        if len(toks) != 3:
            raise FormatError(path, no, "expected 3 vertex coordinates, got %d" % len(toks), line)
        verts[r] = _floats(path, no, toks)
    faces = []
    for r in range(nf):
        no, line = body[k + nv + r]
        toks = line.split()
        n = _int(path, no, toks[0], lo=3)
        if len(toks) < n + 1:
            raise FormatError(path, no, "face declares %d indices, got %d" % (n, len(toks) - 1), line)
        idx = [_int(path, no, t, 0, nv) for t in toks[1:n + 1]]
        faces.extend([idx[0], idx[j], idx[j + 1]] for j in range(1, n - 1))
    if len(body) > k + nv + nf:
        no, line = body[k + nv + nf]
        raise FormatError(path, no, "trailing data", line)
    return verts, np.array(faces, dtype=np.int64).reshape(-1, 3)


def write_off(path, vertices, faces):
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    with open(path, "w") as f:
        f.write("OFF\n%d %d 0\n" % (len(vertices), len(faces)))
        for v in vertices:
            f.write(_fmt(v) + "\n")
        for t in faces:
            f.write("3 %d %d %d\n" % tuple(t))


def read_mesh(path):
    from .ground_truth import TriangleMesh
    if str(path).lower().endswith(".ply"):
        d = read_ply(path)
        if d["faces"] is None or len(d["faces"]) == 0:
            raise FormatError(path, 1, "PLY has no faces")
        return TriangleMesh(d["points"], d["faces"])
    return TriangleMesh(*read_off(path))


def read_cloud(path):
    """(points, normals or None) from .xyz / .ply by extension."""
    if str(path).lower().endswith(".ply"):
        d = read_ply(path)
        return d["points"], d["normals"]
    return read_xyz(path)


def write_cloud(path, points, normals=None):
    if str(path).lower().endswith(".ply"):
        write_ply(path, points, normals)
    else:
        write_xyz(path, points, normals)


# -- label dump -----------------------------------------------------------------------------

def write_labels(path, labels, scores=None):
    """One row per point: index g1 g2 k n_1..n_k w1 w2 balance score.

    k is 3 for one-normal labels, 6 for two-normal (feature) labels and 0 when no normal
    label is known (classifier output). ``labels`` needs is_feature, normals, priorities and
    balance; a missing score is written as nan.
    """
    n = len(labels.is_feature)
    scores = np.full(n, np.nan) if scores is None else np.asarray(scores, dtype=np.float64)
    feat = np.asarray(labels.is_feature, dtype=bool)
    with open(path, "w") as f:
        f.write(LABEL_MAGIC + "\n")
        for i in range(n):
            nv = labels.normals[i]
            nv = nv if np.all(np.isfinite(nv)) else nv[:3]
            nv = nv if np.all(np.isfinite(nv)) else nv[:0]
            row = [str(i), str(int(feat[i])), str(int(not feat[i])), str(len(nv))]
            if len(nv):
                row.append(_fmt(nv))
            row += [_fmt(labels.priorities[i]), str(int(labels.balance[i])), FLOAT % scores[i]]
            f.write(" ".join(row) + "\n")


def read_labels(path):
    """Returns a dict of arrays: class_label (N,2), normals (N,6) NaN-padded, priorities, balance, scores."""
    it = _lines(path)
    try:
        no, first = next(it)
    except StopIteration:
        raise FormatError(path, 1, "empty input") from None
    if first != LABEL_MAGIC:
        raise FormatError(path, no, "missing label header", first)
    g, nrm, pr, bal, sc = [], [], [], [], []
    for no, line in it:
        if not line:
            continue
        toks = line.split()
        if len(toks) < 4:
            raise FormatError(path, no, "truncated row", line)
        if _int(path, no, toks[0]) != len(g):
            raise FormatError(path, no, "index out of sequence", toks[0])
        k = _int(path, no, toks[3])
        if k not in (0, 3, 6):
            raise FormatError(path, no, "normal count must be 0, 3 or 6", toks[3])
        if len(toks) != 4 + k + 4:
            raise FormatError(path, no, "expected %d columns, got %d" % (8 + k, len(toks)), line)
        cls = [_int(path, no, toks[1], 0, 2), _int(path, no, toks[2], 0, 2)]
        if sum(cls) != 1:
            raise FormatError(path, no, "class label must be 1 0 or 0 1", " ".join(toks[1:3]))
        g.append(cls)
        v = _floats(path, no, toks[4:4 + k])
        nrm.append(v + [np.nan] * (6 - k))
        pr.append(_floats(path, no, toks[4 + k:6 + k]))
        bal.append(_int(path, no, toks[6 + k], 0, 2))
        try:
            sc.append(float(toks[7 + k]))
        except ValueError:
            raise FormatError(path, no, "not a number", toks[7 + k]) from None
    return {"class_label": np.array(g, dtype=np.float64).reshape(-1, 2), "normals": np.array(nrm).reshape(-1, 6),
            "priorities": np.array(pr).reshape(-1, 2), "balance": np.array(bal, dtype=bool),
            "scores": np.array(sc)}


# -- dataset manifest -----------------------------------------------------------------------

@dataclass
class ManifestEntry:
    mesh: str
    n_points: int
    noise: tuple
    split: str


def read_manifest(path):
    """Rows ``mesh_path n_points noise[,noise...] train|test``; relative paths resolve
    against the manifest's directory. A mesh may not appear in both splits."""
    base = os.path.dirname(os.path.abspath(path))
    entries, seen = [], {}
    for no, line in _lines(path):
        if not line or line.startswith("#"):
            continue
        toks = line.split()
        if len(toks) != 4:
            raise FormatError(path, no, "expected 'mesh n_points noises split'", line)
        mesh = toks[0] if os.path.isabs(toks[0]) else os.path.normpath(os.path.join(base, toks[0]))
        if not os.path.exists(mesh):
            raise FormatError(path, no, "mesh not found", toks[0])
        n = _int(path, no, toks[1], lo=1)
        noise = tuple(_floats(path, no, toks[2].split(",")))
        if any(v < 0 for v in noise):
            raise FormatError(path, no, "negative noise level", toks[2])
        if toks[3] not in ("train", "test"):
            raise FormatError(path, no, "split must be train or test", toks[3])
        if seen.setdefault(mesh, toks[3]) != toks[3]:
            raise FormatError(path, no, "mesh listed in both splits", toks[0])
        entries.append(ManifestEntry(mesh, n, noise, toks[3]))
    if not entries:
        raise FormatError(path, 0, "empty manifest")
    return entries


def write_manifest(path, entries):
    with open(path, "w") as f:
        for e in entries:
            f.write("%s %d %s %s\n" % (e.mesh, e.n_points, ",".join(FLOAT % v for v in e.noise), e.split))
