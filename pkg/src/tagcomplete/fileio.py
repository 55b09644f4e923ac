"""Plain-text file formats.

All indices on disk are 0-based.  Lines starting with ``#`` are comments
and are skipped by every reader.  Floats are written with ``repr`` so a
write/read cycle reproduces them exactly.
"""

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .conv import FilterBank, PatchMatrix, extract_patches
from .objective import HyperParams, Predictor
from .optimizer import TRACE_HEADER


class FormatError(ValueError):
    def __init__(self, path, lineno, msg):
        where = f"{path}:{lineno}" if lineno else str(path)
        super().__init__(f"{where}: {msg}")


def _lines(path):
    """Yield (lineno, stripped line) for non-blank, non-comment lines."""
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if line and not line.startswith("#"):
                yield lineno, line


def _fmt(x) -> str:
    x = float(x)
    if not np.isfinite(x):
        raise ValueError("refusing to write a non-finite value")
    return repr(x)


def _parse_float(tok, path, lineno):
    try:
        v = float(tok)
    except ValueError:
        raise FormatError(path, lineno, f"non-numeric token {tok!r}") from None
    if not np.isfinite(v):
        raise FormatError(path, lineno, f"non-finite token {tok!r}")
    return v


def _parse_dims(line, path, lineno, names=("rows", "cols")):
    parts = line.split()
    if len(parts) != len(names):
        raise FormatError(path, lineno, f"malformed header, expected '{' '.join(names)}'")
    try:
        dims = [int(p) for p in parts]
    except ValueError:
        raise FormatError(path, lineno, "malformed header, dimensions must be integers") from None
    if any(v < 0 for v in dims):
        raise FormatError(path, lineno, "malformed header, negative dimension")
    return dims


def _matrix_from_lines(lines, path):
    lines = iter(lines)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise FormatError(path, 0, "missing header") from None
    rows, cols = _parse_dims(header, path, lineno)
    A = np.empty((rows, cols))
    for r in range(rows):
        try:
            lineno, line = next(lines)
        except StopIteration:
            raise FormatError(path, 0, f"expected {rows} rows, found {r}") from None
        toks = line.split()
        if len(toks) != cols:
            raise FormatError(path, lineno, f"expected {cols} values, found {len(toks)}")
        A[r] = [_parse_float(t, path, lineno) for t in toks]
    return A, lines


def read_matrix(path) -> np.ndarray:
    A, rest = _matrix_from_lines(_lines(path), path)
    for lineno, _ in rest:
        raise FormatError(path, lineno, "more rows than declared")
    return A


def _matrix_text(A) -> str:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    out = [f"{A.shape[0]} {A.shape[1]}"]
    out += [" ".join(_fmt(v) for v in row) for row in A]
    return "\n".join(out) + "\n"


def write_matrix(path, A, comment: str | None = None):
    text = _matrix_text(A)
    if comment:
        text = f"# {comment}\n" + text
    Path(path).write_text(text)


def read_tags(path):
    """Return ``(T_hat, Phi, m, n)``; undeclared entries are missing."""
    lines = _lines(path)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise FormatError(path, 0, "missing header") from None
    m, n = _parse_dims(header, path, lineno, ("m", "n"))
    T_hat = np.zeros((m, n))
    Phi = np.zeros((m, n))
    for lineno, line in lines:
        toks = line.split()
        if len(toks) != 3:
            raise FormatError(path, lineno, "expected 'j i v'")
        try:
            j, i, v = (int(t) for t in toks)
        except ValueError:
            raise FormatError(path, lineno, "entries must be integers") from None
        if not (0 <= j < m and 0 <= i < n):
            raise FormatError(path, lineno, f"index ({j}, {i}) out of range for {m} x {n}")
        if v not in (0, 1):
            raise FormatError(path, lineno, f"value must be 0 or 1, got {v}")
        if Phi[j, i]:
            raise FormatError(path, lineno, f"duplicate entry ({j}, {i})")
        Phi[j, i] = 1.0
        T_hat[j, i] = v
    return T_hat, Phi, m, n


def write_tags(path, T_hat, Phi):
    T_hat = np.asarray(T_hat)
    Phi = np.asarray(Phi)
    m, n = T_hat.shape
    out = ["# observed tags: j i v (0-based tag j, image i)", f"{m} {n}"]
    for j, i in zip(*np.nonzero(Phi)):
        out.append(f"{j} {i} {int(T_hat[j, i])}")
    Path(path).write_text("\n".join(out) + "\n")


def _parse_value(name, raw, path, lineno):
    kinds = {f: type(getattr(HyperParams(), f)) for f in HyperParams.field_names()}
    if name not in kinds:
        raise FormatError(path, lineno, f"unknown key {name!r}")
    try:
        if name == "gamma":
            return raw if raw == "median" else float(raw)
        kind = kinds[name]
        if kind is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0"):
                raise ValueError
            return low in ("true", "1")
        return kind(raw)
    except ValueError:
        raise FormatError(path, lineno, f"bad value {raw!r} for {name}") from None


def _hyper_from_lines(lines, path):
    values = {}
    for lineno, line in lines:
        parts = line.split()
        if len(parts) != 2:
            raise FormatError(path, lineno, "expected 'key value'")
        key, raw = parts
        if key in values:
            raise FormatError(path, lineno, f"duplicate key {key!r}")
        values[key] = _parse_value(key, raw, path, lineno)
    try:
        return HyperParams(**values)
    except ValueError as exc:
        raise FormatError(path, 0, str(exc)) from None


def _hyper_text(hp: HyperParams) -> str:
    out = []
    for name in HyperParams.field_names():
        v = getattr(hp, name)
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)  # tol may legitimately be inf
        out.append(f"{name} {v}")
    return "\n".join(out) + "\n"


def read_config(path) -> HyperParams:
    return _hyper_from_lines(_lines(path), path)


def write_config(path, hp: HyperParams):
    Path(path).write_text(_hyper_text(hp))


MODEL_BLOCKS = ("W", "U", "b", "hyper")


def save_model(path, bank: FilterBank, pred: Predictor, hp: HyperParams):
    if hp.nonlinearity != bank.nonlinearity:
        hp = HyperParams(**{**vars(hp), "nonlinearity": bank.nonlinearity})
    parts = [
        "# tag completion model: filters W (d x r), predictor U (m x r), offset b (m x 1)",
        "[W]", _matrix_text(bank.W),
        "[U]", _matrix_text(pred.U),
        "[b]", _matrix_text(pred.b.reshape(-1, 1)),
        "[hyper]", _hyper_text(hp),
    ]
    Path(path).write_text("\n".join(p.rstrip("\n") for p in parts) + "\n")


def load_model(path):
    """Return ``(FilterBank, Predictor, HyperParams)``."""
    blocks: dict[str, list] = {}
    current = None
    for lineno, line in _lines(path):
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            if current not in MODEL_BLOCKS:
                raise FormatError(path, lineno, f"unknown block [{current}]")
            if current in blocks:
                raise FormatError(path, lineno, f"duplicate block [{current}]")
            blocks[current] = []
        elif current is None:
            raise FormatError(path, lineno, "content before the first block")
        else:
            blocks[current].append((lineno, line))
    for name in MODEL_BLOCKS:
        if name not in blocks:
            raise FormatError(path, 0, f"missing block [{name}]")
    mats = {}
    for name in ("W", "U", "b"):
        A, rest = _matrix_from_lines(blocks[name], path)
        for lineno, _ in rest:
            raise FormatError(path, lineno, f"trailing content in block [{name}]")
        mats[name] = A
    hp = _hyper_from_lines(blocks["hyper"], path)
    W, U, b = mats["W"], mats["U"], mats["b"]
    if U.shape[1] != W.shape[1]:
        raise FormatError(path, 0, f"filter count mismatch: W has {W.shape[1]}, U has {U.shape[1]}")
    if b.shape != (U.shape[0], 1):
        raise FormatError(path, 0, f"b must be {U.shape[0]} x 1, got {b.shape[0]} x {b.shape[1]}")
    return FilterBank(W, hp.nonlinearity), Predictor(U, b.ravel()), hp


@dataclass
class DatasetManifest:
    """Images (patch matrices or rasters) plus the tag file they pair with.

    Text layout::

        dims m n d
        tags <path>
        patches <image_id> <path>     # d x n_I patch matrix
        raster <image_id> <path>      # H x W grayscale image

    Relative paths resolve against the manifest's directory.
    """

    entries: list = field(default_factory=list)  # (image_id, kind, path)
    tag_path: str = ""
    m: int = 0
    n: int = 0
    d: int = 0
    root: Path = Path(".")

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.root / p


def read_manifest(path) -> DatasetManifest:
    man = DatasetManifest(root=Path(path).parent)
    dims_seen = False
    for lineno, line in _lines(path):
        toks = line.split()
        key = toks[0]
        if key == "dims" and len(toks) == 4:
            man.m, man.n, man.d = _parse_dims(" ".join(toks[1:]), path, lineno, ("m", "n", "d"))
            dims_seen = True
        elif key == "tags" and len(toks) == 2:
            man.tag_path = toks[1]
        elif key in ("patches", "raster") and len(toks) == 3:
            man.entries.append((toks[1], key, toks[2]))
        else:
            raise FormatError(path, lineno, f"unrecognised manifest line {line!r}")
    if not dims_seen:
        raise FormatError(path, 0, "missing 'dims m n d' line")
    if len(man.entries) != man.n:
        raise FormatError(path, 0, f"dims declare {man.n} images, manifest lists {len(man.entries)}")
    return man


def write_manifest(path, man: DatasetManifest):
    out = ["# dataset manifest; paths relative to this file, indices 0-based",
           f"dims {man.m} {man.n} {man.d}"]
    if man.tag_path:
        out.append(f"tags {man.tag_path}")
    out += [f"{kind} {iid} {p}" for iid, kind, p in man.entries]
    Path(path).write_text("\n".join(out) + "\n")


def normalize_raster(img):
    """Min-max scale pixel values to [0, 1]; a constant image maps to 0."""
    img = np.asarray(img, dtype=float)
    lo, hi = img.min(), img.max()
    if hi == lo:
        return np.zeros_like(img)
    return (img - lo) / (hi - lo)


def load_patches(man: DatasetManifest, window: int = 8, stride: int = 4) -> list:
    patches = []
    for iid, kind, p in man.entries:
        A = read_matrix(man.resolve(p))
        if kind == "raster":
            pm = extract_patches(normalize_raster(A), window, stride, iid)
        else:
            pm = PatchMatrix(A, iid)
        if man.d and pm.d != man.d:
            raise ValueError(f"image {iid}: feature dimension {pm.d}, manifest declares {man.d}")
        patches.append(pm)
    return patches


def write_trace(path, rows):
    header = ",".join(TRACE_HEADER)
    out = ["# objective per outer step, graph rebuilt from the final representations", header]
    for row in rows:
        it, *vals = row
        out.append(",".join([str(int(it))] + [_fmt(v) for v in vals]))
    Path(path).write_text("\n".join(out) + "\n")


def read_trace(path):
    rows = []
    for lineno, line in _lines(path):
        if line.startswith("iter"):
            continue
        toks = line.split(",")
        if len(toks) != 6:
            raise FormatError(path, lineno, "expected 6 comma-separated fields")
        rows.append((int(toks[0]), *(_parse_float(t, path, lineno) for t in toks[1:])))
    return rows


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return Path(path)
