"""Self-describing field containers and CSV emission.

Binary container layout: magic, little-endian uint32 header length, a JSON
header (grid metadata, weight exponent, optional penalty parameters, array
descriptors), then the raw float64 little-endian payload of every array in
header order, row-major.  Raw bytes round-trip bit-exactly; the CSV trace
variant uses shortest-round-trip float formatting for easy plotting without
losing reproducibility.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .mesh import ExtensionGrid, ScalarField, TraceField, build_extension_grid
from .penalty import Configuration

MAGIC = b"FRDZ1\n"
FORMAT_VERSION = 1


class ArtifactFormatError(ValueError):
    """Malformed or inconsistent field container."""


def _grid_meta(grid: ExtensionGrid) -> dict:
    return {"n": grid.trace_dim, "L": grid.half_width, "Y": grid.height,
            "nx": grid.nx, "ny": grid.ny, "alpha": grid.alpha,
            "beta": grid.beta, "grading": grid.grading,
            "periodic": grid.periodic}


def _grid_from_meta(meta: dict) -> ExtensionGrid:
    try:
        return build_extension_grid(meta["n"], meta["L"], meta["Y"],
                                    meta["nx"], meta["ny"], meta["alpha"],
                                    grading=meta["grading"],
                                    periodic=meta.get("periodic", False))
    except KeyError as exc:
        raise ArtifactFormatError(f"grid header missing field {exc}") from exc


def write_field_container(path, grid: ExtensionGrid, arrays: dict,
                          meta: dict | None = None) -> None:
    """Write named float64 arrays with grid metadata; bit-exact round trip."""
    header = {"format_version": FORMAT_VERSION, "grid": _grid_meta(grid),
              "arrays": []}
    if meta:
        header.update(meta)
    payload = []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))
        header["arrays"].append({"name": name, "shape": list(a.shape)})
        payload.append(a.tobytes())
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(len(hbytes).to_bytes(4, "little"))
        f.write(hbytes)
        for chunk in payload:
            f.write(chunk)


def read_field_container(path):
    """Read a container; returns (grid, arrays dict, header dict)."""
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 4:
        raise ArtifactFormatError(f"{path}: truncated container (size {len(raw)})")
    if raw[:len(MAGIC)] != MAGIC:
        raise ArtifactFormatError(f"{path}: bad magic {raw[:len(MAGIC)]!r}")
    off = len(MAGIC)
    hlen = int(np.frombuffer(raw, dtype="<u4", count=1, offset=off)[0])
    off += 4
    if len(raw) < off + hlen:
        raise ArtifactFormatError(f"{path}: header truncated at offset {off}")
    try:
        header = json.loads(raw[off:off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArtifactFormatError(f"{path}: invalid header JSON: {exc}") from exc
    off += hlen
    if header.get("format_version") != FORMAT_VERSION:
        raise ArtifactFormatError(
            f"{path}: unsupported format_version {header.get('format_version')}")
    if "grid" not in header or "arrays" not in header:
        raise ArtifactFormatError(f"{path}: header missing 'grid' or 'arrays'")
    grid = _grid_from_meta(header["grid"])
    arrays = {}
    for desc in header["arrays"]:
        try:
            name, shape = desc["name"], tuple(desc["shape"])
        except (KeyError, TypeError) as exc:
            raise ArtifactFormatError(f"{path}: bad array descriptor {desc}") from exc
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if len(raw) < off + nbytes:
            raise ArtifactFormatError(
                f"{path}: array {name!r} truncated at offset {off}")
        arrays[name] = np.frombuffer(raw, dtype="<f8", count=count,
                                     offset=off).reshape(shape).copy()
        off += nbytes
    if off != len(raw):
        raise ArtifactFormatError(f"{path}: {len(raw) - off} trailing bytes")
    return grid, arrays, header


def save_configuration(path, cfg: Configuration, meta: dict | None = None) -> None:
    """Persist a configuration (extension, trace, datum, masks)."""
    arrays = {
        "extension": cfg.extension.values,
        "trace": cfg.trace_values.values,
        "phi": cfg.phi.values,
        "fixed_region_D": cfg.fixed_region_D.astype(float),
    }
    if cfg.active_set is not None:
        arrays["active_set"] = cfg.active_set.astype(float)
    full_meta = {"theta_pos": cfg.theta_pos}
    if meta:
        full_meta.update(meta)
    write_field_container(path, cfg.grid, arrays, full_meta)


def load_configuration(path):
    """Rebuild a Configuration from a container; returns (cfg, header)."""
    grid, arrays, header = read_field_container(path)
    for required in ("extension", "trace", "phi", "fixed_region_D"):
        if required not in arrays:
            raise ArtifactFormatError(f"{path}: missing array {required!r}")
    theta = header.get("theta_pos")
    if theta is None:
        raise ArtifactFormatError(f"{path}: header missing theta_pos")
    trace = arrays["trace"]
    active = arrays.get("active_set")
    try:
        cfg = Configuration(
            grid=grid,
            fixed_region_D=arrays["fixed_region_D"] > 0.5,
            phi=TraceField(grid, arrays["phi"]),
            trace_values=TraceField(grid, trace),
            positivity_mask=trace > theta,
            extension=ScalarField(grid, arrays["extension"]),
            theta_pos=float(theta),
            active_set=None if active is None else active > 0.5)
    except ValueError as exc:
        raise ArtifactFormatError(f"{path}: inconsistent configuration: {exc}") \
            from exc
    return cfg, header


# ---------------------------------------------------------------------------
# CSV emission (shortest round-trip float formatting)
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_trace_csv(path, trace: TraceField) -> None:
    grid = trace.grid
    with open(path, "w") as f:
        if grid.trace_dim == 1:
            f.write("x,u\n")
            for x, u in zip(grid.x_nodes, trace.values):
                f.write(f"{_fmt(x)},{_fmt(u)}\n")
        else:
            f.write("x1,x2,u\n")
            for i, x1 in enumerate(grid.x_nodes):
                for j, x2 in enumerate(grid.x_nodes):
                    f.write(f"{_fmt(x1)},{_fmt(x2)},{_fmt(trace.values[i, j])}\n")


def read_trace_csv(path, grid: ExtensionGrid) -> TraceField:
    rows = Path(path).read_text().strip().split("\n")
    vals = [float(r.rsplit(",", 1)[1]) for r in rows[1:]]
    return TraceField(grid, np.asarray(vals).reshape(grid.trace_shape))


def write_sweep_csv(path, record) -> None:
    with open(path, "w") as f:
        f.write("eps,volume,energy,lambda_est,fb_points\n")
        for e in record.entries:
            f.write(f"{_fmt(e.eps)},{_fmt(e.volume)},{_fmt(e.energy)},"
                    f"{_fmt(e.lambda_est)},{e.fb_points}\n")


def write_report_json(path, payload: dict) -> None:
    def clean(obj):
        if isinstance(obj, dict):
            return {k: clean(v) for k, v in obj.items()}
        if isinstance(obj, (list, tuple)):
            return [clean(v) for v in obj]
        if isinstance(obj, (np.bool_, bool)):
            return bool(obj)
        if isinstance(obj, (np.integer, int)):
            return int(obj)
        if isinstance(obj, (np.floating, float)):
            v = float(obj)
            return None if not np.isfinite(v) else v
        if isinstance(obj, np.ndarray):
            return [clean(v) for v in obj.tolist()]
        return obj

    with open(path, "w") as f:
        json.dump(clean(payload), f, indent=2, sort_keys=True, allow_nan=False)
        f.write("\n")
