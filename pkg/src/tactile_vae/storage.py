"""Files on disk: dataset CSV + sidecar, VAE checkpoints, reports, run manifests."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import jsonschema
import numpy as np

from .nn import Layer, MlpParams
from .sim import ATTRIBUTES, Dataset, GridSpec, Stimuli, StimulusError
from .vae import TrainConfig, VaeModel

PathLike = Union[str, os.PathLike]

CHECKPOINT_FORMAT = "tactile-vae-checkpoint"
CHECKPOINT_VERSION = 1
TAXEL_COUNTS = {"dense_nonlinear": 19, "sparse_linear": 12}


class FormatError(ValueError):
    """A file does not follow the expected layout."""


class UnsupportedVersion(FormatError):
    pass


def atomic_write_bytes(path: PathLike, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        # mkstemp creates 0600 files; give the result ordinary permissions
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path: PathLike, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=1, sort_keys=False) + "\n")


def sha256_file(path: PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _fmt(v: float) -> str:
    return format(float(v), ".9g")


# --- datasets -----------------------------------------------------------------

def sidecar_path(csv_path: PathLike) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".meta.json")


def dataset_header(n_taxels: int) -> List[str]:
    return ["t", *(f"taxel_{i}" for i in range(n_taxels)), *ATTRIBUTES, "curvature_class"]


def write_dataset(ds: Dataset, path: PathLike) -> Path:
    """CSV with one row per sample (9 significant digits) plus a JSON sidecar."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(dataset_header(ds.n_taxels))
    st = ds.stimuli
    for i in range(len(ds)):
        w.writerow([_fmt(ds.t[i]), *(_fmt(v) for v in ds.frames[i]),
                    _fmt(st.force[i]), _fmt(st.pitch[i]), _fmt(st.roll[i]), _fmt(st.shore[i]),
                    st.curvature[i]])
    atomic_write_text(path, buf.getvalue())
    meta = {
        "sensor": ds.sensor,
        "kind": ds.kind,
        "seed": ds.seed,
        "n_records": len(ds),
        "n_taxels": ds.n_taxels,
        "spec": asdict(ds.spec) if ds.spec is not None else None,
        "sim_parameters": ds.sim_parameters,
    }
    write_json(sidecar_path(path), meta)
    return Path(path)


def read_dataset(path: PathLike) -> Dataset:
    meta_path = sidecar_path(path)
    try:
        meta = json.loads(Path(meta_path).read_text())
    except FileNotFoundError:
        raise FormatError(f"missing sidecar {meta_path}") from None
    sensor = meta.get("sensor")
    if sensor not in TAXEL_COUNTS:
        raise FormatError(f"sidecar names unknown sensor archetype {sensor!r}")
    d = TAXEL_COUNTS[sensor]

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError("empty dataset file") from None
        taxel_cols = [h for h in header if h.startswith("taxel_")]
        if len(taxel_cols) != d:
            raise FormatError(
                f"header has {len(taxel_cols)} taxel columns but sidecar archetype {sensor} has {d}"
            )
        if header != dataset_header(d):
            raise FormatError(f"malformed header: {','.join(header)}")
        rows = list(reader)
    if not rows:
        raise FormatError("dataset has no records")

    n = len(rows)
    num = np.empty((n, 1 + d + len(ATTRIBUTES)))
    curv = []
    for i, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise FormatError(f"row {i}: expected {len(header)} fields, found {len(row)}")
        try:
            num[i - 1] = [float(v) for v in row[:-1]]
        except ValueError as exc:
            raise FormatError(f"row {i}: {exc}") from None
        curv.append(row[-1])
    try:
        stimuli = Stimuli(*(num[:, 1 + d + k] for k in range(len(ATTRIBUTES))), np.array(curv))
    except StimulusError as exc:
        # Stimuli reports a 0-based index; files count data rows from 1
        msg = str(exc)
        if msg.startswith("row "):
            idx, rest = msg[4:].split(":", 1)
            msg = f"row {int(idx) + 1}:{rest}"
        raise FormatError(msg) from None
    spec = GridSpec(**meta["spec"]) if meta.get("spec") else None
    return Dataset(sensor, meta.get("kind", "?"), meta.get("seed", 0), num[:, 1:1 + d], num[:, 0],
                   stimuli, spec, meta.get("sim_parameters"))


# --- checkpoints --------------------------------------------------------------

def checkpoint_schema() -> dict:
    text = resources.files("tactile_vae").joinpath("schemas/checkpoint.schema.json").read_text()
    return json.loads(text)


def _net_to_json(net: MlpParams) -> list:
    return [{"shape": list(l.weights.shape), "activation": l.activation,
             "weights": l.weights.tolist(), "bias": l.bias.tolist()} for l in net.layers]


def _net_from_json(items: list, what: str) -> MlpParams:
    layers = []
    for k, item in enumerate(items):
        w = np.array(item["weights"], dtype=np.float64)
        b = np.array(item["bias"], dtype=np.float64)
        if w.ndim != 2 or list(w.shape) != list(item["shape"]) or b.shape != (w.shape[0],):
            raise FormatError(f"{what} layer {k}: arrays do not match declared shape {item['shape']}")
        layers.append(Layer(w, b, item["activation"]))
    try:
        return MlpParams(layers)
    except ValueError as exc:
        raise FormatError(f"{what}: {exc}") from None


def checkpoint_to_dict(model: VaeModel) -> dict:
    cfg = asdict(model.config) if model.config is not None else None
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "latent_width": model.latent_width,
        "taxel_width": model.taxel_width,
        "output_logvar": float(model.output_logvar),
        "standardization": {"mean": model.input_mean.tolist(), "scale": model.input_scale.tolist()},
        "recognition": _net_to_json(model.recognition),
        "generative": _net_to_json(model.generative),
        "config": cfg,
        "seed": cfg["seed"] if cfg else None,
    }


def checkpoint_from_dict(doc: dict) -> VaeModel:
    if isinstance(doc, dict) and doc.get("format") == CHECKPOINT_FORMAT and doc.get("version") != CHECKPOINT_VERSION:
        raise UnsupportedVersion(
            f"checkpoint version {doc.get('version')!r} is not supported (expected {CHECKPOINT_VERSION})"
        )
    try:
        jsonschema.validate(doc, checkpoint_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise FormatError(f"checkpoint schema violation at {where}: {exc.message}") from None
    rec = _net_from_json(doc["recognition"], "recognition")
    gen = _net_from_json(doc["generative"], "generative")
    if gen.n_in != doc["latent_width"] or rec.n_in != doc["taxel_width"]:
        raise FormatError("layer shapes disagree with latent_width / taxel_width")
    cfg = TrainConfig(**doc["config"]) if doc["config"] else None
    try:
        return VaeModel(rec, gen, float(doc["output_logvar"]),
                        np.array(doc["standardization"]["mean"], dtype=np.float64),
                        np.array(doc["standardization"]["scale"], dtype=np.float64), cfg)
    except ValueError as exc:
        raise FormatError(str(exc)) from None


def save_checkpoint(model: VaeModel, path: PathLike) -> Path:
    write_json(path, checkpoint_to_dict(model))
    return Path(path)


def load_checkpoint(path: PathLike) -> VaeModel:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from None
    return checkpoint_from_dict(doc)


# --- plotting data ------------------------------------------------------------

def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    atomic_write_text(path, buf.getvalue())
    return Path(path)


# --- manifests ----------------------------------------------------------------

@dataclass
class RunManifest:
    command: str
    config: dict
    seed: Optional[int]
    inputs: Dict[str, str] = field(default_factory=dict)
    artifacts: Dict[str, str] = field(default_factory=dict)
    duration_s: float = 0.0

    def add_input(self, path: PathLike) -> None:
        self.inputs[str(path)] = sha256_file(path)

    def add_artifact(self, path: PathLike) -> None:
        self.artifacts[str(path)] = sha256_file(path)

    def write(self, path: PathLike) -> Path:
        write_json(path, asdict(self))
        return Path(path)


def verify_manifest(path: PathLike) -> List[str]:
    """Problems found in a manifest: missing files or hash mismatches."""
    doc = json.loads(Path(path).read_text())
    problems = []
    for section in ("inputs", "artifacts"):
        for p, digest in doc.get(section, {}).items():
            if not os.path.exists(p):
                problems.append(f"{section}: {p} does not exist")
            elif sha256_file(p) != digest:
                problems.append(f"{section}: {p} hash mismatch")
    return problems
