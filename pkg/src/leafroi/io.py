"""File formats: netpbm images and masks, checkpoints, key=value configs, manifests, metrics CSV.

All binary layouts are little-endian so files move between platforms
unchanged.  Images are stored as 8-bit PPM, so a float image round trip is
quantized to multiples of 1/255; masks round-trip exactly.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .baselines.runner import BaselineConfig
from .data import Dataset, GenConfig
from .errors import ConfigurationError, FormatError
from .networks import Network, NetworkSpec
from .tensor import Tensor
from .training import MetricsReport, TrainConfig

MAX_EXTENT = 2 ** 15
CHECKPOINT_MAGIC = b"RSC1"
CHECKPOINT_VERSION = 1
METRICS_HEADER = ("method", "seed", "accuracy", "mean_pixel_acc", "mean_iou", "n_test")

# ---------------------------------------------------------------------------
# netpbm


def _write_netpbm(path, magic: bytes, payload: np.ndarray, width: int, height: int):
    if not (0 < width <= MAX_EXTENT and 0 < height <= MAX_EXTENT):
        raise FormatError(f"extent {width}x{height} outside 1..{MAX_EXTENT}")
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (width, height))
        fh.write(np.ascontiguousarray(payload, dtype=np.uint8).tobytes())


def _read_header(buf: bytes, path) -> tuple[bytes, int, int, int, int]:
    """Parse magic, width, height, maxval; return them and the payload offset."""
    pos = 0
    tokens = []
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: header ends early at byte {pos}")
        tokens.append((buf[start:pos], start))
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise FormatError(f"{path}: missing whitespace after header at byte {pos}")
    magic = tokens[0][0]
    nums = []
    for tok, off in tokens[1:]:
        if not tok.isdigit():
            raise FormatError(f"{path}: expected an integer at byte {off}, found {tok[:16]!r}")
        nums.append(int(tok))
    width, height, maxval = nums
    if not (0 < width <= MAX_EXTENT and 0 < height <= MAX_EXTENT):
        raise FormatError(f"{path}: extent {width}x{height} at byte {tokens[1][1]} outside 1..{MAX_EXTENT}")
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit files are supported, maxval {maxval} at byte {tokens[3][1]}")
    return magic, width, height, maxval, pos + 1


def _read_netpbm(path, magic: bytes, channels: int) -> np.ndarray:
    buf = Path(path).read_bytes()
    found, width, height, _, offset = _read_header(buf, path)
    if found != magic:
        raise FormatError(f"{path}: expected {magic.decode()} at byte 0, found {found[:8]!r}")
    need = width * height * channels
    have = len(buf) - offset
    if have < need:
        raise FormatError(f"{path}: payload truncated at byte {len(buf)}, expected {offset + need} bytes")
    data = np.frombuffer(buf, dtype=np.uint8, count=need, offset=offset)
    return data.reshape(height, width, channels) if channels > 1 else data.reshape(height, width)


def write_image(path, image) -> None:
    """Write a ``3 x H x W`` float image in [0, 1] as binary PPM (P6)."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise FormatError(f"expected a 3 x H x W image, got {img.shape}")
    if not np.isfinite(img).all():
        raise FormatError("image contains non-finite values")
    q = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    _write_netpbm(path, b"P6", q.transpose(1, 2, 0), img.shape[2], img.shape[1])


def read_image(path) -> np.ndarray:
    """Read a P6 file as a ``3 x H x W`` float image with values ``byte / 255``."""
    return _read_netpbm(path, b"P6", 3).transpose(2, 0, 1).astype(np.float64) / 255.0


def write_mask(path, mask) -> None:
    """Write an ``H x W`` label mask with values in {0, 1, 2} as binary PGM (P5)."""
    m = np.asarray(mask)
    if m.ndim != 2:
        raise FormatError(f"expected an H x W mask, got {m.shape}")
    if m.size and (m.min() < 0 or m.max() > 2):
        raise FormatError(f"mask values must be in {{0, 1, 2}}, found range [{m.min()}, {m.max()}]")
    _write_netpbm(path, b"P5", m.astype(np.uint8), m.shape[1], m.shape[0])


def read_mask(path) -> np.ndarray:
    m = _read_netpbm(path, b"P5", 1)
    bad = np.flatnonzero(m.ravel() > 2)
    if bad.size:
        raise FormatError(f"{path}: label {m.ravel()[bad[0]]} out of range at payload index {bad[0]}")
    return m.astype(np.uint8)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(net: Network, path) -> None:
    """Serialize the network spec and every parameter (float64, little-endian)."""
    spec = net.spec.to_text().encode("utf-8")
    out = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(spec)), spec,
           struct.pack("<I", len(net.params))]
    for name, t in net.params.items():
        key = name.encode("utf-8")
        out.append(struct.pack("<I", len(key)) + key)
        out.append(struct.pack("<I", t.data.ndim) + struct.pack(f"<{t.data.ndim}I", *t.data.shape))
        out.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(out))


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"{self.path}: truncated while reading {what} at byte {self.pos}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def load_checkpoint(path) -> Network:
    """Rebuild a network from a checkpoint; no other information is needed."""
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
    r = _Reader(buf, path)
    magic = r.take(4, "magic")
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at byte 0")
    version = r.u32("version")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version} at byte 4")
    text = r.take(r.u32("spec length"), "spec text")
    try:
        spec = NetworkSpec.from_text(text.decode("utf-8"))
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: unreadable network spec: {exc}") from exc
    shapes = spec.param_shapes()
    params = {}
    for _ in range(r.u32("parameter count")):
        name = r.take(r.u32("name length"), "parameter name").decode("utf-8")
        rank = r.u32(f"rank of {name}")
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank, f"extents of {name}"))
        if name not in shapes:
            raise FormatError(f"{path}: parameter {name!r} is not in the network spec")
        if tuple(shape) != tuple(shapes[name]):
            raise FormatError(f"{path}: parameter {name!r} has shape {shape}, spec requires {shapes[name]}")
        n = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(r.take(8 * n, f"values of {name}"), dtype="<f8").reshape(shape)
        params[name] = Tensor(data.astype(np.float64))
    missing = set(shapes) - set(params)
    if missing:
        raise FormatError(f"{path}: missing parameters {sorted(missing)}")
    if r.pos != len(buf):
        raise FormatError(f"{path}: {len(buf) - r.pos} trailing bytes after byte {r.pos}")
    return Network(spec, params)


# ---------------------------------------------------------------------------
# run configuration


@dataclass
class RunConfig:
    """Every tunable knob, grouped as ``data.*``, ``train.*`` and ``baseline.*`` keys."""

    data: GenConfig = field(default_factory=GenConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)

    SECTIONS = ("data", "train", "baseline")

    @classmethod
    def documented_keys(cls) -> list[str]:
        return [f"{sec}.{f.name}" for sec, typ in
                (("data", GenConfig), ("train", TrainConfig), ("baseline", BaselineConfig))
                for f in fields(typ)]

    def with_seed(self, seed: int) -> "RunConfig":
        return RunConfig(self.data, _replace(self.train, seed=seed), _replace(self.baseline, seed=seed))

    def to_text(self) -> str:
        lines = []
        for sec in self.SECTIONS:
            obj = getattr(self, sec)
            for f in fields(obj):
                lines.append(f"{sec}.{f.name} = {_format_value(getattr(obj, f.name))}")
        return "\n".join(lines) + "\n"


def _replace(obj, **kw):
    vals = {f.name: getattr(obj, f.name) for f in fields(obj)}
    vals.update(kw)
    return type(obj)(**vals)


def _format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, tuple):
        return ", ".join(_format_value(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _parse_value(text: str, default, key: str):
    text = text.strip()
    try:
        if isinstance(default, tuple):
            parts = [p.strip() for p in text.split(",")]
            if len(parts) != len(default):
                raise ValueError(f"expected {len(default)} comma-separated values")
            return tuple(type(d)(p) for d, p in zip(default, parts))
        if default is None:
            return text or None
        if isinstance(default, bool):
            if text.lower() not in ("true", "false"):
                raise ValueError("expected true or false")
            return text.lower() == "true"
        return type(default)(text)
    except ValueError as exc:
        raise ConfigurationError(f"config key {key}: cannot parse {text!r}: {exc}") from exc


def parse_config(text: str) -> RunConfig:
    """Parse ``section.key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    groups = {"data": GenConfig(), "train": TrainConfig(), "baseline": BaselineConfig()}
    updates = {sec: {} for sec in groups}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {lineno}: expected key = value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        sec, _, name = key.partition(".")
        if sec not in groups or name not in {f.name for f in fields(groups[sec])}:
            raise ConfigurationError(f"config line {lineno}: unknown key {key!r}")
        updates[sec][name] = _parse_value(value, getattr(groups[sec], name), key)
    try:
        return RunConfig(*(_replace(groups[s], **updates[s]) for s in RunConfig.SECTIONS))
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"invalid configuration: {exc}") from exc


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="ascii")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


# ---------------------------------------------------------------------------
# datasets on disk


MANIFEST = "manifest.txt"


def save_dataset(ds: Dataset, directory, cfg: GenConfig | None = None) -> Path:
    """Write ``images/<name>.ppm``, ``masks/<name>.pgm`` and a manifest listing them."""
    root = Path(directory)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    names = ds.names or [f"s{i:04d}" for i in range(len(ds))]
    lines = [f"# {len(ds)} samples; columns: image mask label seed"]
    if cfg is not None:
        lines += [f"# data.{f.name} = {_format_value(getattr(cfg, f.name))}" for f in fields(cfg)]
    for i, name in enumerate(names):
        write_image(root / "images" / f"{name}.ppm", ds.images[i])
        write_mask(root / "masks" / f"{name}.pgm", ds.masks[i])
        lines.append(f"images/{name}.ppm masks/{name}.pgm {int(ds.labels[i])} {int(ds.seeds[i])}")
    path = root / MANIFEST
    path.write_text("\n".join(lines) + "\n", encoding="ascii")
    return path


def load_dataset(directory) -> Dataset:
    """Read a dataset written by :func:`save_dataset` (images come back 8-bit quantized)."""
    root = Path(directory)
    try:
        text = (root / MANIFEST).read_text(encoding="ascii")
    except OSError as exc:
        raise FormatError(f"cannot read manifest in {root}: {exc}") from exc
    entries = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4 or not parts[2].isdigit() or not parts[3].isdigit():
            raise FormatError(f"{root / MANIFEST}: malformed line {lineno}: {line!r}")
        entries.append(parts)
    if not entries:
        raise FormatError(f"{root / MANIFEST}: no samples listed")
    names = [Path(e[0]).stem for e in entries]
    labels = [int(e[2]) for e in entries]
    seeds = [int(e[3]) for e in entries]
    try:
        images = np.stack([read_image(root / e[0]) for e in entries])
        masks = np.stack([read_mask(root / e[1]) for e in entries])
    except OSError as exc:
        raise FormatError(f"missing sample file: {exc}") from exc
    return Dataset(images, masks, np.array(labels, dtype=np.int64), np.array(seeds, dtype=np.uint64), names)


# ---------------------------------------------------------------------------
# metrics CSV


def _fmt(v) -> str:
    if v is None:
        return ""
    return f"{v:.4f}" if isinstance(v, float) else str(v)


def write_metrics_csv(reports, path) -> None:
    """Append one row per report; the header is written only when the file is new or empty."""
    path = Path(path)
    fresh = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if fresh:
            w.writerow(METRICS_HEADER)
        for rep in reports:
            row = rep.row() if isinstance(rep, MetricsReport) else rep
            w.writerow([_fmt(row[k]) for k in METRICS_HEADER])


def read_metrics_csv(path) -> list[dict]:
    rows = []
    with open(path, newline="", encoding="ascii") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRICS_HEADER:
            raise FormatError(f"{path}: unexpected header {reader.fieldnames}")
        for rec in reader:
            rows.append({
                "method": rec["method"], "seed": int(rec["seed"]), "n_test": int(rec["n_test"]),
                **{k: (float(rec[k]) if rec[k] else None)
                   for k in ("accuracy", "mean_pixel_acc", "mean_iou")},
            })
    return rows


def format_table(rows) -> str:
    """Fixed-width table of metric rows, one line per method and seed."""
    head = f"{'method':<22} {'seed':>6} {'accuracy':>9} {'pixel acc':>10} {'mean IoU':>9} {'n_test':>7}"
    lines = [head, "-" * len(head)]
    for r in rows:
        cells = [_fmt(r.get(k)) or "-" for k in ("accuracy", "mean_pixel_acc", "mean_iou")]
        lines.append(f"{r['method']:<22} {r['seed']:>6} {cells[0]:>9} {cells[1]:>10} {cells[2]:>9} "
                     f"{r['n_test']:>7}")
    return "\n".join(lines)


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p

