from __future__ import annotations

import gzip
import logging
import math
import pickle
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from core.errors import ConfigurationError, ContractError, DataFormatError, DatasetNotFoundError

logger = logging.getLogger(__name__)

# IDX: [0x00][0x00][dtype][ndim] + ndim dims big-endian uint32 + bytes crudos
IDX_UBYTE = 0x08
MAGIC_LABELS = 0x00000801
MAGIC_IMAGES = 0x00000803
MAGIC_IMAGES_CHW = 0x00000804

SPLIT_TAGS = ("train", "validation", "test")


@dataclass(frozen=True)
class ImageSample:
    pixels: np.ndarray  # (C, H, W) float32 en [0, 1]
    label: int

    def __post_init__(self):
        if self.pixels.ndim != 3:
            raise ContractError(f"pixels must be (C, H, W), got shape {self.pixels.shape}")
        if not np.all(np.isfinite(self.pixels)) or self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise ContractError("pixel values must be finite and lie in [0, 1]")
        if self.label < 0:
            raise ContractError(f"negative label {self.label}")


@dataclass(frozen=True)
class LabeledDataset:
    """
    Imágenes (n, C, H, W) en [0,1] + etiquetas 0..c-1.
    class_ids guarda el id original de cada slot de etiqueta (filter_classes lo usa).
    """
    images: np.ndarray
    labels: np.ndarray
    class_names: tuple[str, ...]
    split_tag: str = "train"
    class_ids: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ContractError(f"images must be (n, C, H, W), got {self.images.shape}")
        n = self.images.shape[0]
        if n == 0:
            raise ContractError("empty dataset")
        if self.labels.shape != (n,):
            raise ContractError(f"labels shape {self.labels.shape} does not match {n} images")
        if self.split_tag not in SPLIT_TAGS:
            raise ContractError(f"split_tag must be one of {SPLIT_TAGS}, got {self.split_tag!r}")
        c = len(self.class_names)
        if self.labels.min() < 0 or self.labels.max() >= c:
            raise ContractError(f"labels must index class_names (c={c})")
        if not self.class_ids:
            object.__setattr__(self, "class_ids", tuple(range(c)))
        if len(self.class_ids) != c:
            raise ContractError("class_ids and class_names lengths differ")
        images = np.ascontiguousarray(self.images, dtype=np.float32)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        images.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return int(self.images.shape[0])

    def __getitem__(self, i: int) -> ImageSample:
        return ImageSample(pixels=self.images[i], label=int(self.labels[i]))

    def __iter__(self) -> Iterator[ImageSample]:
        for i in range(len(self)):
            yield self[i]

    @property
    def samples(self) -> list[ImageSample]:
        return list(self)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(int(s) for s in self.images.shape[1:])  # type: ignore[return-value]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def subset(self, index: Sequence[int] | np.ndarray, split_tag: str | None = None) -> "LabeledDataset":
        idx = np.asarray(index, dtype=np.int64)
        return LabeledDataset(
            images=self.images[idx],
            labels=self.labels[idx],
            class_names=self.class_names,
            split_tag=split_tag or self.split_tag,
            class_ids=self.class_ids,
        )

    def head(self, n: int | None) -> "LabeledDataset":
        if n is None or n >= len(self):
            return self
        return self.subset(np.arange(n))


# ---------- IDX ----------

def _read_bytes(path: Path) -> bytes:
    if not path.exists():
        raise DatasetNotFoundError(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as f:
        return f.read()


def _parse_idx(path: Path, expected_magic: tuple[int, ...]) -> np.ndarray:
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise DataFormatError(path, "truncated header", offset=len(raw))
    (magic,) = struct.unpack(">I", raw[:4])
    if magic not in expected_magic:
        raise DataFormatError(path, f"bad magic number 0x{magic:08x}", offset=0)
    if (magic >> 8) & 0xFF != IDX_UBYTE:
        raise DataFormatError(path, "only unsigned-byte IDX payloads are supported", offset=2)
    ndim = magic & 0xFF
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise DataFormatError(path, "truncated dimension header", offset=len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    if dims[0] == 0:
        raise DataFormatError(path, "empty dataset", offset=4)
    expected = int(np.prod(dims))
    payload = len(raw) - header_end
    if payload < expected:
        raise DataFormatError(
            path, f"truncated payload: expected {expected} bytes, found {payload}", offset=len(raw)
        )
    return np.frombuffer(raw, dtype=np.uint8, count=expected, offset=header_end).reshape(dims)


def load_idx_dataset(
    images_path: str | Path,
    labels_path: str | Path,
    class_names: Sequence[str] | None = None,
    split_tag: str = "train",
) -> LabeledDataset:
    """Lee un par IDX (imágenes + etiquetas). Escala /255, conserva el orden del archivo."""
    images_path, labels_path = Path(images_path), Path(labels_path)
    raw_images = _parse_idx(images_path, (MAGIC_IMAGES, MAGIC_IMAGES_CHW))
    raw_labels = _parse_idx(labels_path, (MAGIC_LABELS,))
    if raw_images.ndim == 3:
        raw_images = raw_images[:, None, :, :]
    if raw_images.shape[0] != raw_labels.shape[0]:
        raise DataFormatError(
            labels_path,
            f"{raw_labels.shape[0]} labels for {raw_images.shape[0]} images in {images_path}",
            offset=4,
        )
    labels = raw_labels.astype(np.int64)
    if class_names is None:
        class_names = [str(i) for i in range(int(labels.max()) + 1)]
    images = raw_images.astype(np.float32) / np.float32(255.0)
    logger.info("loaded %d samples of shape %s from %s", len(labels), images.shape[1:], images_path)
    return LabeledDataset(images=images, labels=labels, class_names=tuple(class_names), split_tag=split_tag)


def _write_idx(path: Path, array: np.ndarray, magic: int) -> None:
    header = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape)
    data = header + np.ascontiguousarray(array, dtype=np.uint8).tobytes()
    path.parent.mkdir(parents=True, exist_ok=True)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "wb") as f:
        f.write(data)


def write_idx_dataset(ds: LabeledDataset, images_path: str | Path, labels_path: str | Path) -> None:
    """Inverso de load_idx_dataset (cuantiza round(x*255))."""
    quantized = np.rint(ds.images * 255.0).astype(np.uint8)
    if quantized.shape[1] == 1:
        _write_idx(Path(images_path), quantized[:, 0], MAGIC_IMAGES)
    else:
        _write_idx(Path(images_path), quantized, MAGIC_IMAGES_CHW)
    _write_idx(Path(labels_path), ds.labels.astype(np.uint8), MAGIC_LABELS)


# ---------- CIFAR (pickles de python) ----------

def load_cifar_batches(
    paths: Sequence[str | Path],
    class_names: Sequence[str] | None = None,
    split_tag: str = "train",
) -> LabeledDataset:
    if not paths:
        raise ConfigurationError("no CIFAR batch files configured")
    images, labels = [], []
    for raw in paths:
        p = Path(raw)
        if not p.exists():
            raise DatasetNotFoundError(p)
        with open(p, "rb") as f:
            try:
                batch = pickle.load(f, encoding="bytes")
            except Exception as e:
                raise DataFormatError(p, f"not a CIFAR pickle batch ({type(e).__name__})") from e
        data = batch.get(b"data")
        lab = batch.get(b"labels", batch.get(b"fine_labels"))
        if data is None or lab is None:
            raise DataFormatError(p, "missing b'data' or b'labels'")
        data = np.asarray(data, dtype=np.uint8)
        if data.ndim != 2 or data.shape[1] != 3 * 32 * 32:
            raise DataFormatError(p, f"unexpected data shape {data.shape}")
        images.append(data.reshape(-1, 3, 32, 32))
        labels.append(np.asarray(lab, dtype=np.int64))
    all_labels = np.concatenate(labels)
    if class_names is None:
        class_names = [str(i) for i in range(int(all_labels.max()) + 1)]
    return LabeledDataset(
        images=np.concatenate(images).astype(np.float32) / np.float32(255.0),
        labels=all_labels,
        class_names=tuple(class_names),
        split_tag=split_tag,
    )


# ---------- transformaciones ----------

def filter_classes(ds: LabeledDataset, keep: Sequence[int]) -> LabeledDataset:
    """
    Conserva sólo las clases `keep` (ids originales) y re-etiqueta 0..len(keep)-1
    en el orden de `keep`. El orden relativo de las muestras se preserva.
    """
    keep = [int(k) for k in keep]
    if len(set(keep)) != len(keep) or len(keep) < 2:
        raise ConfigurationError(f"keep must hold >= 2 distinct class ids, got {keep}")
    present = set(int(ds.class_ids[l]) for l in np.unique(ds.labels))
    missing = [k for k in keep if k not in present]
    if missing:
        raise ConfigurationError(f"classes absent from dataset: {missing}")

    slot_of = {cid: slot for slot, cid in enumerate(ds.class_ids)}
    remap = np.full(len(ds.class_ids), -1, dtype=np.int64)
    for new, k in enumerate(keep):
        remap[slot_of[k]] = new
    new_labels = remap[ds.labels]
    sel = new_labels >= 0
    return LabeledDataset(
        images=ds.images[sel],
        labels=new_labels[sel],
        class_names=tuple(ds.class_names[slot_of[k]] for k in keep),
        split_tag=ds.split_tag,
        class_ids=tuple(keep),
    )


def train_val_split(ds: LabeledDataset, val_fraction: float, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    if not 0.0 < val_fraction < 1.0:
        raise ConfigurationError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    n = len(ds)
    # round() evita que 80.00000000000001 suba a 81
    n_train = math.ceil(round(n * (1.0 - val_fraction), 9))
    if n_train <= 0 or n_train >= n:
        raise ConfigurationError(f"split of {n} samples with val_fraction={val_fraction} leaves an empty side")
    perm = np.random.default_rng(seed).permutation(n)
    return ds.subset(perm[:n_train], "train"), ds.subset(perm[n_train:], "validation")


def load_experiment_data(dataset_cfg, seed: int | None = None) -> tuple[LabeledDataset, LabeledDataset]:
    """
    (train, validation) filtrados por keep. Si hay split oficial de test se usa como validación;
    si no, se parte train con val_fraction.
    """
    from core.paths import resolve_data_path
    from utils.labels import class_names_for

    names = dataset_cfg.class_names or class_names_for(dataset_cfg.name)
    split_seed = dataset_cfg.split_seed if seed is None else seed

    if dataset_cfg.format == "cifar":
        train = load_cifar_batches([resolve_data_path(p) for p in dataset_cfg.train_files], names, "train")
        test = (
            load_cifar_batches([resolve_data_path(p) for p in dataset_cfg.test_files], names, "validation")
            if dataset_cfg.test_files
            else None
        )
    else:
        if not dataset_cfg.train_images or not dataset_cfg.train_labels:
            raise ConfigurationError("dataset.train_images and dataset.train_labels are required")
        train = load_idx_dataset(
            resolve_data_path(dataset_cfg.train_images), resolve_data_path(dataset_cfg.train_labels), names, "train"
        )
        test = None
        if dataset_cfg.test_images and dataset_cfg.test_labels:
            test = load_idx_dataset(
                resolve_data_path(dataset_cfg.test_images),
                resolve_data_path(dataset_cfg.test_labels),
                names,
                "validation",
            )

    train = filter_classes(train, dataset_cfg.keep)
    if test is not None:
        return train, filter_classes(test, dataset_cfg.keep)
    return train_val_split(train, dataset_cfg.val_fraction, split_seed)
