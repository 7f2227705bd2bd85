# %%
"""
Generador del dataset sintético "bars" en formato IDX (sin descargas).

Clase 0: barra vertical; clase 1: barra horizontal. Posición y grosor al azar,
más ruido de fondo. La señal vive en unos pocos parches, así que los
explicadores tienen algo que encontrar.

Uso:
    python generate_data.py --out data/bars --n-train 2000 --n-test 400 --size 16
"""
from __future__ import annotations

import argparse
import logging
from pathlib import Path

import numpy as np

from core.load import LabeledDataset, write_idx_dataset
from core.logs import configure_logging

logger = logging.getLogger(__name__)

BARS_CLASSES = ("vertical", "horizontal")
FILES = {
    "train": ("train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz"),
    "test": ("t10k-images-idx3-ubyte.gz", "t10k-labels-idx1-ubyte.gz"),
}


def make_bars(n: int, size: int = 16, rng: np.random.Generator | None = None, noise: float = 0.1) -> LabeledDataset:
    """n imágenes (1, size, size) balanceadas entre las dos clases."""
    if n < 2 or size < 4:
        raise ValueError("need n >= 2 and size >= 4")
    rng = rng if rng is not None else np.random.default_rng(0)
    labels = np.arange(n) % 2
    rng.shuffle(labels)
    images = rng.uniform(0.0, noise, size=(n, 1, size, size)).astype(np.float32)
    for i, y in enumerate(labels):
        width = int(rng.integers(1, 3))
        pos = int(rng.integers(0, size - width + 1))
        lo = int(rng.integers(0, size // 4))
        hi = int(rng.integers(size - size // 4, size + 1))
        if y == 0:
            images[i, 0, lo:hi, pos:pos + width] = 1.0
        else:
            images[i, 0, pos:pos + width, lo:hi] = 1.0
    return LabeledDataset(images=images, labels=labels.astype(np.int64), class_names=BARS_CLASSES)


def write_bars(out: Path, n_train: int = 2000, n_test: int = 400, size: int = 16, seed: int = 42) -> dict[str, Path]:
    rng = np.random.default_rng(seed)
    written: dict[str, Path] = {}
    for split, n in (("train", n_train), ("test", n_test)):
        ds = make_bars(n, size, rng)
        img_name, lab_name = FILES[split]
        write_idx_dataset(ds, out / img_name, out / lab_name)
        written[split] = out / img_name
        logger.info("%s: %d images -> %s", split, n, out / img_name)
    return written


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description="Escribe el dataset sintético bars en IDX.")
    ap.add_argument("--out", default="data/bars", help="Carpeta de salida")
    ap.add_argument("--n-train", type=int, default=2000)
    ap.add_argument("--n-test", type=int, default=400)
    ap.add_argument("--size", type=int, default=16, help="Lado de la imagen (px)")
    ap.add_argument("--seed", type=int, default=42)
    args = ap.parse_args(argv)

    configure_logging("info")
    if args.n_train < 2 or args.n_test < 2 or args.size < 4:
        ap.print_usage()
        print("Parámetros inválidos: se requiere --n-train/--n-test >= 2 y --size >= 4", flush=True)
        return 2
    write_bars(Path(args.out), args.n_train, args.n_test, args.size, args.seed)
    print(f"Dataset bars escrito en {args.out} ({args.n_train} train / {args.n_test} test)", flush=True)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
