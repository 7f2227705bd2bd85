from __future__ import annotations
from typing import Dict, Optional, Sequence, Tuple

MNIST_CLASSES = tuple(str(i) for i in range(10))
FASHION_MNIST_CLASSES = (
    "T-shirt/top", "Trouser", "Pullover", "Dress", "Coat",
    "Sandal", "Shirt", "Sneaker", "Bag", "Ankle boot",
)
CIFAR10_CLASSES = (
    "airplane", "automobile", "bird", "cat", "deer",
    "dog", "frog", "horse", "ship", "truck",
)


def class_names_for(dataset_name: str) -> Optional[Tuple[str, ...]]:
    """Nombres de las 10 clases según el prefijo del dataset (mnist_3v8 -> MNIST)."""
    name = dataset_name.lower()
    if name.startswith(("fmnist", "fashion")):
        return FASHION_MNIST_CLASSES
    if name.startswith("mnist"):
        return MNIST_CLASSES
    if name.startswith("cifar"):
        return CIFAR10_CLASSES
    return None


def make_class_labels(class_names: Sequence[str], class_ids: Sequence[int]) -> Tuple[Dict[int, str], Dict[str, int]]:
    """
    Mapea slot -> "id · nombre" y su inverso (para tablas y overlays).
    """
    id_to_label = {slot: f"{cid} · {name}" if str(cid) != name else name
                   for slot, (cid, name) in enumerate(zip(class_ids, class_names))}
    label_to_id = {v: k for k, v in id_to_label.items()}
    return id_to_label, label_to_id
