"""PNG image I/O and 8-bit / float conversion."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..errors import ConfigError, ImageError, ShapeError

logger = logging.getLogger(__name__)


@dataclass
class ImageBuffer:
    """Float image ``[C, H, W]`` with values nominally in ``[0, 1]`` (sRGB assumed)."""

    data: np.ndarray
    colorspace: str = "sRGB"

    def __post_init__(self) -> None:
        if self.data.ndim == 2:
            self.data = self.data[None]
        if self.data.ndim != 3 or self.data.shape[0] not in (1, 3):
            raise ShapeError(f"image must be [1|3, H, W], got {self.data.shape}")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @classmethod
    def from_uint8(cls, pixels: np.ndarray) -> ImageBuffer:
        """From ``[H, W]`` or ``[H, W, C]`` 8-bit pixels."""
        arr = np.asarray(pixels, dtype=np.uint8)
        arr = arr[None] if arr.ndim == 2 else arr.transpose(2, 0, 1)
        return cls(arr.astype(np.float32) / 255.0)

    def to_uint8(self) -> np.ndarray:
        """``[H, W]`` or ``[H, W, C]`` 8-bit pixels; values are clipped to ``[0, 1]`` first."""
        arr = np.rint(np.clip(self.data, 0.0, 1.0) * 255.0).astype(np.uint8)
        return arr[0] if self.channels == 1 else arr.transpose(1, 2, 0)


def load_png(path: str | Path) -> ImageBuffer:
    """Read a PNG as grayscale or RGB (alpha and palettes are converted to RGB).

    Raises:
        FileNotFoundError: If ``path`` does not exist
        ImageError: If the file does not decode as an image
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        with Image.open(path) as img:
            if img.mode not in ("L", "RGB"):
                img = img.convert("RGB")
            return ImageBuffer.from_uint8(np.asarray(img))
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageError(f"{path}: cannot decode image ({exc})") from exc


def save_png(path: str | Path, image: ImageBuffer | np.ndarray) -> Path:
    """Write ``[C, H, W]`` float data (clipped) as an 8-bit PNG."""
    buf = image if isinstance(image, ImageBuffer) else ImageBuffer(np.asarray(image, dtype=np.float32))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(buf.to_uint8()).save(path, format="PNG")
    return path


def list_pngs(directory: str | Path) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(directory)
    return sorted(p for p in directory.iterdir() if p.suffix.lower() == ".png")


def load_dir(directory: str | Path) -> list[tuple[str, ImageBuffer]]:
    """Every PNG of a directory, sorted by file name."""
    images = [(p.name, load_png(p)) for p in list_pngs(directory)]
    logger.debug("loaded %d images from %s", len(images), directory)
    return images


def load_pairs(first: str | Path, second: str | Path) -> list[tuple[str, ImageBuffer, ImageBuffer]]:
    """Images of two directories matched by file name.

    Raises:
        ConfigError: If the directories do not hold the same file names
        ShapeError: If a matched pair differs in shape
    """
    a = {p.name: p for p in list_pngs(first)}
    b = {p.name: p for p in list_pngs(second)}
    if a.keys() != b.keys():
        only = sorted(a.keys() ^ b.keys())
        raise ConfigError(f"unpaired files between {first} and {second}: {only[:5]}")
    pairs = []
    for name in sorted(a):
        x, y = load_png(a[name]), load_png(b[name])
        if x.data.shape != y.data.shape:
            raise ShapeError(f"{name}: {x.data.shape} vs {y.data.shape}")
        pairs.append((name, x, y))
    return pairs
