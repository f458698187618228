"""
Grayscale frame sequences.

Frames are read and written as 8-bit PGM through imageio. A
FrameSequence holds them as the columns of a pixels x frames matrix, which
is what the decomposition routines consume.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import imageio.v3 as iio
import numpy as np

from app.exceptions import MatrixFormatError, PreconditionError

logger = logging.getLogger(__name__)


def read_pgm(path: Path) -> np.ndarray:
    """Read an 8-bit grayscale PGM into a (height, width) float64 array."""
    try:
        image = iio.imread(path)
    except (OSError, ValueError, SyntaxError) as e:
        raise MatrixFormatError(f"{path}: unreadable PGM ({e})") from e
    if image.ndim != 2:
        raise MatrixFormatError(f"{path}: not a grayscale image (shape {image.shape})")
    if image.dtype != np.uint8:
        raise MatrixFormatError(f"{path}: only 8-bit PGM is supported ({image.dtype})")
    return image.astype(np.float64)


def write_pgm(path: Path, image: np.ndarray) -> None:
    """Write a 2-D array as 8-bit binary PGM, clipping to [0, 255]."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise PreconditionError("PGM images must be two-dimensional")
    iio.imwrite(path, np.clip(np.rint(image), 0, 255).astype(np.uint8), extension=".pgm")


@dataclass
class FrameSequence:
    """Equal-size grayscale frames stored as columns of a pixels x frames matrix"""

    frames: np.ndarray
    height: int
    width: int

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] != self.height * self.width:
            raise PreconditionError(
                f"frame matrix {self.frames.shape} does not match {self.height}x{self.width}"
            )
        if self.frames.size and (self.frames.min() < 0 or self.frames.max() > 255):
            raise PreconditionError("pixel values must lie in [0, 255]")

    @classmethod
    def from_images(cls, images: Sequence[np.ndarray]) -> FrameSequence:
        if not images:
            raise PreconditionError("no frames given")
        height, width = np.asarray(images[0]).shape
        for k, img in enumerate(images):
            if np.asarray(img).shape != (height, width):
                raise PreconditionError(
                    f"frame {k} has shape {np.asarray(img).shape}, expected {(height, width)}"
                )
        matrix = np.column_stack([np.asarray(img, dtype=np.float64).ravel() for img in images])
        return cls(matrix, height, width)

    @classmethod
    def load_dir(cls, directory: Path) -> FrameSequence:
        paths = sorted(Path(directory).glob("*.pgm"))
        if not paths:
            raise PreconditionError(f"no .pgm frames in {directory}")
        logger.info(f"Loading {len(paths)} frames from {directory}")
        return cls.from_images([read_pgm(p) for p in paths])

    def save_dir(self, directory: Path, prefix: str = "frame") -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        written = []
        for k, img in enumerate(self.images()):
            path = directory / f"{prefix}_{k:04d}.pgm"
            write_pgm(path, img)
            written.append(path)
        return written

    def images(self) -> list[np.ndarray]:
        return [self.frames[:, k].reshape(self.height, self.width) for k in range(len(self))]

    def __len__(self) -> int:
        return self.frames.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width


@dataclass
class SyntheticScene:
    frames: FrameSequence
    backgrounds: FrameSequence
    masks: np.ndarray
    clean: np.ndarray

    def object_energy_split(self, low_rank: np.ndarray, sparse: np.ndarray) -> tuple[float, float]:
        """Shares of the object energy found in sparse and leaked into low_rank."""
        foreground = (self.frames.frames - self.clean)[self.masks]
        energy = float(np.sum(foreground**2))
        in_sparse = float(np.sum(sparse[self.masks] ** 2)) / energy
        leaked = float(np.sum((low_rank - self.clean)[self.masks] ** 2)) / energy
        return in_sparse, leaked


def synthetic_scene(
    height: int,
    width: int,
    n_frames: int,
    rng: np.random.Generator,
    n_backgrounds: int = 2,
    square: int = 10,
    brightness: float = 230.0,
) -> SyntheticScene:
    """
    Static textured background under a few illumination states, with a
    bright square moving left to right across the frames.

    masks is a pixels x frames boolean matrix marking the square; clean
    holds the background each frame was drawn on.
    """
    if square > min(height, width):
        raise PreconditionError(f"square {square} does not fit a {height}x{width} frame")
    yy, xx = np.mgrid[0:height, 0:width]
    texture = 60 + 40 * np.sin(xx / 5.0) * np.cos(yy / 7.0) + rng.uniform(0, 20, (height, width))
    gains = np.linspace(0.8, 1.2, n_backgrounds)
    tilt = np.linspace(0.0, 30.0, n_backgrounds)
    backgrounds = [
        np.clip(g * texture + t * xx / width, 0, 200) for g, t in zip(gains, tilt)
    ]

    images, masks, clean = [], [], []
    top = (height - square) // 2
    span = max(width - square, 1)
    for k in range(n_frames):
        state = int(rng.integers(n_backgrounds))
        img = backgrounds[state].copy()
        clean.append(backgrounds[state].ravel())
        left = (k * span) // max(n_frames - 1, 1)
        mask = np.zeros((height, width), dtype=bool)
        mask[top : top + square, left : left + square] = True
        img[mask] = brightness
        images.append(img)
        masks.append(mask.ravel())

    return SyntheticScene(
        frames=FrameSequence.from_images(images),
        backgrounds=FrameSequence.from_images(backgrounds),
        masks=np.column_stack(masks),
        clean=np.column_stack(clean),
    )
