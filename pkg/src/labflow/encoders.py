"""Frozen observation encoders.

Two seeded random-feature patch encoders stand in for pretrained vision backbones: a
narrow "geometric" stream and a wider "vision-language" stream whose outputs are
concatenated per patch. Prompts are tokenized at word level and looked up in a
frozen seeded table. Nothing in this module is trainable; the encoders are plain
objects rather than ``nn.Module`` so they never appear in a state dict or optimizer.
"""

from __future__ import annotations

import logging
import re
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import Tensor

from .errors import EmptyPromptError, IndivisibleImageError, ShapeError, TokenMismatchError, VocabularyError
from .layers import leaky_gelu, sincos_2d, sinusoidal_positions
from .models.common import NUM_CAMERAS, EncoderStreams
from .models.config import FrozenEncoderConfig, ObservationConfig
from .models.vocabulary import PAD_ID, PAD_TOKEN, UNK_ID, UNK_TOKEN, PromptVocab

logger = logging.getLogger(__name__)

SOURCE_IMAGE = 0
SOURCE_TEXT = 1

# Scale of the frozen positional, camera and frame terms added to image tokens.
IMAGE_POSITION_SCALE = 0.1

_WORD = re.compile(r"[^\W_]+")


@dataclass
class TokenMeta:
    """Per-token provenance. Fields that do not apply to a token hold -1."""

    source: np.ndarray
    camera_id: np.ndarray
    frame_offset: np.ndarray
    patch_row: np.ndarray
    patch_col: np.ndarray
    text_position: np.ndarray

    def __len__(self) -> int:
        return len(self.source)

    def _fields(self) -> tuple[np.ndarray, ...]:
        return (self.source, self.camera_id, self.frame_offset, self.patch_row, self.patch_col, self.text_position)

    def equals(self, other: TokenMeta) -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self._fields(), other._fields(), strict=True))

    @classmethod
    def concat(cls, parts: Sequence[TokenMeta]) -> TokenMeta:
        cols = [np.concatenate(c) for c in zip(*(p._fields() for p in parts), strict=True)]
        return cls(*cols)

    @classmethod
    def for_patches(cls, grid_side: int, camera_id: int = -1, frame_offset: int = 0) -> TokenMeta:
        n = grid_side * grid_side
        idx = np.arange(n)
        return cls(
            source=np.full(n, SOURCE_IMAGE),
            camera_id=np.full(n, camera_id),
            frame_offset=np.full(n, frame_offset),
            patch_row=idx // grid_side,
            patch_col=idx % grid_side,
            text_position=np.full(n, -1),
        )

    @classmethod
    def for_text(cls, length: int) -> TokenMeta:
        none = np.full(length, -1)
        return cls(np.full(length, SOURCE_TEXT), none, none.copy(), none.copy(), none.copy(), np.arange(length))


@dataclass
class TokenSequence:
    """N tokens of width D with their provenance."""

    tokens: Tensor
    meta: TokenMeta

    def __post_init__(self) -> None:
        if self.tokens.ndim != 2 or self.tokens.shape[0] < 1:
            raise ShapeError(f"token matrix must be N x D with N >= 1, got {tuple(self.tokens.shape)}")
        if len(self.meta) != self.tokens.shape[0]:
            raise ShapeError(f"meta length {len(self.meta)} != token count {self.tokens.shape[0]}")
        if not torch.isfinite(self.tokens).all():
            raise ShapeError("token matrix contains non-finite values")

    def __len__(self) -> int:
        return self.tokens.shape[0]

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]


@dataclass
class ObservationWindow:
    """W+1 frames of the three cameras plus the prompt ids; the policy's input."""

    frames: np.ndarray  # (W+1, cameras, height, width, 3) uint8, oldest frame first
    prompt_ids: list[int] = field(default_factory=lambda: [PAD_ID])
    step: int = 0  # tick of the newest frame

    def __post_init__(self) -> None:
        if self.frames.ndim != 5 or self.frames.shape[1] != NUM_CAMERAS or self.frames.shape[-1] != 3:
            raise ShapeError(f"window frames must be (W+1, {NUM_CAMERAS}, H, W, 3), got {self.frames.shape}")
        if len(self.prompt_ids) < 1:
            raise EmptyPromptError("observation window needs at least one prompt id")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


def patchify(image: np.ndarray | Tensor, patch_size: int, dtype: torch.dtype = torch.float32) -> Tensor:
    """Cut an (..., h, w, 3) uint8 image into raster-ordered patches scaled to [0, 1].

    Returns (..., (h/ps)*(w/ps), ps*ps*3); each row is a patch flattened row, column, channel.
    """
    x = torch.as_tensor(np.array(image, copy=True)) if isinstance(image, np.ndarray) else image
    x = x.to(dtype) / 255.0
    *lead, h, w, c = x.shape
    if h % patch_size or w % patch_size:
        raise IndivisibleImageError(f"image {h}x{w} is not divisible by patch size {patch_size}")
    gh, gw = h // patch_size, w // patch_size
    x = x.reshape(*lead, gh, patch_size, gw, patch_size, c).transpose(-4, -3)
    return x.reshape(*lead, gh * gw, patch_size * patch_size * c)


class FrozenPatchEncoder:
    """Two seeded affine maps with a leaky-GELU between them, applied per patch."""

    def __init__(self, cfg: FrozenEncoderConfig, dtype: torch.dtype = torch.float32):
        self.cfg = cfg
        self.in_dim = cfg.patch_size * cfg.patch_size * 3
        gen = torch.Generator().manual_seed(cfg.seed)

        def uniform(shape: tuple[int, ...], fan_in: int) -> Tensor:
            bound = 1.0 / fan_in**0.5
            return ((torch.rand(shape, generator=gen, dtype=torch.float64) * 2 - 1) * bound).to(dtype)

        self.w1 = uniform((self.in_dim, cfg.hidden_dim), self.in_dim)
        self.b1 = uniform((cfg.hidden_dim,), self.in_dim)
        self.w2 = uniform((cfg.hidden_dim, cfg.out_dim), cfg.hidden_dim)
        self.b2 = uniform((cfg.out_dim,), cfg.hidden_dim)

    @property
    def trainable_params(self) -> int:
        return 0

    def __call__(self, patches: Tensor) -> Tensor:
        if patches.shape[-1] != self.in_dim:
            raise ShapeError(f"patch width {patches.shape[-1]} != expected {self.in_dim}")
        with torch.no_grad():
            return leaky_gelu(patches @ self.w1 + self.b1) @ self.w2 + self.b2


def frozen_encode(patches: Tensor, cfg: FrozenEncoderConfig) -> TokenSequence:
    """Encode one image's patches into a P x out_dim token sequence."""
    tokens = FrozenPatchEncoder(cfg, dtype=patches.dtype)(patches)
    side = int(round(patches.shape[0] ** 0.5))
    meta = TokenMeta.for_patches(side) if side * side == patches.shape[0] else _flat_patch_meta(patches.shape[0])
    return TokenSequence(tokens, meta)


def _flat_patch_meta(n: int) -> TokenMeta:
    none = np.full(n, -1)
    return TokenMeta(np.full(n, SOURCE_IMAGE), none, np.zeros(n, dtype=int), np.zeros(n, dtype=int), np.arange(n), none.copy())


def fuse_feature_dim(geom: TokenSequence, vl: TokenSequence) -> TokenSequence:
    """Concatenate two encodings of the same patches along the feature axis."""
    if len(geom) != len(vl):
        raise TokenMismatchError(f"token counts differ: {len(geom)} vs {len(vl)}")
    if not geom.meta.equals(vl.meta):
        raise TokenMismatchError("token metadata differs between the two streams")
    return TokenSequence(torch.cat([geom.tokens, vl.tokens], dim=1), geom.meta)


def split_words(text: str) -> list[str]:
    return _WORD.findall(text.lower())


def build_vocab(prompts: Iterable[str]) -> PromptVocab:
    """Vocabulary over the words of a prompt corpus, sorted so the ids do not depend on corpus order."""
    corpus = list(prompts)
    if not corpus:
        raise VocabularyError("cannot build a vocabulary from an empty corpus")
    words = sorted({w for p in corpus for w in split_words(p)})
    mapping = {PAD_TOKEN: PAD_ID, UNK_TOKEN: UNK_ID}
    mapping.update({w: i + 2 for i, w in enumerate(words)})
    return PromptVocab(token_to_id=mapping)


def tokenize_prompt(text: str, vocab: PromptVocab) -> list[int]:
    ids = [vocab.id_of(w) for w in split_words(text)]
    return ids or [PAD_ID]


class PromptEmbedder:
    """Frozen seeded embedding table plus sinusoidal text positions."""

    def __init__(self, vocab_size: int, dim: int, seed: int, dtype: torch.dtype = torch.float32):
        gen = torch.Generator().manual_seed(seed)
        self.vocab_size = vocab_size
        self.dim = dim
        self.table = torch.randn(vocab_size, dim, generator=gen, dtype=torch.float64).to(dtype)
        self.dtype = dtype

    def positions(self, length: int) -> Tensor:
        return sinusoidal_positions(length, self.dim, dtype=self.dtype)

    def __call__(self, ids: Sequence[int]) -> Tensor:
        idx = torch.as_tensor(list(ids), dtype=torch.long)
        if idx.numel() and (idx.min() < 0 or idx.max() >= self.vocab_size):
            raise VocabularyError(f"token id outside vocabulary of size {self.vocab_size}")
        return self.table[idx] + self.positions(len(idx))


def embed_prompt(ids: Sequence[int], seed: int, vocab_size: int, dim: int, dtype: torch.dtype = torch.float32) -> TokenSequence:
    if len(ids) == 0:
        raise EmptyPromptError("prompt has no token ids")
    return TokenSequence(PromptEmbedder(vocab_size, dim, seed, dtype)(ids), TokenMeta.for_text(len(ids)))


@dataclass
class EncodedBatch:
    """Padded encoder outputs for a batch of windows."""

    image: Tensor  # (B, N, D_img)
    text: Tensor  # (B, L_max, D_txt)
    text_mask: Tensor  # (B, L_max) bool, True on real tokens

    @property
    def batch_size(self) -> int:
        return self.image.shape[0]


class ObservationEncoder:
    """Turns observation windows into image and text token sequences."""

    def __init__(self, cfg: ObservationConfig, vocab: PromptVocab, dtype: torch.dtype = torch.float32):
        self.cfg = cfg
        self.vocab = vocab
        self.dtype = dtype
        self.geometric = FrozenPatchEncoder(cfg.geometric, dtype)
        self.vision_language = FrozenPatchEncoder(cfg.vision_language, dtype)
        self.prompt = PromptEmbedder(vocab.size, cfg.text_dim, cfg.text_seed, dtype)

        dim = cfg.image_dim
        gen = torch.Generator().manual_seed(cfg.embedding_seed)
        self.patch_positions = sincos_2d(cfg.grid_side, dim, dtype=torch.float64).to(dtype) * IMAGE_POSITION_SCALE
        self.camera_table = (torch.randn(NUM_CAMERAS, dim, generator=gen, dtype=torch.float64) * IMAGE_POSITION_SCALE).to(dtype)
        self.frame_table = (torch.randn(cfg.num_frames, dim, generator=gen, dtype=torch.float64) * IMAGE_POSITION_SCALE).to(dtype)
        logger.debug("observation encoder: %d image tokens of width %d, text width %d", self.num_image_tokens, dim, cfg.text_dim)

    @property
    def num_image_tokens(self) -> int:
        return self.cfg.num_frames * NUM_CAMERAS * self.cfg.num_patches

    @property
    def image_dim(self) -> int:
        return self.cfg.image_dim

    @property
    def text_dim(self) -> int:
        return self.cfg.text_dim

    def encode_patches(self, patches: Tensor) -> Tensor:
        """Apply the configured vision streams to (..., P, ps*ps*3) patches."""
        if self.cfg.streams == EncoderStreams.GEOMETRIC:
            return self.geometric(patches)
        if self.cfg.streams == EncoderStreams.VISION_LANGUAGE:
            return self.vision_language(patches)
        return torch.cat([self.geometric(patches), self.vision_language(patches)], dim=-1)

    def encode_images(self, frames: np.ndarray) -> Tensor:
        """(B, W+1, cameras, h, w, 3) uint8 -> (B, N, D_img) with frame-major, camera-minor token order."""
        if frames.ndim != 6 or frames.shape[1] != self.cfg.num_frames or frames.shape[2] != NUM_CAMERAS:
            raise ShapeError(f"expected (B, {self.cfg.num_frames}, {NUM_CAMERAS}, h, w, 3) frames, got {frames.shape}")
        feats = self.encode_patches(patchify(frames, self.cfg.patch_size, self.dtype))
        feats = feats + self.patch_positions + self.camera_table[None, None, :, None, :] + self.frame_table[None, :, None, None, :]
        return feats.reshape(frames.shape[0], self.num_image_tokens, self.image_dim)

    def image_meta(self) -> TokenMeta:
        w = self.cfg.window
        return TokenMeta.concat(
            [TokenMeta.for_patches(self.cfg.grid_side, camera_id=c, frame_offset=f - w) for f in range(w + 1) for c in range(NUM_CAMERAS)]
        )

    def encode_text(self, prompt_ids: Sequence[int]) -> TokenSequence:
        if len(prompt_ids) == 0:
            raise EmptyPromptError("prompt has no token ids")
        return TokenSequence(self.prompt(prompt_ids), TokenMeta.for_text(len(prompt_ids)))

    def encode_window(self, window: ObservationWindow) -> tuple[TokenSequence, TokenSequence]:
        image = self.encode_images(window.frames[None])[0]
        return TokenSequence(image, self.image_meta()), self.encode_text(window.prompt_ids)

    def encode_batch(self, windows: Sequence[ObservationWindow]) -> EncodedBatch:
        """Batched ``encode_window``; prompts are right-padded with PAD and masked."""
        image = self.encode_images(np.stack([w.frames for w in windows]))
        length = max(len(w.prompt_ids) for w in windows)
        text = torch.empty(len(windows), length, self.text_dim, dtype=self.dtype)
        mask = torch.zeros(len(windows), length, dtype=torch.bool)
        for i, w in enumerate(windows):
            n = len(w.prompt_ids)
            text[i] = self.prompt(list(w.prompt_ids) + [PAD_ID] * (length - n))
            mask[i, :n] = True
        return EncodedBatch(image, text, mask)


def assemble_observation_tokens(window: ObservationWindow, encoder: ObservationEncoder) -> tuple[TokenSequence, TokenSequence]:
    return encoder.encode_window(window)
