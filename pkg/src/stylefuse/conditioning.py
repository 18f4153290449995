"""Textual conditioning: content prompt embedding, the style image's
text-aligned embedding, and their row-wise concatenation.

Desk-scale runs use deterministic stub encoders: the text stub hashes each
token into a fixed seeded vector table, the style stub pools image statistics
through a fixed seeded projection.  Real CLIP/BLIP-2 adapters can be selected
by name but fail with an explicit capability error when their weights are not
available; there is no silent fallback.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import torch

from .codec import ImageAsset
from .errors import CapabilityError, ConfigurationError

TEXT_SOURCES = ("clip_text_stub", "clip_text_real", "null")
STYLE_SOURCES = ("blip_stub", "blip_real")


@dataclass(frozen=True)
class TextEmbedding:
    tokens: torch.Tensor  # (n_tokens, dim)
    source: str

    def __post_init__(self) -> None:
        if self.source not in TEXT_SOURCES:
            raise ConfigurationError(f"unknown text source {self.source!r}")
        if self.tokens.ndim != 2 or self.tokens.shape[0] < 1:
            raise ConfigurationError("text embedding must be (n_tokens>0, dim)")
        if not torch.isfinite(self.tokens).all():
            raise ConfigurationError("text embedding has non-finite entries")


@dataclass(frozen=True)
class StyleEmbedding:
    tokens: torch.Tensor  # (m_tokens, dim)
    source: str

    def __post_init__(self) -> None:
        if self.source not in STYLE_SOURCES:
            raise ConfigurationError(f"unknown style source {self.source!r}")


@dataclass(frozen=True)
class ConditioningBundle:
    v_c: TextEmbedding
    v_s: StyleEmbedding
    v_st: torch.Tensor
    null_embedding: TextEmbedding

    def __post_init__(self) -> None:
        rows = self.v_c.tokens.shape[0] + self.v_s.tokens.shape[0]
        if self.v_st.shape[0] != rows:
            raise ConfigurationError("v_st row count must equal v_c rows + v_s rows")


def _token_vector(token: str, dim: int, seed: int) -> np.ndarray:
    digest = hashlib.sha256(f"{seed}:{token}".encode()).digest()
    g = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    return g.standard_normal(dim) / np.sqrt(dim)


class StubTextEncoder:
    """Hash-table text encoder: identical prompts give identical embeddings."""

    def __init__(self, n_tokens: int = 8, dim: int = 32, seed: int = 0):
        self.n_tokens = n_tokens
        self.dim = dim
        self.seed = seed
        self._pad = _token_vector("<pad>", dim, seed)

    def __call__(self, prompt: str) -> TextEmbedding:
        words = prompt.lower().split()[: self.n_tokens]
        rows = [_token_vector(w, self.dim, self.seed) for w in words]
        rows += [self._pad] * (self.n_tokens - len(rows))
        tokens = torch.from_numpy(np.stack(rows).astype(np.float32))
        return TextEmbedding(tokens=tokens, source="clip_text_stub")


class StubStyleEncoder:
    """Pools per-channel image statistics into (m_tokens, dim) style tokens."""

    def __init__(self, m_tokens: int = 4, dim: int = 32, seed: int = 0):
        self.m_tokens = m_tokens
        self.dim = dim
        g = np.random.default_rng(seed + 7)
        self._proj = torch.from_numpy(
            (g.standard_normal((m_tokens * dim, 6)) / np.sqrt(6)).astype(np.float32))

    def __call__(self, img: ImageAsset, text: str = "") -> StyleEmbedding:
        if img.role != "style":
            raise ConfigurationError(f"style encoder expects role 'style', got {img.role!r}")
        mean = img.pixels.mean(dim=(1, 2))
        std = img.pixels.std(dim=(1, 2))
        stats = torch.cat([mean, std]).to(torch.float32)
        tokens = (self._proj @ stats).reshape(self.m_tokens, self.dim)
        return StyleEmbedding(tokens=tokens, source="blip_stub")


class RealTextEncoder:
    """CLIP text encoder adapter; requires locally cached pretrained weights."""

    def __init__(self, model_name: str = "openai/clip-vit-base-patch32"):
        self.model_name = model_name

    def __call__(self, prompt: str) -> TextEmbedding:
        try:
            from transformers import CLIPTextModel, CLIPTokenizer
            tokenizer = CLIPTokenizer.from_pretrained(self.model_name, local_files_only=True)
            model = CLIPTextModel.from_pretrained(self.model_name, local_files_only=True)
        except Exception as exc:
            raise CapabilityError(
                f"CLIP text encoder {self.model_name!r} unavailable: {exc}") from exc
        inputs = tokenizer(prompt, return_tensors="pt", padding="max_length",
                           truncation=True)
        with torch.no_grad():
            out = model(**inputs).last_hidden_state[0]
        return TextEmbedding(tokens=out, source="clip_text_real")


class RealStyleEncoder:
    """BLIP-2 multimodal encoder adapter; requires locally cached weights."""

    def __init__(self, model_name: str = "Salesforce/blip2-itm-vit-g"):
        self.model_name = model_name

    def __call__(self, img: ImageAsset, text: str = "") -> StyleEmbedding:
        raise CapabilityError(
            f"BLIP-2 style encoder {self.model_name!r} is not bundled; "
            "use the stub encoder for desk-scale runs")


TEXT_ENCODERS = {"clip_text_stub": StubTextEncoder, "clip_text_real": RealTextEncoder}
STYLE_ENCODERS = {"blip_stub": StubStyleEncoder, "blip_real": RealStyleEncoder}


def make_text_encoder(name: str, **kwargs):
    if name not in TEXT_ENCODERS:
        raise ConfigurationError(f"unknown text encoder {name!r}")
    return TEXT_ENCODERS[name](**kwargs)


def make_style_encoder(name: str, **kwargs):
    if name not in STYLE_ENCODERS:
        raise ConfigurationError(f"unknown style encoder {name!r}")
    return STYLE_ENCODERS[name](**kwargs)


def build_bundle(content_prompt: str, style_img: ImageAsset,
                 edit_prompt: str | None = None, *,
                 text_encoder=None, style_encoder=None,
                 use_style_tokens: bool = True) -> ConditioningBundle:
    """Concatenate the prompt embedding with the style image's embedding.

    When ``edit_prompt`` is given it replaces the content prompt; the style
    tokens are unchanged.  ``use_style_tokens=False`` drops the style block
    from the concatenation (textual-representation ablation).
    """
    text_encoder = text_encoder or StubTextEncoder()
    style_encoder = style_encoder or StubStyleEncoder()
    v_c = text_encoder(edit_prompt if edit_prompt is not None else content_prompt)
    v_s = style_encoder(style_img, "")
    if v_c.tokens.shape[1] != v_s.tokens.shape[1]:
        raise ConfigurationError(
            f"encoder dims differ: text {v_c.tokens.shape[1]} vs style {v_s.tokens.shape[1]}")
    if use_style_tokens:
        v_st = torch.cat([v_c.tokens, v_s.tokens], dim=0)
    else:
        v_st = v_c.tokens.clone()
        v_s = StyleEmbedding(tokens=v_s.tokens[:0], source=v_s.source)
    return ConditioningBundle(v_c=v_c, v_s=v_s, v_st=v_st,
                              null_embedding=text_encoder(""))
