import hashlib

import pytest
import torch

from stylefuse.conditioning import (RealStyleEncoder, RealTextEncoder, StubStyleEncoder,
                                    StubTextEncoder, build_bundle, make_style_encoder,
                                    make_text_encoder)
from stylefuse.errors import CapabilityError, ConfigurationError

from conftest import rand_image


def sha(t: torch.Tensor) -> str:
    return hashlib.sha256(t.numpy().tobytes()).hexdigest()


def test_empty_prompt_deterministic():
    enc = StubTextEncoder()
    assert torch.equal(enc("").tokens, enc("").tokens)


def test_distinct_prompts_differ():
    enc = StubTextEncoder()
    assert not torch.equal(enc("dog").tokens, enc("cat").tokens)


def test_text_embedding_shape_matches_config():
    enc = StubTextEncoder(n_tokens=8, dim=32)
    emb = enc("a")
    assert tuple(emb.tokens.shape) == (8, 32)


def test_text_stub_golden_hash():
    # frozen regression: the stub is a pure function across processes
    emb = StubTextEncoder(n_tokens=8, dim=32, seed=0)("a watercolor fox")
    assert sha(emb.tokens) == GOLDEN_TEXT_HASH


def test_style_stub_deterministic_and_color_sensitive():
    enc = StubStyleEncoder()
    red = rand_image(8, 1, "style")
    a = enc(red)
    b = enc(red)
    assert torch.equal(a.tokens, b.tokens)
    solid_r = rand_image(8, 1, "style")
    green = torch.zeros(3, 8, 8)
    green[1] = 0.8
    red_img = torch.zeros(3, 8, 8)
    red_img[0] = 0.8
    from stylefuse.codec import ImageAsset
    e_g = enc(ImageAsset(green, "style"))
    e_r = enc(ImageAsset(red_img, "style"))
    assert not torch.equal(e_g.tokens, e_r.tokens)


def test_style_stub_golden_hash():
    emb = StubStyleEncoder(m_tokens=4, dim=32, seed=0)(rand_image(8, 42, "style"))
    assert sha(emb.tokens) == GOLDEN_STYLE_HASH


def test_style_encoder_requires_style_role():
    with pytest.raises(ConfigurationError):
        StubStyleEncoder()(rand_image(8, 1, "content"))


def test_bundle_concat_preserves_blocks_exactly():
    style = rand_image(8, 2, "style")
    bundle = build_bundle("a fox", style)
    n = bundle.v_c.tokens.shape[0]
    assert torch.equal(bundle.v_st[:n], bundle.v_c.tokens)
    assert torch.equal(bundle.v_st[n:], bundle.v_s.tokens)
    assert bundle.v_st.shape[0] == n + bundle.v_s.tokens.shape[0]


def test_default_pipeline_uses_null_content_prompt():
    style = rand_image(8, 2, "style")
    bundle = build_bundle("", style)
    assert torch.equal(bundle.v_c.tokens, bundle.null_embedding.tokens)


def test_edit_prompt_replaces_content_block_only():
    style = rand_image(8, 2, "style")
    plain = build_bundle("a fox", style)
    edited = build_bundle("a fox", style, edit_prompt="dog")
    assert not torch.equal(edited.v_c.tokens, plain.v_c.tokens)
    assert torch.equal(edited.v_s.tokens, plain.v_s.tokens)
    assert torch.equal(edited.v_c.tokens, StubTextEncoder()("dog").tokens)


def test_dropping_style_tokens_for_ablation():
    style = rand_image(8, 2, "style")
    bundle = build_bundle("", style, use_style_tokens=False)
    assert bundle.v_s.tokens.shape[0] == 0
    assert torch.equal(bundle.v_st, bundle.v_c.tokens)


def test_encoder_dim_mismatch_rejected():
    style = rand_image(8, 2, "style")
    with pytest.raises(ConfigurationError):
        build_bundle("", style, text_encoder=StubTextEncoder(dim=16),
                     style_encoder=StubStyleEncoder(dim=32))


def test_real_adapters_fail_loudly_without_weights():
    with pytest.raises(CapabilityError):
        RealTextEncoder("nonexistent/model")("hello")
    with pytest.raises(CapabilityError):
        RealStyleEncoder()(rand_image(8, 1, "style"))


def test_encoder_registry():
    assert isinstance(make_text_encoder("clip_text_stub"), StubTextEncoder)
    assert isinstance(make_style_encoder("blip_stub"), StubStyleEncoder)
    with pytest.raises(ConfigurationError):
        make_text_encoder("word2vec")


GOLDEN_TEXT_HASH = "036d0eb2b946bf64741bd4df661dcdcc514ac2596516eca0d1c480ba36082fee"
GOLDEN_STYLE_HASH = "e532b025bb8876df996c3b630dbfe0f7f9e48f1c6052dbe656dc6cae11bab5a6"
