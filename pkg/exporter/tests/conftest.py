import pytest
import torch
from transformers import HubertConfig, HubertModel, Wav2Vec2Config, Wav2Vec2Model

TOY_KWARGS = dict(
    conv_dim=(16,) * 7,
    conv_kernel=(10, 3, 3, 3, 3, 2, 2),
    conv_stride=(5, 2, 2, 2, 2, 2, 2),
    hidden_size=32,
    num_hidden_layers=2,
    num_attention_heads=2,
    intermediate_size=64,
    num_conv_pos_embeddings=16,
    num_conv_pos_embedding_groups=4,
)


def toy_wav2vec2(seed=0, **overrides):
    kwargs = dict(TOY_KWARGS)
    kwargs.update(overrides)
    torch.manual_seed(seed)
    model = Wav2Vec2Model(Wav2Vec2Config(**kwargs))
    return model.eval()


def toy_hubert(seed=0, **overrides):
    kwargs = dict(TOY_KWARGS)
    kwargs.update(overrides)
    torch.manual_seed(seed)
    model = HubertModel(HubertConfig(**kwargs))
    return model.eval()


@pytest.fixture(scope="session")
def wav2vec2_model():
    return toy_wav2vec2()


@pytest.fixture(scope="session")
def hubert_model():
    return toy_hubert()
