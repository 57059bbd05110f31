import numpy as np
import pytest

from compnli.config import ModelConfig
from compnli.embeddings import EmbeddingTable
from compnli.model import NLIModel
from compnli.synthetic import templated_pairs


def tiny_config(encoder="btree", **overrides):
    base = dict(embed_dim=6, bilstm_hidden=4, btree_hidden=5, operators=3, op_hidden=4, op_out=4,
                agg_hidden=4, batch_size=8, encoder=encoder, dtype="float64")
    base.update(overrides)
    return ModelConfig(**base)


def tiny_model(encoder="btree", **overrides):
    config = tiny_config(encoder, **overrides)
    return NLIModel(config, EmbeddingTable(config.embed_dim, oov_seed=config.oov_seed, oov_sigma=config.oov_sigma))


@pytest.fixture(params=["btree", "bilstm"])
def encoder(request):
    return request.param


@pytest.fixture
def pairs():
    return templated_pairs(24, seed=1)
