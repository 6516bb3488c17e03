import pytest
import torch

import bridge_helpers


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not bridge_helpers.ACCEPTANCE_LINES:
        return
    terminalreporter.section("bridge acceptance")
    for line, ok in bridge_helpers.ACCEPTANCE_LINES:
        terminalreporter.write_line(f"{line}: {'PASS' if ok else 'FAIL'}")


@pytest.fixture(scope="session")
def checkpoint_dir(tmp_path_factory):
    """A small randomly initialized checkpoint with the real model's geometry.

    Hidden size and the convolutional front end (kernels, strides) match
    the full-size model, so feature dimension and frame rate are faithful;
    everything else is shrunk to keep tests fast and offline.
    """
    from transformers import HubertConfig, HubertModel

    config = HubertConfig(
        hidden_size=768,
        num_hidden_layers=1,
        num_attention_heads=4,
        intermediate_size=256,
        conv_dim=(64,) * 7,
        num_conv_pos_embeddings=16,
        num_conv_pos_embedding_groups=16,
    )
    torch.manual_seed(0)
    model = HubertModel(config)
    path = tmp_path_factory.mktemp("checkpoint") / "tiny-encoder"
    model.save_pretrained(path)
    return str(path)
