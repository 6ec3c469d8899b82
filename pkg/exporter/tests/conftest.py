"""Shared fixtures: a tiny locally built encoder and a small dataset file.

Everything runs offline; the encoder is constructed from scratch with a
handwritten vocabulary and saved to a temp directory.
"""

import json
import os

import pytest

os.environ.setdefault("TRANSFORMERS_OFFLINE", "1")
os.environ.setdefault("HF_HUB_OFFLINE", "1")
os.environ.setdefault("HF_HUB_DISABLE_PROGRESS_BARS", "1")

WORDS = ["pay", "my", "bill", "check", "the", "balance", "book", "a",
         "flight", "cancel", "order", "weather", "today", "zz", "qq", "xx"]


@pytest.fixture(scope="session")
def tiny_encoder_dir(tmp_path_factory):
    import torch
    from transformers import BertConfig, BertModel, BertTokenizerFast

    root = tmp_path_factory.mktemp("encoder")
    vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"] + WORDS
    vocab_file = root / "vocab.txt"
    vocab_file.write_text("\n".join(vocab) + "\n", encoding="utf-8")

    tokenizer = BertTokenizerFast(str(vocab_file), do_lower_case=True)
    config = BertConfig(vocab_size=len(vocab), hidden_size=16,
                        num_hidden_layers=2, num_attention_heads=2,
                        intermediate_size=32, max_position_embeddings=16)
    torch.manual_seed(1234)
    model = BertModel(config)
    model.eval()
    tokenizer.save_pretrained(root)
    model.save_pretrained(root)
    return str(root)


@pytest.fixture()
def dataset_file(tmp_path):
    payload = {
        "train": [["pay my bill", "pay_bill"], ["check the balance", "balance"],
                  ["pay my bill", "pay_bill"]],
        "val": [["book a flight", "book_flight"]],
        "test": [["cancel my order", "cancel_order"]],
        "oos_train": [["zz qq", "oos"]],
        "oos_val": [["qq xx", "oos"]],
        "oos_test": [["zz xx qq", "oos"]],
    }
    path = tmp_path / "data.json"
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path
