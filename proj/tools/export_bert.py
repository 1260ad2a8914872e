#!/usr/bin/env python3
"""Convert a Hugging Face BERT checkpoint into an fckt pretrained directory.

Writes OUTPUT/config.json, OUTPUT/vocab.txt and OUTPUT/weights.fckt, which
`--encoder.kind pretrained --encoder.path OUTPUT` loads.

    python3 tools/export_bert.py bert-base-uncased out/bert-base
"""

import argparse
import json
import shutil
import struct
import sys
from pathlib import Path

import numpy as np
import torch
from transformers import BertModel, BertTokenizer

MAGIC = b"FCKTTNSR"
VERSION = 1

CONFIG_KEYS = (
    "hidden_size", "num_hidden_layers", "num_attention_heads", "intermediate_size",
    "max_position_embeddings", "type_vocab_size", "layer_norm_eps", "hidden_act",
)

LAYER_MAP = {
    "attention.self.query": "attn.q",
    "attention.self.key": "attn.k",
    "attention.self.value": "attn.v",
    "attention.output.dense": "attn.out",
    "attention.output.LayerNorm": "attn.ln",
    "intermediate.dense": "ffn.in",
    "output.dense": "ffn.out",
    "output.LayerNorm": "ffn.ln",
}

EMBEDDING_MAP = {
    "word_embeddings.weight": "encoder.embeddings.word",
    "position_embeddings.weight": "encoder.embeddings.position",
    "token_type_embeddings.weight": "encoder.embeddings.token_type",
    "LayerNorm.weight": "encoder.embeddings.ln.gain",
    "LayerNorm.bias": "encoder.embeddings.ln.bias",
}


def convert_state_dict(state):
    """Map BERT parameter names to fckt names. Linear weights become (in, out)."""
    out = {}
    for name, tensor in state.items():
        name = name.removeprefix("bert.")
        value = tensor.detach().to(torch.float64).cpu().numpy()
        if name.startswith("embeddings."):
            key = name[len("embeddings."):]
            if key not in EMBEDDING_MAP:
                continue
            out[EMBEDDING_MAP[key]] = value.reshape(1, -1) if value.ndim == 1 else value
            continue
        if not name.startswith("encoder.layer."):
            continue
        index, rest = name[len("encoder.layer."):].split(".", 1)
        module, leaf = rest.rsplit(".", 1)
        if module not in LAYER_MAP:
            raise ValueError(f"unexpected parameter {name}")
        prefix = f"encoder.layer{index}.{LAYER_MAP[module]}"
        if module.endswith("LayerNorm"):
            out[f"{prefix}.{'gain' if leaf == 'weight' else 'bias'}"] = value.reshape(1, -1)
        elif leaf == "weight":
            out[f"{prefix}.weight"] = value.T
        else:
            out[f"{prefix}.bias"] = value.reshape(1, -1)
    return out


def write_archive(path, tensors, meta=None):
    names = sorted(tensors)
    header = {
        "meta": meta or {},
        "tensors": [{"name": n, "rows": int(tensors[n].shape[0]), "cols": int(tensors[n].shape[1])} for n in names],
    }
    text = json.dumps(header, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", VERSION, len(text)))
        f.write(text)
        for n in names:
            f.write(np.ascontiguousarray(tensors[n], dtype="<f8").tobytes())


def export(source, output):
    model = BertModel.from_pretrained(source, add_pooling_layer=False)
    if model.config.hidden_act != "gelu":
        raise ValueError(f"hidden_act {model.config.hidden_act!r} is not supported, only exact gelu")
    tokenizer = BertTokenizer.from_pretrained(source)
    output = Path(output)
    output.mkdir(parents=True, exist_ok=True)

    config = {k: getattr(model.config, k) for k in CONFIG_KEYS}
    config["do_lower_case"] = bool(tokenizer.do_lower_case)
    (output / "config.json").write_text(json.dumps(config, indent=2) + "\n")

    vocab = Path(source) / "vocab.txt"
    if vocab.is_file():
        shutil.copyfile(vocab, output / "vocab.txt")
    else:
        tokenizer.save_vocabulary(str(output))

    tensors = convert_state_dict(model.state_dict())
    write_archive(output / "weights.fckt", tensors, {"source": str(source)})
    return tensors


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("source", help="model directory or hub name")
    parser.add_argument("output", help="destination directory")
    args = parser.parse_args(argv)
    tensors = export(args.source, args.output)
    print(f"wrote {len(tensors)} tensors to {args.output}", file=sys.stderr)


if __name__ == "__main__":
    main()
