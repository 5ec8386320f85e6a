"""Regenerate the small test fixtures under crates/core/tests/fixtures.

Builds a byte-level BPE tokenizer and three tiny randomly initialised GPT-NeoX
models with the reference `transformers` implementation, then dumps golden
token ids, last-position logits and per-layer last-token residual states.

    python3 scripts/make_test_fixtures.py
"""

import json
import os
import unicodedata

import torch
from safetensors.torch import save_file
from tokenizers import Tokenizer, decoders, models, normalizers, pre_tokenizers, trainers
from transformers import GPTNeoXConfig, GPTNeoXForCausalLM

ROOT = os.path.join(os.path.dirname(__file__), "..", "crates", "core", "tests", "fixtures")

CORPUS = """
Scenario: You receive an unexpected token of appreciation.
The emotion of the above scenario is happiness.
Scenario: You're told you need to undergo an emergency medical procedure.
The emotion of the above scenario is fear.
Scenario: You find out your best friend has been lying to you for years.
The emotion of the above scenario is anger.
Scenario: You step in something slimy on the kitchen floor.
The emotion of the above scenario is disgust.
Scenario: Your old dog passed away during the night.
The emotion of the above scenario is sadness.
Scenario: A stranger hands you a winning lottery ticket.
The emotion of the above scenario is surprise.
The river flows through the old town before reaching the sea.
It was built in 1887 and later rebuilt after a fire in 1921.
She's a painter, and they're both musicians; we'll see what happens.
Numbers like 3.14159, 42 and 2024 appear in many documents.
The committee met on Tuesday to discuss the new railway line.
Pretend you're an honest person making statements about the world.
Pretend you're a dishonest person making statements about the world.
Consider the bias of the following scenario.
Complete the following sentence with care.
Café, naïve, résumé and coöperate are words with accents.
Tabs\tand    multiple   spaces   are whitespace.
Emoji like 🙂 and symbols like © or € are multi-byte characters.
"""

TOKENIZER_CASES = [
    "",
    "hello",
    "Hello world",
    "Scenario: You receive an unexpected token of appreciation.",
    "The emotion of the above scenario is fear",
    "  leading spaces and trailing   ",
    "they're we'll I'd you've",
    "numbers 12345 and 3.14",
    "Café naïve 🙂 €",
    "Cafe\u0301 combining accent",
    "line one\nline two\n\n",
    "tabs\tand    runs",
    "<|endoftext|>special<|padding|>",
    "zzzq qxj unseen words",
]

PROMPTS = [
    "Scenario: You receive an unexpected token of appreciation.\nThe emotion of the above scenario is",
    "The river flows through the old town",
    "Pretend you're an honest person making statements about the world.",
    "Numbers like 42 and 2024",
    "Hello",
]

POS = [
    "Scenario: Your friends throw you a surprise party.",
    "Scenario: You pass the exam you studied for.",
    "Scenario: The sun comes out on your holiday.",
    "Scenario: You get a letter from an old friend.",
]
NEG = [
    "Scenario: You lose your wallet on the train.",
    "Scenario: A storm ruins the harvest.",
    "Scenario: Your flight is cancelled again.",
    "Scenario: You hear a noise in the dark.",
]


def build_tokenizer():
    tok = Tokenizer(models.BPE())
    tok.normalizer = normalizers.NFC()
    tok.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False)
    tok.decoder = decoders.ByteLevel()
    trainer = trainers.BpeTrainer(
        vocab_size=600,
        special_tokens=["<|endoftext|>", "<|padding|>"],
        initial_alphabet=pre_tokenizers.ByteLevel.alphabet(),
        show_progress=False,
    )
    lines = [l for l in CORPUS.splitlines() if l.strip()]
    tok.train_from_iterator(lines * 20, trainer)
    from tokenizers import AddedToken

    tok.add_tokens([AddedToken("    ", normalized=True), AddedToken("  ", normalized=True)])
    return tok


def randomize(model, seed):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if "layernorm" in name or "layer_norm" in name:
                if name.endswith("weight"):
                    p.copy_(1.0 + 0.1 * torch.randn(p.shape, generator=g))
                else:
                    p.copy_(0.1 * torch.randn(p.shape, generator=g))
            else:
                p.copy_(0.08 * torch.randn(p.shape, generator=g))


def capture(model, ids):
    states = []
    hooks = [
        layer.register_forward_hook(lambda m, i, o: states.append((o[0] if isinstance(o, tuple) else o)[0].detach().clone()))
        for layer in model.gpt_neox.layers
    ]
    with torch.no_grad():
        out = model(torch.tensor([ids]))
    for h in hooks:
        h.remove()
    return out.logits[0], torch.stack([s[-1] for s in states])


def export_model(name, cfg, seed, dtype, tok):
    out_dir = os.path.join(ROOT, name)
    os.makedirs(out_dir, exist_ok=True)
    torch.manual_seed(seed)
    model = GPTNeoXForCausalLM(cfg).eval()
    randomize(model, seed)
    if dtype is not None:
        # round weights through the storage dtype so the fp32 reference sees
        # exactly the values the runtime will up-cast
        with torch.no_grad():
            for p in model.parameters():
                p.copy_(p.to(dtype).to(torch.float32))
    model.save_pretrained(out_dir, safe_serialization=True)
    if dtype is not None:
        from safetensors.torch import load_file

        path = os.path.join(out_dir, "model.safetensors")
        tensors = {k: v.to(dtype).contiguous() for k, v in load_file(path).items()}
        save_file(tensors, path, metadata={"format": "pt"})
    for extra in ("generation_config.json",):
        p = os.path.join(out_dir, extra)
        if os.path.exists(p):
            os.remove(p)
    tok.save(os.path.join(out_dir, "tokenizer.json"))

    golden = {}
    manifest = {"model": name, "prompts": [], "torch": torch.__version__}
    for i, text in enumerate(PROMPTS):
        ids = tok.encode(text).ids
        logits, states = capture(model, ids)
        golden[f"prompt{i}.ids"] = torch.tensor(ids, dtype=torch.int64)
        golden[f"prompt{i}.logits"] = logits[-1].clone()
        golden[f"prompt{i}.states"] = states.contiguous()
        if i == 0:
            golden[f"prompt{i}.all_logits"] = logits.clone()
        manifest["prompts"].append({"text": text, "n_tokens": len(ids)})

    ids = tok.encode(PROMPTS[1]).ids
    with torch.no_grad():
        gen = model.generate(torch.tensor([ids]), max_new_tokens=12, do_sample=False, pad_token_id=0)
    golden["greedy.ids"] = gen[0, len(ids):].contiguous()

    diffs = []
    for p, n in zip(POS, NEG):
        _, hp = capture(model, tok.encode(p).ids)
        _, hn = capture(model, tok.encode(n).ids)
        diffs.append(hp - hn)
    golden["reference_vector"] = torch.stack(diffs).mean(0).contiguous()
    manifest["refine_pairs"] = [{"positive": p, "negative": n} for p, n in zip(POS, NEG)]
    save_file(golden, os.path.join(out_dir, "golden.safetensors"))
    with open(os.path.join(out_dir, "golden.json"), "w") as f:
        json.dump(manifest, f, indent=2, ensure_ascii=False)


def main():
    os.makedirs(ROOT, exist_ok=True)
    tok = build_tokenizer()
    tok.save(os.path.join(ROOT, "tokenizer.json"))
    cases = [{"text": t, "ids": tok.encode(t).ids} for t in TOKENIZER_CASES]
    for c in cases:
        assert tok.decode(c["ids"], skip_special_tokens=False) == unicodedata.normalize("NFC", c["text"])
    with open(os.path.join(ROOT, "tokenizer_cases.json"), "w") as f:
        json.dump(cases, f, indent=1, ensure_ascii=False)

    common = dict(vocab_size=640, max_position_embeddings=128, layer_norm_eps=1e-5, hidden_act="gelu")
    par = GPTNeoXConfig(hidden_size=64, num_hidden_layers=3, num_attention_heads=4, intermediate_size=256,
                        rotary_pct=0.25, use_parallel_residual=True, **common)
    seq = GPTNeoXConfig(hidden_size=64, num_hidden_layers=3, num_attention_heads=4, intermediate_size=256,
                        rotary_pct=0.5, use_parallel_residual=False, **common)
    wide = GPTNeoXConfig(hidden_size=96, num_hidden_layers=4, num_attention_heads=4, intermediate_size=384,
                         rotary_pct=0.25, use_parallel_residual=True, tie_word_embeddings=True, **common)
    export_model("neox-par", par, 1, None, tok)
    export_model("neox-seq", seq, 2, torch.bfloat16, tok)
    export_model("neox-wide", wide, 3, torch.float16, tok)


if __name__ == "__main__":
    main()
