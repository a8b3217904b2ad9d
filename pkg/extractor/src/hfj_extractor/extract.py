"""Generate answers with a causal LM and record per-token uncertainty
features into an HFJ v1 file.

For each prompt row the model generates a low-temperature answer of at most
``l_max`` tokens. At every step it records, for the token actually emitted:

* its log-probability under the model's raw next-token distribution,
* the full-vocabulary Shannon entropy of that distribution (computed at
  float64; sampling temperature changes which token is picked, never the
  recorded entropy, unless ``entropy_after_temperature`` is set),
* the chosen layer's hidden state at the emitted token's position.

Labels come from the prompt file; judging answers is someone else's job (a
judge can be plugged in where rows are read, replacing the ``label`` field).

Prompt file: JSON object per line with ``id``, ``question``, ``label`` and
optional ``context``. Each row includes its context with probability
``context_prob`` (seeded). Output is written to a temp file and atomically
renamed into place.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .runtime import HfCausalRuntime

HFJ_FORMAT = "hfj"
HFJ_VERSION = 1
DEFAULT_L_MAX = 50


class ExtractionError(ValueError):
    pass


@dataclass
class PromptRow:
    id: str
    question: str
    context: str | None
    label: int


@dataclass
class TokenFeatures:
    log_likelihoods: list[float]
    entropies: list[float]
    hiddens: list[np.ndarray]

    def __len__(self) -> int:
        return len(self.log_likelihoods)


def read_prompts(path) -> list[PromptRow]:
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ExtractionError(f"prompt line {lineno}: invalid JSON ({e.msg})") from e
            for key in ("id", "question", "label"):
                if key not in obj:
                    raise ExtractionError(f"prompt line {lineno}: missing field {key!r}")
            if obj["label"] not in (0, 1):
                raise ExtractionError(f"prompt line {lineno}: label must be 0 or 1")
            rows.append(PromptRow(str(obj["id"]), str(obj["question"]),
                                  obj.get("context"), int(obj["label"])))
    return rows


def _softmax64(logits: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64)
    z -= z.max()
    e = np.exp(z)
    return e / e.sum()


def _entropy(probs: np.ndarray, vocab_size: int) -> float:
    nz = probs[probs > 0.0]
    h = float(-(nz * np.log(nz)).sum())
    # uniform distributions can overshoot log V by a few ulp
    return min(max(h, 0.0), math.log(vocab_size))


def generate_features(runtime, prompt_ids: list[int], l_max: int, temperature: float,
                      rng: np.random.Generator, greedy: bool,
                      entropy_after_temperature: bool = False) -> TokenFeatures:
    """Autoregressive generation collecting (ll, entropy, hidden) per emitted
    token. Stops at the EOS token (excluded) or after l_max tokens."""
    feats = TokenFeatures([], [], [])
    ids = list(prompt_ids)
    logits, _ = runtime.forward(ids)
    for _ in range(l_max):
        p_raw = _softmax64(logits)
        if entropy_after_temperature and temperature > 0:
            h = _entropy(_softmax64(logits / temperature), runtime.vocab_size)
        else:
            h = _entropy(p_raw, runtime.vocab_size)
        if greedy or temperature <= 0:
            token = int(np.argmax(p_raw))
        else:
            p_sample = _softmax64(logits / temperature)
            token = int(rng.choice(runtime.vocab_size, p=p_sample))
        if runtime.eos_id is not None and token == runtime.eos_id:
            break
        feats.log_likelihoods.append(float(np.log(p_raw[token])))
        feats.entropies.append(h)
        ids.append(token)
        logits, hidden = runtime.forward(ids)
        feats.hiddens.append(np.asarray(hidden, dtype=np.float32))
    return feats


def _f32_repr(values) -> list[float]:
    # float32 -> float64 is exact, so the shortest decimal repr round-trips
    return [float(np.float32(v)) for v in values]


def write_hfj(records: list[dict], d_emb: int, l_max: int, out_path) -> None:
    tmp_path = str(out_path) + ".tmp"
    with open(tmp_path, "w", encoding="utf-8", newline="\n") as f:
        header = {"format": HFJ_FORMAT, "version": HFJ_VERSION,
                  "l_max": l_max, "d_emb": d_emb}
        f.write(json.dumps(header, separators=(",", ":")) + "\n")
        for rec in records:
            f.write(json.dumps(rec, separators=(",", ":")) + "\n")
    os.replace(tmp_path, out_path)


def extract(prompt_path, out_path, runtime, l_max: int = DEFAULT_L_MAX,
            temperature: float = 0.1, context_prob: float = 0.5, seed: int = 0,
            greedy: bool = False, entropy_after_temperature: bool = False) -> int:
    """Run extraction over a prompt file; returns the number of records
    written. Deterministic for a fixed seed (exactly so under greedy
    decoding)."""
    rows = read_prompts(prompt_path)
    rng = np.random.default_rng(seed)
    records = []
    for row in rows:
        use_context = rng.random() < context_prob  # drawn per row regardless,
        include = row.context is not None and use_context  # keeping the stream aligned
        prompt_ids = runtime.encode_prompt(row.question, row.context if include else None)
        feats = generate_features(runtime, prompt_ids, l_max, temperature, rng,
                                  greedy, entropy_after_temperature)
        if len(feats) == 0:
            raise ExtractionError(f"row {row.id!r}: empty generation")
        records.append({
            "id": row.id,
            "context_present": include,
            "true_len": len(feats),
            "label": row.label,
            "ll": _f32_repr(feats.log_likelihoods),
            "ent": _f32_repr(feats.entropies),
            "emb": [_f32_repr(h) for h in feats.hiddens],
        })
    write_hfj(records, d_emb=runtime.hidden_size, l_max=l_max, out_path=out_path)
    return len(records)


def extract_with_model(prompt_path, out_path, model_id: str, layer_index: int = 20,
                       temperature: float = 0.1, context_prob: float = 0.5,
                       seed: int = 0, l_max: int = DEFAULT_L_MAX,
                       greedy: bool = False, tokenizer_kind: str = "auto",
                       device: str = "cpu",
                       entropy_after_temperature: bool = False) -> int:
    runtime = HfCausalRuntime.from_pretrained(
        model_id, layer_index=layer_index, tokenizer_kind=tokenizer_kind, device=device)
    return extract(prompt_path, out_path, runtime, l_max=l_max, temperature=temperature,
                   context_prob=context_prob, seed=seed, greedy=greedy,
                   entropy_after_temperature=entropy_after_temperature)
