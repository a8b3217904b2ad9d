"""Causal-LM runtimes for feature extraction.

A runtime is anything with ``vocab_size``, ``hidden_size``, ``eos_id``,
``encode_prompt(question, context) -> list[int]`` and
``forward(ids) -> (next_token_logits float64[V], last_hidden float32[d])``,
where ``last_hidden`` is the chosen layer's activation at the last position of
``ids``. ``HfCausalRuntime`` adapts any Hugging Face causal LM that exposes
per-layer hidden states.
"""

from __future__ import annotations

import numpy as np


class ModelAccessError(ValueError):
    """Model cannot serve extraction (no hidden states, bad layer index...)."""


class ByteTokenizer:
    """Offline fallback tokenizer: UTF-8 bytes as token ids. Needs a model
    vocabulary of at least 256."""

    def encode(self, text: str) -> list[int]:
        return list(text.encode("utf-8"))


class HfCausalRuntime:
    """Wraps a transformers causal LM for step-wise distribution and
    hidden-state access. No KV cache: prefixes are re-run whole, which is fine
    at the answer lengths this produces (TODO: reuse past_key_values when
    extracting from multi-billion-parameter models)."""

    PROMPT_WITH_CONTEXT = "Context: {context}\nQuestion: {question}\nAnswer:"
    PROMPT_NO_CONTEXT = "Question: {question}\nAnswer:"

    def __init__(self, model, tokenizer, layer_index: int = 20, device: str = "cpu"):
        import torch

        self._torch = torch
        self.model = model.to(device).eval()
        self.tokenizer = tokenizer
        self.device = device
        self.layer_index = layer_index

        config = self.model.config
        self.vocab_size = int(config.vocab_size)
        self.eos_id = getattr(config, "eos_token_id", None)
        n_layer_states = self._probe_hidden_states()
        if not (0 <= layer_index < n_layer_states):
            raise ModelAccessError(
                f"layer_index {layer_index} out of range: model exposes hidden "
                f"states 0..{n_layer_states - 1} (0 is the embedding layer)")
        probe = self._forward_raw([0])
        self.hidden_size = int(probe.hidden_states[layer_index].shape[-1])

    @classmethod
    def from_pretrained(cls, model_id: str, layer_index: int = 20,
                        tokenizer_kind: str = "auto", device: str = "cpu"):
        from transformers import AutoModelForCausalLM, AutoTokenizer

        model = AutoModelForCausalLM.from_pretrained(model_id)
        if tokenizer_kind == "byte":
            if model.config.vocab_size < 256:
                raise ModelAccessError("byte tokenizer needs vocab_size >= 256")
            tokenizer = ByteTokenizer()
        else:
            tokenizer = AutoTokenizer.from_pretrained(model_id)
        return cls(model, tokenizer, layer_index=layer_index, device=device)

    def _forward_raw(self, ids: list[int]):
        torch = self._torch
        with torch.no_grad():
            out = self.model(torch.tensor([ids], device=self.device),
                             output_hidden_states=True)
        if getattr(out, "hidden_states", None) is None:
            raise ModelAccessError("model does not expose hidden states")
        return out

    def _probe_hidden_states(self) -> int:
        return len(self._forward_raw([0]).hidden_states)

    def encode_prompt(self, question: str, context: str | None) -> list[int]:
        if context is not None:
            text = self.PROMPT_WITH_CONTEXT.format(context=context, question=question)
        else:
            text = self.PROMPT_NO_CONTEXT.format(question=question)
        ids = self.tokenizer.encode(text)
        if not ids:
            raise ModelAccessError("tokenizer produced an empty prompt")
        return [int(i) for i in ids]

    def forward(self, ids: list[int]) -> tuple[np.ndarray, np.ndarray]:
        out = self._forward_raw(ids)
        logits = out.logits[0, -1].double().cpu().numpy()
        hidden = out.hidden_states[self.layer_index][0, -1].float().cpu().numpy()
        return logits, hidden
