"""Token-level uncertainty feature extraction from causal LMs into HFJ v1."""

from .extract import (ExtractionError, extract, extract_with_model,
                      generate_features, read_prompts, write_hfj)
from .runtime import ByteTokenizer, HfCausalRuntime, ModelAccessError

__version__ = "0.1.0"
