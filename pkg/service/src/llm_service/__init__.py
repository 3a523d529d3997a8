"""Reference generation service: a small causal language model behind the
HTTP wire protocol (generate / perplexity / embed / health), plus low-rank
adapter fine-tuning on exported prompt JSONL with a per-prompt epoch
schedule."""

__version__ = "0.1.0"
