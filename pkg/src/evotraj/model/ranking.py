"""Ranked next-mutation inference from a trained model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..tokenizer import PREFIX_LENGTH, Tokenizer
from .transformer import Transformer


@dataclass(frozen=True)
class RankedPrediction:
    """Candidate mutation tokens with scores, best first."""

    context_id: str
    tokens: tuple[int, ...]
    scores: tuple[float, ...]
    k: int

    def __post_init__(self):
        if len(self.tokens) != len(set(self.tokens)):
            raise ValueError("duplicate candidates in ranking")


def rank_next_mutations(
    model: Transformer,
    tokenizer: Tokenizer,
    context_tokens: list[int],
    k: int,
    context_id: str = "",
) -> RankedPrediction:
    """Top-k mutation-block tokens by model probability at the end of the context.

    Tokens already present in the context trajectory are excluded: the same
    site-state event cannot meaningfully recur.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    probs = model.forward(np.asarray(context_tokens, dtype=np.int64))[0, -1]
    lo, hi = tokenizer.mutation_block
    mut_probs = probs[lo:hi].copy()
    for t in context_tokens[PREFIX_LENGTH:]:
        if lo <= t < hi:
            mut_probs[t - lo] = -1.0
    k_eff = min(k, len(mut_probs))
    top = np.argpartition(mut_probs, -k_eff)[-k_eff:]
    top = top[np.argsort(mut_probs[top])[::-1]]
    top = top[mut_probs[top] >= 0.0]
    return RankedPrediction(
        context_id=context_id,
        tokens=tuple(int(t) + lo for t in top),
        scores=tuple(float(mut_probs[t]) for t in top),
        k=k,
    )


def strip_location(tokenizer: Tokenizer, context_tokens: list[int]) -> list[int]:
    """Replace the prefix's location tokens with the unknown token."""
    out = list(context_tokens)
    out[0] = tokenizer.unknown_token
    out[1] = tokenizer.unknown_token
    return out


def rank_without_location(
    model: Transformer,
    tokenizer: Tokenizer,
    context_tokens: list[int],
    k: int,
    context_id: str = "",
) -> RankedPrediction:
    """As rank_next_mutations, with location information withheld."""
    return rank_next_mutations(
        model, tokenizer, strip_location(tokenizer, context_tokens), k, context_id
    )
