"""Whitespace tokenizer over a fixed vocabulary with four reserved slots."""

from __future__ import annotations

from pathlib import Path

from .errors import ValidationError

CLS_ID = 0
SEP_ID = 1
PAD_ID = 2
UNK_ID = 3
NUM_RESERVED = 4

RESERVED_TOKENS = ("[CLS]", "[SEP]", "[PAD]", "[UNK]")


class Vocabulary:
    """Token-to-id map with CLS=0, SEP=1, PAD=2, UNK=3 fixed.

    Regular tokens occupy contiguous ids starting at 4, in the order given
    (file order when loaded from disk: line number = id - 4).
    """

    def __init__(self, tokens: list[str]):
        self.token_to_id: dict[str, int] = {}
        for tok in RESERVED_TOKENS:
            self.token_to_id[tok] = len(self.token_to_id)
        for tok in tokens:
            if not tok or tok.isspace():
                raise ValidationError("vocabulary tokens must be non-empty")
            if tok in self.token_to_id:
                raise ValidationError(f"duplicate vocabulary token: {tok!r}")
            self.token_to_id[tok] = len(self.token_to_id)
        self.id_to_token = list(self.token_to_id)

    def __len__(self) -> int:
        return len(self.token_to_id)

    def encode(self, text: str) -> list[int]:
        """Whitespace-split and map to ids; unknown words become UNK."""
        return [self.token_to_id.get(tok, UNK_ID) for tok in text.split()]

    def decode(self, ids: list[int]) -> str:
        return " ".join(self.id_to_token[i] for i in ids)

    def save(self, path: str | Path) -> None:
        """One regular token per line, UTF-8; reserved slots are implicit."""
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.id_to_token[NUM_RESERVED:]:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh]
        return cls([t for t in tokens if t])
