"""Word-level prompt vocabulary."""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field, model_validator

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_ID = 0
UNK_ID = 1


class PromptVocab(BaseModel):
    """Token to id map. Ids are dense; PAD=0 and UNK=1 are reserved."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    token_to_id: dict[str, int] = Field(..., description="Word to id map including the reserved tokens")

    @model_validator(mode="after")
    def _check_ids(self) -> PromptVocab:
        if self.token_to_id.get(PAD_TOKEN) != PAD_ID or self.token_to_id.get(UNK_TOKEN) != UNK_ID:
            raise ValueError("reserved ids must be <pad>=0 and <unk>=1")
        if sorted(self.token_to_id.values()) != list(range(len(self.token_to_id))):
            raise ValueError("vocabulary ids must be dense from 0")
        return self

    @property
    def size(self) -> int:
        return len(self.token_to_id)

    def id_of(self, word: str) -> int:
        return self.token_to_id.get(word, UNK_ID)
