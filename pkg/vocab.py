"""Word-level vocabulary with fixed reserved ids."""
import json
import logging
from collections import Counter
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Union

from errors import DataValidationError

logger = logging.getLogger(__name__)

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP)
PAD_ID, UNK_ID, CLS_ID, SEP_ID = range(4)


def tokenize(text: str) -> List[str]:
    """Lowercased whitespace split."""
    return text.lower().split()


class Vocab:
    """token -> id map; ids 0..3 are always [PAD], [UNK], [CLS], [SEP]."""

    def __init__(self, tokens: Sequence[str]):
        self.id_to_token: List[str] = list(SPECIAL_TOKENS)
        self.token_to_id: Dict[str, int] = {tok: i for i, tok in enumerate(SPECIAL_TOKENS)}
        for tok in tokens:
            if tok in self.token_to_id:
                raise DataValidationError(f"duplicate vocabulary token '{tok}'")
            self.token_to_id[tok] = len(self.id_to_token)
            self.id_to_token.append(tok)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.id_to_token == other.id_to_token

    @property
    def words(self) -> List[str]:
        """Non-reserved tokens in id order."""
        return self.id_to_token[len(SPECIAL_TOKENS):]

    def encode(self, text: str) -> List[int]:
        return [self.token_to_id.get(tok, UNK_ID) for tok in tokenize(text)]

    def decode(self, ids: Iterable[int]) -> str:
        return " ".join(self.id_to_token[i] for i in ids if i not in (PAD_ID, CLS_ID, SEP_ID))

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.words, ensure_ascii=False, indent=0) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Vocab":
        try:
            words = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise DataValidationError(f"cannot read vocabulary {path}: {e}")
        return cls(words)


def count_tokens(texts: Iterable[str]) -> Counter:
    counts: Counter = Counter()
    for text in texts:
        counts.update(tokenize(text))
    return counts


def vocab_from_counts(counts: Counter, min_freq: int = 1) -> Vocab:
    """Keep tokens with frequency >= min_freq ordered by (frequency desc, token asc)."""
    kept = [tok for tok, n in counts.items() if n >= min_freq and tok not in SPECIAL_TOKENS]
    kept.sort(key=lambda tok: (-counts[tok], tok))
    logger.info("Vocabulary: %d of %d distinct tokens kept (min_freq=%d)", len(kept), len(counts), min_freq)
    return Vocab(kept)
