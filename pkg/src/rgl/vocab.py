from __future__ import annotations

from typing import Iterable, Sequence

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
SPECIALS = (PAD, BOS, EOS, UNK)


class UnknownToken(KeyError):
    pass


class Vocab:
    """Single vocabulary shared by sentence words and graph tokens."""

    def __init__(self, tokens: Iterable[str]):
        self.itos: list[str] = list(SPECIALS)
        seen = set(self.itos)
        for t in tokens:
            if t not in seen:
                seen.add(t)
                self.itos.append(t)
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    pad_id = 0
    bos_id = 1
    eos_id = 2
    unk_id = 3

    def __len__(self):
        return len(self.itos)

    def __contains__(self, tok: str):
        return tok in self.stoi

    def encode(self, tokens: Sequence[str], strict: bool = False) -> list[int]:
        out = []
        for t in tokens:
            i = self.stoi.get(t)
            if i is None:
                if strict:
                    raise UnknownToken(t)
                i = self.unk_id
            out.append(i)
        return out

    def decode(self, ids: Sequence[int], strip: bool = True) -> list[str]:
        toks = [self.itos[i] for i in ids]
        if strip:
            toks = [t for t in toks if t not in (PAD, BOS, EOS)]
        return toks

    def to_text(self) -> str:
        return " ".join(self.itos[len(SPECIALS):])

    @classmethod
    def from_text(cls, text: str) -> "Vocab":
        return cls(text.split())

    @classmethod
    def build(cls, sequences: Iterable[Sequence[str]], max_pointer: int = 0) -> "Vocab":
        toks: list[str] = [f"<R{k}>" for k in range(max_pointer)]
        seen = set(toks)
        for seq in sequences:
            for t in seq:
                if t not in seen:
                    seen.add(t)
                    toks.append(t)
        return cls(toks)
