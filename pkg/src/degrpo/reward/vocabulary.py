"""The 103-token facial annotation vocabulary and its file formats."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

# channel order is fixed everywhere: reward weights, indicator vectors, files
CHANNELS = ("attribute", "emotion", "action")

# token -> occurrence count in the source annotation corpus
APPEARANCE_COUNTS = {
    "blurry": 610, "male": 38434, "young": 15252, "chubby": 4880, "pale_skin": 2440,
    "rosy_cheeks": 11591, "oval_face": 3660, "receding_hairline": 7321, "bald": 1830,
    "bangs": 6711, "black_hair": 16472, "blond_hair": 9761, "gray_hair": 7626,
    "brown_hair": 20742, "straight_hair": 9151, "wavy_hair": 12201, "long_hair": 13422,
    "arched_eyebrows": 20742, "bushy_eyebrows": 10371, "bags_under_eyes": 5491,
    "eyeglasses": 6467, "sunglasses": 1834, "narrow_eyes": 1220, "big_nose": 14621,
    "pointy_nose": 28674, "high_cheekbones": 3672, "big_lips": 2928, "double_chin": 2671,
    "no_beard": 35994, "5_o'clock_shadow": 7981, "goatee": 976, "sideburns": 10981,
    "mustache": 2478, "heavy_makeup": 8541, "wearing_earrings": 8976, "wearing_hat": 4271,
    "wearing_lipstick": 8663, "wearing_necklace": 3663, "wearing_necktie": 3512,
    "wearing_mask": 1021, "facial_tattoos": 244, "facial_hair": 126, "clean_shaven": 421,
    "stubbly": 17784, "shaved_head": 276, "crew_cut": 7123, "mullet": 62, "bald_spot": 42,
}
ACTION_COUNTS = {
    "blow": 1961, "chew": 1891, "close_eyes": 2441, "cough": 51, "cry": 692, "drink": 1161,
    "eat": 1432, "frown": 9761, "gaze": 9151, "glare": 3678, "head_wagging": 13421, "kiss": 918,
    "laugh": 2189, "listen_to_music": 1513, "look_around": 7688, "make_a_face": 107, "nod": 8907,
    "play_instrument": 102, "read": 811, "shake_head": 7931, "shout": 2032, "sign": 1712,
    "sing": 2001, "sleep": 599, "smile": 15241, "smoke": 1271, "sneeze": 22, "sneer": 1621,
    "sniff": 2318, "talk": 46775, "turn": 10981, "weep": 2271, "whisper": 2121, "wink": 2098,
    "yawn": 92, "blush": 6421, "grin": 8724, "grimace": 102, "scrunch": 812, "squint": 92,
    "stare": 651, "smirk": 61, "sigh": 118, "pout": 141, "wince": 271,
}
EMOTION_COUNTS = {
    "happy": 10798, "sad": 4472, "surprise": 726, "neutral": 39869, "anger": 3629,
    "contempt": 469, "disgust": 1403, "fear": 836, "shame": 31, "confusion": 36,
}
N_ANNOTATED_VIDEOS = 61007


class VocabularyError(KeyError):
    """A token is not registered in the channel it was used in."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown token"


@dataclass(frozen=True)
class Vocabulary:
    """Ordered token lists per channel, with flat indices ``attribute | emotion | action``."""

    attribute: tuple[str, ...]
    emotion: tuple[str, ...]
    action: tuple[str, ...]

    def __post_init__(self):
        for ch in CHANNELS:
            toks = getattr(self, ch)
            if len(set(toks)) != len(toks):
                raise ValueError(f"duplicate tokens in channel {ch!r}")

    @classmethod
    def full(cls) -> "Vocabulary":
        return cls(tuple(APPEARANCE_COUNTS), tuple(EMOTION_COUNTS), tuple(ACTION_COUNTS))

    @classmethod
    def trimmed(cls, per_channel: int = 8) -> "Vocabulary":
        """The ``per_channel`` most frequent tokens of each channel (stable on ties)."""
        def top(counts):
            return tuple(sorted(counts, key=lambda t: -counts[t])[:per_channel])
        return cls(top(APPEARANCE_COUNTS), top(EMOTION_COUNTS), top(ACTION_COUNTS))

    def channel(self, name: str) -> tuple[str, ...]:
        if name not in CHANNELS:
            raise ValueError(f"unknown channel {name!r}; expected one of {CHANNELS}")
        return getattr(self, name)

    @property
    def sizes(self) -> tuple[int, int, int]:
        return tuple(len(self.channel(c)) for c in CHANNELS)

    def __len__(self) -> int:
        return sum(self.sizes)

    def slices(self) -> dict[str, slice]:
        return dict(self._slices)

    @cached_property
    def _slices(self) -> dict[str, slice]:
        out, start = {}, 0
        for c, n in zip(CHANNELS, self.sizes):
            out[c] = slice(start, start + n)
            start += n
        return out

    @cached_property
    def _positions(self) -> dict[tuple[str, str], int]:
        return {ct: i for i, ct in enumerate(self.tokens())}

    def tokens(self) -> list[tuple[str, str]]:
        return [(c, t) for c in CHANNELS for t in self.channel(c)]

    def index(self, channel: str, token: str) -> int:
        self.channel(channel)
        try:
            return self._positions[(channel, token)]
        except KeyError:
            raise VocabularyError(f"token {token!r} is not in the {channel} vocabulary") from None

    def base_rates(self) -> np.ndarray:
        """Per-token occurrence frequency from the source corpus counts."""
        counts = {**APPEARANCE_COUNTS, **EMOTION_COUNTS, **ACTION_COUNTS}
        return np.array([counts.get(t, 0) / N_ANNOTATED_VIDEOS for _, t in self.tokens()])

    def save(self, path) -> None:
        Path(path).write_text("".join(f"{c}\t{t}\n" for c, t in self.tokens()))

    @classmethod
    def load(cls, path) -> "Vocabulary":
        chans: dict[str, list[str]] = {c: [] for c in CHANNELS}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2 or parts[0] not in chans:
                raise ValueError(f"{path}:{lineno}: expected 'channel<TAB>token'")
            chans[parts[0]].append(parts[1])
        return cls(*(tuple(chans[c]) for c in CHANNELS))


@dataclass(frozen=True)
class StructuredResponse:
    attributes: frozenset = frozenset()
    emotions: frozenset = frozenset()
    actions: frozenset = frozenset()

    def __post_init__(self):
        for f in ("attributes", "emotions", "actions"):
            object.__setattr__(self, f, frozenset(getattr(self, f)))

    def channel(self, name: str) -> frozenset:
        return {"attribute": self.attributes, "emotion": self.emotions, "action": self.actions}[name]

    def validate(self, vocab: Vocabulary) -> None:
        for c in CHANNELS:
            allowed = set(vocab.channel(c))
            for tok in self.channel(c):
                if tok not in allowed:
                    raise VocabularyError(f"token {tok!r} is not in the {c} vocabulary")

    def to_indicator(self, vocab: Vocabulary) -> np.ndarray:
        y = np.zeros(len(vocab))
        for c in CHANNELS:
            for tok in self.channel(c):
                y[vocab.index(c, tok)] = 1.0
        return y

    @classmethod
    def from_indicator(cls, y: np.ndarray, vocab: Vocabulary) -> "StructuredResponse":
        sl = vocab.slices()
        sets = [frozenset(t for t, on in zip(vocab.channel(c), y[sl[c]]) if on > 0.5) for c in CHANNELS]
        return cls(attributes=sets[0], emotions=sets[1], actions=sets[2])


def write_annotations(path, records: Mapping[str, StructuredResponse]) -> None:
    """Write ``sample_id<TAB>channel<TAB>token`` lines, tokens sorted per channel."""
    lines = []
    for sid, resp in records.items():
        for c in CHANNELS:
            lines.extend(f"{sid}\t{c}\t{tok}\n" for tok in sorted(resp.channel(c)))
    Path(path).write_text("".join(lines))


def read_annotations(path, vocab: Vocabulary, sample_ids: Iterable[str] = ()) -> dict[str, StructuredResponse]:
    """Parse an annotation file; ``sample_ids`` seeds entries whose truth is empty in every channel."""
    sets: dict[str, dict[str, set]] = {sid: {c: set() for c in CHANNELS} for sid in sample_ids}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 'sample_id<TAB>channel<TAB>token'")
        sid, c, tok = parts
        vocab.index(c, tok)
        sets.setdefault(sid, {ch: set() for ch in CHANNELS})[c].add(tok)
    return {sid: StructuredResponse(s["attribute"], s["emotion"], s["action"]) for sid, s in sets.items()}
