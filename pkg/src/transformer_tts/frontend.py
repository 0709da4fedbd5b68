"""Rule-based text-to-phoneme front end.

Pipeline: sentence separation, normalization (abbreviations, numbers,
punctuation), word segmentation, then pronunciation lookup with a
letter-to-sound fallback. Word boundaries, syllable boundaries and
punctuation are emitted as marker tokens.
"""

from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

logger = logging.getLogger(__name__)

PAD = "PAD"
BOS = "BOS"
EOS = "EOS"
WORD_BOUNDARY = "WORD_BOUNDARY"
SYLLABLE_BOUNDARY = "SYLLABLE_BOUNDARY"

PUNCTUATION = {
    ".": "PUNCT_PERIOD",
    ",": "PUNCT_COMMA",
    "?": "PUNCT_QUESTION",
    "!": "PUNCT_EXCLAMATION",
    ";": "PUNCT_SEMICOLON",
    ":": "PUNCT_COLON",
}
TERMINAL = ".?!"

VOWELS = ("AA", "AE", "AH", "AO", "AW", "AY", "EH", "ER", "EY", "IH", "IY", "OW", "OY",
          "UH", "UW")


class EmptyInputError(ValueError):
    """Raised when text normalizes to nothing pronounceable."""


class Inventory:
    """Bijective symbol <-> id mapping; ``PAD`` is always id 0."""

    def __init__(self, symbols):
        symbols = list(symbols)
        if not symbols or symbols[0] != PAD:
            raise ValueError("inventory must start with PAD")
        if len(set(symbols)) != len(symbols):
            raise ValueError("inventory symbols must be unique")
        self.symbols = symbols
        self._ids = {s: i for i, s in enumerate(symbols)}

    @classmethod
    def from_file(cls, path) -> "Inventory":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(line.strip() for line in lines if line.strip())

    @classmethod
    def default(cls) -> "Inventory":
        text = resources.files(__package__).joinpath("data/inventory.txt").read_text("utf-8")
        return cls(line.strip() for line in text.splitlines() if line.strip())

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.symbols) + "\n", encoding="utf-8")

    def __len__(self) -> int:
        return len(self.symbols)

    def __contains__(self, symbol) -> bool:
        return symbol in self._ids

    def id(self, symbol: str) -> int:
        try:
            return self._ids[symbol]
        except KeyError:
            raise KeyError(f"symbol {symbol!r} not in inventory") from None

    def symbol(self, idx: int) -> str:
        if not 0 <= idx < len(self.symbols):
            raise IndexError(f"phoneme id {idx} out of range")
        return self.symbols[idx]

    def encode(self, symbols) -> list[int]:
        return [self.id(s) for s in symbols]

    def decode(self, ids) -> list[str]:
        return [self.symbol(int(i)) for i in ids]


class Lexicon:
    """Word -> pronunciation map; ``.`` in an entry marks a syllable boundary."""

    def __init__(self, entries: dict[str, list[str]] | None = None):
        self.entries = {k.lower(): list(v) for k, v in (entries or {}).items()}

    @classmethod
    def from_file(cls, path) -> "Lexicon":
        return cls(_parse_lexicon(Path(path).read_text(encoding="utf-8")))

    @classmethod
    def default(cls) -> "Lexicon":
        text = resources.files(__package__).joinpath("data/lexicon.tsv").read_text("utf-8")
        return cls(_parse_lexicon(text))

    def lookup(self, word: str) -> list[str] | None:
        return self.entries.get(word.lower())

    def __contains__(self, word) -> bool:
        return word.lower() in self.entries

    def __len__(self) -> int:
        return len(self.entries)


def _parse_lexicon(text: str) -> dict[str, list[str]]:
    entries = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            word, pron = line.split("\t")
        except ValueError:
            raise ValueError(f"lexicon line {lineno}: expected 'word<TAB>phones'") from None
        entries[word.strip().lower()] = pron.split()
    return entries


@dataclass
class TokenSequence:
    ids: list[int]
    source_text: str
    symbols: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.ids)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

ABBREVIATIONS = {
    "dr": "doctor",
    "mr": "mister",
    "mrs": "missus",
    "prof": "professor",
    "st": "street",
    "ave": "avenue",
    "jr": "junior",
    "sr": "senior",
    "vs": "versus",
    "etc": "etcetera",
}

_ONES = ["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
         "ten", "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen",
         "seventeen", "eighteen", "nineteen"]
_TENS = ["", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety"]
_SCALES = [(10 ** 9, "billion"), (10 ** 6, "million"), (1000, "thousand")]

_ABBREV_RE = re.compile(r"\b(" + "|".join(ABBREVIATIONS) + r")\.", re.IGNORECASE)
_NUMBER_RE = re.compile(r"((?<![a-z0-9])-)?(\d+(?:,\d{3})*)(?:\.(\d+))?")
_ALLOWED = set("abcdefghijklmnopqrstuvwxyz' ") | set(PUNCTUATION)


def number_to_words(n: int) -> str:
    if n < 0:
        return "minus " + number_to_words(-n)
    if n < 20:
        return _ONES[n]
    if n < 100:
        tens, ones = divmod(n, 10)
        return _TENS[tens] + ("" if ones == 0 else " " + _ONES[ones])
    if n < 1000:
        hundreds, rest = divmod(n, 100)
        head = _ONES[hundreds] + " hundred"
        return head if rest == 0 else head + " " + number_to_words(rest)
    for value, word in _SCALES:
        if n >= value:
            head, rest = divmod(n, value)
            out = number_to_words(head) + " " + word
            return out if rest == 0 else out + " " + number_to_words(rest)
    raise AssertionError("unreachable")


def _expand_number(match: re.Match) -> str:
    sign, whole, frac = match.groups()
    words = number_to_words(int(whole.replace(",", "")))
    if frac:
        words += " point " + " ".join(_ONES[int(d)] for d in frac)
    if sign:
        words = "minus " + words
    return f" {words} "


def normalize_text(raw: str, dropped: Counter | None = None) -> str:
    """Lowercase, expand abbreviations and numbers, keep only marker punctuation.

    Characters outside the retained set are dropped; their counts are added
    to ``dropped`` when given.
    """
    text = raw.lower()
    text = _ABBREV_RE.sub(lambda m: " " + ABBREVIATIONS[m.group(1).lower()] + " ", text)
    text = _NUMBER_RE.sub(_expand_number, text)
    text = re.sub(r"[-–—/_\t\n\r]", " ", text)
    kept = []
    n_dropped = 0
    for ch in text:
        if ch in _ALLOWED:
            kept.append(ch)
        else:
            n_dropped += 1
            if dropped is not None:
                dropped[ch] += 1
    if n_dropped:
        logger.warning("normalize_text dropped %d unsupported character(s)", n_dropped)
    text = "".join(kept)
    # apostrophes survive only inside words
    text = re.sub(r"(?<![a-z])'|'(?![a-z])", " ", text)
    text = re.sub(r"\s+([.,?!;:])", r"\1", text)
    text = re.sub(r"([.,?!;:])(?=[^\s.,?!;:])", r"\1 ", text)
    return re.sub(r"\s+", " ", text).strip()


def split_sentences(text: str) -> list[str]:
    parts = re.findall(r"[^.?!]+[.?!]*|[.?!]+", text)
    return [p.strip() for p in parts if p.strip()]


def tokenize_words(text: str) -> list[str]:
    """Split normalized text into words and single punctuation tokens."""
    return re.findall(r"[a-z']+|[.,?!;:]", text)


# ---------------------------------------------------------------------------
# letter-to-sound rules
# ---------------------------------------------------------------------------

# ordered longest-first inside each table
_CONSONANT_CHUNKS = [
    ("tch", ["CH"]), ("sch", ["S", "K"]),
    ("ch", ["CH"]), ("sh", ["SH"]), ("th", ["TH"]), ("ph", ["F"]), ("ck", ["K"]),
    ("ng", ["NG"]), ("qu", ["K", "W"]), ("wh", ["W"]), ("gh", []),
    ("b", ["B"]), ("c", ["K"]), ("d", ["D"]), ("f", ["F"]), ("g", ["G"]), ("h", ["HH"]),
    ("j", ["JH"]), ("k", ["K"]), ("l", ["L"]), ("m", ["M"]), ("n", ["N"]), ("p", ["P"]),
    ("r", ["R"]), ("s", ["S"]), ("t", ["T"]), ("v", ["V"]), ("w", ["W"]), ("x", ["K", "S"]),
    ("z", ["Z"]),
]
_WORD_INITIAL = [("kn", ["N"]), ("wr", ["R"]), ("y", ["Y"])]
_VOWEL_DIGRAPHS = [
    ("igh", ["AY"]), ("eau", ["OW"]),
    ("ar", ["AA", "R"]), ("or", ["AO", "R"]), ("er", ["ER"]), ("ir", ["ER"]), ("ur", ["ER"]),
    ("ee", ["IY"]), ("ea", ["IY"]), ("oo", ["UW"]), ("ai", ["EY"]), ("ay", ["EY"]),
    ("oa", ["OW"]), ("ou", ["AW"]), ("ow", ["OW"]), ("oi", ["OY"]), ("oy", ["OY"]),
    ("au", ["AO"]), ("aw", ["AO"]), ("ie", ["IY"]), ("ey", ["IY"]), ("ue", ["UW"]),
    ("ew", ["UW"]),
]
_OPEN = {"a": ["EY"], "e": ["IY"], "i": ["AY"], "o": ["OW"], "u": ["UW"], "y": ["AY"]}
_CLOSED = {"a": ["AE"], "e": ["EH"], "i": ["IH"], "o": ["AA"], "u": ["AH"], "y": ["IH"]}
_SOFTENERS = set("eiy")


@dataclass
class _Chunk:
    text: str
    vowel: bool
    phones: list[str]
    silent: bool = False


def _chunk_word(word: str) -> list[_Chunk]:
    chunks: list[_Chunk] = []
    i = 0
    letters = word.replace("'", "")
    while i < len(letters):
        rest = letters[i:]
        nxt = None
        if i == 0:
            for g, ph in _WORD_INITIAL:
                if rest.startswith(g):
                    nxt = _Chunk(g, False, ph)
                    break
        if nxt is None:
            for g, ph in _VOWEL_DIGRAPHS:
                if rest.startswith(g):
                    # "ar"/"or"/.. before a vowel split into vowel + r onset
                    if g[-1] == "r" and len(rest) > 2 and rest[2] in "aeiou":
                        continue
                    nxt = _Chunk(g, True, list(ph))
                    break
        if nxt is None and rest[0] in "aeiouy":
            nxt = _Chunk(rest[0], True, [])
        if nxt is None:
            if len(rest) > 1 and rest[0] == rest[1] and rest[0] not in "aeiou":
                base = dict(_CONSONANT_CHUNKS).get(rest[0], [])
                nxt = _Chunk(rest[:2], False, list(base))
            else:
                for g, ph in _CONSONANT_CHUNKS:
                    if rest.startswith(g):
                        nxt = _Chunk(g, False, list(ph))
                        break
        if nxt is None:
            nxt = _Chunk(rest[0], False, [])
        if nxt.text == "c" and len(rest) > 1 and rest[1] in _SOFTENERS:
            nxt.phones = ["S"]
        if nxt.text == "g" and len(rest) > 1 and rest[1] in _SOFTENERS:
            nxt.phones = ["JH"]
        chunks.append(nxt)
        i += len(nxt.text)
    return chunks


_BARE_LETTER = {"q": ["K"]}


def letter_to_sound(word: str) -> list[str]:
    """Ordered-rule pronunciation with open/closed syllable vowel choice.

    A single vowel letter is "open" (long) when nothing but an optional
    single consonant and a following vowel come after it, or when it ends
    the word; otherwise it is "closed" (short). The first sounding vowel
    carries primary stress.
    """
    chunks = _chunk_word(word)
    vowel_idx = [i for i, c in enumerate(chunks) if c.vowel]
    # magic e: final single "e" after a consonant is silent if another vowel precedes
    if (len(vowel_idx) > 1 and chunks[-1].text == "e" and len(chunks) > 1
            and not chunks[-2].vowel):
        chunks[-1].silent = True
    for i in vowel_idx:
        c = chunks[i]
        if c.phones or c.silent:
            continue
        after = chunks[i + 1:]
        if c.text == "y" and i == len(chunks) - 1 and len(vowel_idx) > 1:
            c.phones = ["IY"]
            continue
        if not after:
            is_open = True
        elif (len(after) >= 2 and not after[0].vowel and len(after[0].text) == 1
              and after[1].vowel):
            is_open = True
        else:
            is_open = False
        table = _OPEN if is_open else _CLOSED
        c.phones = list(table[c.text])
        if c.text == "u" and is_open:
            c.phones = ["Y", "UW"]

    phones: list[str] = []
    seen_vowels = 0
    sounding = [i for i in vowel_idx if not chunks[i].silent]
    for i, c in enumerate(chunks):
        if c.silent:
            continue
        if c.vowel and i in sounding and seen_vowels > 0:
            # syllable split: V.CV or VC.CV
            prev_cons = []
            j = len(phones) - 1
            while j >= 0 and phones[j].rstrip("012") not in VOWELS:
                prev_cons.append(j)
                j -= 1
            cut = len(phones) - 1 if len(prev_cons) == 1 else (
                len(phones) - len(prev_cons) + 1 if prev_cons else len(phones))
            phones.insert(cut, ".")
        for ph in c.phones:
            if ph in VOWELS:
                ph = ph + ("1" if seen_vowels == 0 else "0")
                seen_vowels += 1
            phones.append(ph)
    if not phones:
        # every chunk was silent (e.g. "gh"): sound the letters one at a time
        phones = [ph for ch in word for ph in (_BARE_LETTER.get(ch) or letter_to_sound(ch))]
    return phones


def g2p_word(word: str, lexicon: Lexicon | None = None,
             keep_syllables: bool = False) -> list[str]:
    """Pronounce one normalized word; lexicon first, rules on a miss."""
    if not word:
        raise ValueError("g2p_word needs a non-empty word")
    pron = lexicon.lookup(word) if lexicon is not None else None
    if pron is None:
        pron = letter_to_sound(word)
    if keep_syllables:
        return [SYLLABLE_BOUNDARY if p == "." else p for p in pron]
    return [p for p in pron if p != "."]


class Phonemizer:
    """Text -> :class:`TokenSequence` using a lexicon and an inventory."""

    def __init__(self, lexicon: Lexicon | None = None, inventory: Inventory | None = None,
                 syllable_markers: bool = True):
        self.lexicon = lexicon if lexicon is not None else Lexicon.default()
        self.inventory = inventory if inventory is not None else Inventory.default()
        self.syllable_markers = syllable_markers
        self.dropped: Counter = Counter()
        self.lexicon_misses: Counter = Counter()

    def symbols(self, text: str) -> list[str]:
        norm = normalize_text(text, self.dropped)
        out: list[str] = []
        for sentence in split_sentences(norm):
            prev_word = False
            for tok in tokenize_words(sentence):
                if tok in PUNCTUATION:
                    out.append(PUNCTUATION[tok])
                    prev_word = False
                    continue
                if prev_word:
                    out.append(WORD_BOUNDARY)
                if tok not in self.lexicon:
                    self.lexicon_misses[tok] += 1
                out.extend(g2p_word(tok, self.lexicon, keep_syllables=self.syllable_markers))
                prev_word = True
        if not any(s not in PUNCTUATION.values() for s in out):
            raise EmptyInputError(f"no pronounceable content in {text!r}")
        out.append(EOS)
        return out

    def __call__(self, text: str) -> TokenSequence:
        syms = self.symbols(text)
        return TokenSequence(self.inventory.encode(syms), text, syms)


_DEFAULT: Phonemizer | None = None


def phonemize_sentence(text: str, phonemizer: Phonemizer | None = None) -> TokenSequence:
    global _DEFAULT
    if phonemizer is None:
        if _DEFAULT is None:
            _DEFAULT = Phonemizer()
        phonemizer = _DEFAULT
    return phonemizer(text)
