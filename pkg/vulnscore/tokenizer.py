"""Subword tokenization into fixed-length sequences.

Vocabularies are built from the training descriptions: frequent whole
words, every seen character as a fallback piece, and frequent word
prefixes/suffixes. Segmentation is greedy longest-match-first with "##"
continuation pieces, as in WordPiece.
"""

import logging
import unicodedata
from collections import Counter
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from .errors import DataError, EmptyCorpus, SpanOutOfRange
from .storage import atomic_write_text, read_text
from .utils import text_digest


logger = logging.getLogger(__name__)

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, MASK)
CONTINUATION = "##"
DEFAULT_SEQ_LEN = 128
MIN_VOCAB_SIZE = 300
MAX_CHARS_PER_WORD = 100
# Share of the free vocabulary budget offered to subword pieces
SUBWORD_SHARE = 0.2

Span = Tuple[int, int]


def _is_punctuation(char: str) -> bool:
    cp = ord(char)
    # ASCII symbols such as "$", "^" and "`" count as punctuation too
    if 33 <= cp <= 47 or 58 <= cp <= 64 or 91 <= cp <= 96 or 123 <= cp <= 126:
        return True
    return unicodedata.category(char).startswith("P")


def basic_tokenize(text: str) -> List[Tuple[str, Span]]:
    """Lowercase and split on whitespace and punctuation.

    Returns (word, (start, end)) pairs with offsets into the original text.
    Every punctuation mark becomes a word of its own.
    """
    words: List[Tuple[str, Span]] = []
    current: List[str] = []
    start = 0

    def flush(end: int) -> None:
        if current:
            words.append(("".join(current), (start, end)))
            current.clear()

    for pos, char in enumerate(text):
        if char.isspace() or unicodedata.category(char) in ("Cc", "Cf"):
            flush(pos)
        elif _is_punctuation(char):
            flush(pos)
            words.append((char.lower(), (pos, pos + 1)))
        else:
            if not current:
                start = pos
            # Keep one lowered char per source char so offsets stay aligned
            current.append(char.lower()[:1] or char)
    flush(len(text))
    return words


class Vocabulary:
    """Ordered token list; the line number in the vocab file is the id."""

    def __init__(self, tokens: Sequence[str]):
        self.tokens = list(tokens)
        self.id_of: Dict[str, int] = {}
        for idx, token in enumerate(self.tokens):
            if token in self.id_of:
                raise DataError(f"Duplicate vocabulary entry '{token}'")
            if not token or any(c in token for c in "\r\n"):
                raise DataError(f"Invalid vocabulary entry at line {idx + 1}")
            self.id_of[token] = idx
        for special in SPECIAL_TOKENS:
            if special not in self.id_of:
                raise DataError(f"Vocabulary lacks special token {special}")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.id_of

    @property
    def specials(self) -> Dict[str, int]:
        return {token: self.id_of[token] for token in SPECIAL_TOKENS}

    @property
    def pad_id(self) -> int:
        return self.id_of[PAD]

    @property
    def unk_id(self) -> int:
        return self.id_of[UNK]

    @property
    def cls_id(self) -> int:
        return self.id_of[CLS]

    @property
    def sep_id(self) -> int:
        return self.id_of[SEP]

    def dumps(self) -> str:
        return "".join(token + "\n" for token in self.tokens)

    @property
    def digest(self) -> str:
        return text_digest(self.dumps())

    def save(self, path: Union[str, Path]) -> None:
        atomic_write_text(Path(path), self.dumps())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Vocabulary":
        text = read_text(Path(path))
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)


def _affix_counts(words: Iterable[str], word_counts: Counter) -> Counter:
    counts: Counter = Counter()
    for word in words:
        n = word_counts[word]
        for cut in range(2, len(word)):
            counts[word[:cut]] += n
            counts[CONTINUATION + word[len(word) - cut:]] += n
    return counts


def build_vocab(descriptions: Iterable[str], max_size: int = 8000) -> Vocabulary:
    """Build a vocabulary from a corpus of descriptions.

    Specials and every seen character (as head and as "##" piece) are always
    included; the remaining budget goes to whole words by frequency, with a
    share reserved for frequent prefixes/suffixes of the words left out.
    """
    if max_size < MIN_VOCAB_SIZE:
        raise DataError(f"max_size must be at least {MIN_VOCAB_SIZE}, got {max_size}")

    word_counts: Counter = Counter()
    for text in descriptions:
        word_counts.update(word for word, _ in basic_tokenize(text))
    if not word_counts:
        raise EmptyCorpus("description corpus")

    chars = sorted({char for word in word_counts for char in word})
    tokens = list(SPECIAL_TOKENS) + chars + [CONTINUATION + c for c in chars]
    if len(tokens) > max_size:
        raise DataError(
            f"{len(chars)} distinct characters need {len(tokens)} entries, more than max_size={max_size}"
        )
    taken = set(tokens)

    def ranked(counter: Counter) -> List[str]:
        return [t for t, _ in sorted(counter.items(), key=lambda kv: (-kv[1], kv[0])) if t not in taken]

    words = ranked(Counter({w: n for w, n in word_counts.items() if len(w) > 1}))
    budget = max_size - len(tokens)
    piece_budget = int(budget * SUBWORD_SHARE)
    word_budget = budget - piece_budget

    chosen_words = words[:word_budget]
    taken.update(chosen_words)

    # Prefixes and suffixes of the words that will have to be segmented come
    # first; pieces of in-vocabulary words only fill what is left
    left_out = _affix_counts(words[word_budget:], word_counts)
    pieces = ranked(left_out)[:piece_budget]
    taken.update(pieces)
    tokens += chosen_words + pieces

    spare = max_size - len(tokens)
    if spare > 0:
        extra = [w for w in words[word_budget:] if w not in taken][:spare]
        taken.update(extra)
        tokens += extra
    spare = max_size - len(tokens)
    if spare > 0:
        fill = ranked(left_out) + ranked(_affix_counts(chosen_words, word_counts))
        extra = list(dict.fromkeys(p for p in fill if p not in taken))[:spare]
        tokens += extra

    vocab = Vocabulary(tokens)
    logger.info(
        "built vocabulary of %d tokens (%d words, %d characters)",
        len(vocab), len(word_counts), len(chars),
    )
    return vocab


class TokenSequence:
    """A padded, fixed-length token sequence with source alignment."""

    def __init__(
        self,
        ids: List[int],
        mask: List[int],
        surfaces: List[str],
        char_spans: List[Optional[Span]],
        text: str = "",
    ):
        self.ids = ids
        self.mask = mask
        self.surfaces = surfaces
        self.char_spans = char_spans
        self.text = text

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def num_real(self) -> int:
        """Number of positions with mask 1, [CLS] and [SEP] included."""
        return sum(self.mask)

    @property
    def content_positions(self) -> List[int]:
        """Positions of real tokens, specials excluded."""
        return list(range(1, self.num_real - 1))

    def word_bounds(self, position: int) -> Tuple[int, int]:
        """Half-open span of the whole word the token at position belongs to."""
        start = position
        while start > 1 and self.surfaces[start].startswith(CONTINUATION):
            start -= 1
        end = position + 1
        while end < self.num_real - 1 and self.surfaces[end].startswith(CONTINUATION):
            end += 1
        return start, end


def wordpiece(word: str, vocab: Vocabulary) -> List[Tuple[str, Span]]:
    """Greedy longest-match-first segmentation of one lowercased word.

    Returns (piece, (start, end)) with offsets relative to the word; a word
    that cannot be covered becomes a single [UNK].
    """
    if len(word) > MAX_CHARS_PER_WORD:
        return [(UNK, (0, len(word)))]
    pieces: List[Tuple[str, Span]] = []
    start = 0
    while start < len(word):
        end = len(word)
        found = None
        while start < end:
            candidate = word[start:end]
            if start > 0:
                candidate = CONTINUATION + candidate
            if candidate in vocab:
                found = candidate
                break
            end -= 1
        if found is None:
            return [(UNK, (0, len(word)))]
        pieces.append((found, (start, end)))
        start = end
    return pieces


def tokenize(text: str, vocab: Vocabulary, seq_len: int = DEFAULT_SEQ_LEN) -> TokenSequence:
    """Tokenize text into exactly seq_len ids: [CLS] pieces [SEP] [PAD]...

    The head of the text is kept when it does not fit.
    """
    if seq_len < 2:
        raise ValueError("seq_len must leave room for [CLS] and [SEP]")
    surfaces = [CLS]
    spans: List[Optional[Span]] = [None]
    limit = seq_len - 2
    for word, (word_start, _) in basic_tokenize(text):
        for piece, (a, b) in wordpiece(word, vocab):
            if len(surfaces) - 1 >= limit:
                break
            surfaces.append(piece)
            spans.append((word_start + a, word_start + b))
        if len(surfaces) - 1 >= limit:
            break
    surfaces.append(SEP)
    spans.append(None)

    n_real = len(surfaces)
    ids = [vocab.id_of.get(s, vocab.unk_id) for s in surfaces]
    padding = seq_len - n_real
    ids += [vocab.pad_id] * padding
    surfaces += [PAD] * padding
    spans += [None] * padding
    mask = [1] * n_real + [0] * padding
    return TokenSequence(ids, mask, surfaces, spans, text)


def detokenize_span(seq: TokenSequence, start: int, end: int) -> str:
    """Render the real tokens seq[start:end] as text, merging "##" pieces.

    Tokens whose source offsets touch are glued together; others are
    separated by one space.
    """
    if not 1 <= start < end <= seq.num_real - 1:
        raise SpanOutOfRange(start, end, seq.num_real - 1)
    out: List[str] = []
    prev_end: Optional[int] = None
    for pos in range(start, end):
        surface = seq.surfaces[pos]
        span = seq.char_spans[pos]
        piece = surface[len(CONTINUATION):] if surface.startswith(CONTINUATION) else surface
        if surface == UNK and span is not None and seq.text:
            piece = seq.text[span[0]:span[1]].lower()
        if out and not (span is not None and prev_end is not None and span[0] == prev_end):
            out.append(" ")
        out.append(piece)
        prev_end = span[1] if span is not None else None
    return "".join(out)
