"""Utterance/corpus data model, JSON-lines storage, statistics and a synthetic generator."""

import json
from dataclasses import dataclass, field, replace

import numpy as np

from slueco.exceptions import CorpusParseError

USER = "user"
WIZARD = "wizard"
SPEAKERS = (USER, WIZARD)
MACHINE_SEMANTIC = "MachineSemantic"

MARKER_WIDTH = 3
MARKER_VALUE = {USER: 5.0, WIZARD: -5.0}

FORMAT_TAG = "slueco-corpus/1"
DEFAULT_FRAME_DURATION_S = 0.01


@dataclass(eq=False)
class Utterance:
    id: str
    speaker: str
    features: np.ndarray
    transcript: list = field(default_factory=list)
    concepts: list = field(default_factory=list)
    feature_family: str = "spectro"
    frame_duration_s: float = DEFAULT_FRAME_DURATION_S

    def __post_init__(self):
        if self.speaker not in SPEAKERS:
            raise ValueError(f"{self.id}: unknown speaker {self.speaker!r}")
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValueError(f"{self.id}: features must be a non-empty T x F matrix")
        self.transcript = list(self.transcript)
        self.concepts = list(self.concepts)

    @property
    def n_frames(self):
        return self.features.shape[0]

    @property
    def duration_s(self):
        return self.n_frames * self.frame_duration_s

    def __eq__(self, other):
        if not isinstance(other, Utterance):
            return NotImplemented
        return (
            self.id == other.id
            and self.speaker == other.speaker
            and self.transcript == other.transcript
            and self.concepts == other.concepts
            and self.feature_family == other.feature_family
            and self.frame_duration_s == other.frame_duration_s
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
        )

    def to_record(self):
        return {
            "id": self.id,
            "speaker": self.speaker,
            "frame_duration_s": self.frame_duration_s,
            "features": self.features.tolist(),
            "transcript": self.transcript,
            "concepts": self.concepts,
            "feature_family": self.feature_family,
        }


@dataclass(eq=False)
class CorpusSplit:
    name: str
    utterances: list
    label_vocab: list = field(default_factory=list)
    word_vocab: list = field(default_factory=list)

    def __post_init__(self):
        if not self.label_vocab:
            self.label_vocab = sorted({c for u in self.utterances for c in u.concepts})
        if not self.word_vocab:
            self.word_vocab = sorted({w for u in self.utterances for w in u.transcript})

    def __len__(self):
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)

    def __eq__(self, other):
        if not isinstance(other, CorpusSplit):
            return NotImplemented
        return (
            self.name == other.name
            and self.label_vocab == other.label_vocab
            and self.word_vocab == other.word_vocab
            and self.utterances == other.utterances
        )

    def user_turns(self):
        return [u for u in self.utterances if u.speaker == USER]

    @property
    def feature_families(self):
        return sorted({u.feature_family for u in self.utterances})


def validate_utterance(utt):
    """Raise ``ValueError`` if ``utt`` breaks the user/wizard concept conventions."""
    if utt.speaker == USER and not utt.concepts:
        raise ValueError(f"{utt.id}: user turns need at least one concept")
    if utt.speaker == WIZARD and utt.concepts != [MACHINE_SEMANTIC]:
        raise ValueError(f"{utt.id}: wizard turns carry exactly [{MACHINE_SEMANTIC}]")


def inject_speaker_marker(features, speaker):
    """Wrap ``features`` in three constant frames on each side: +5.0 for users, -5.0 for wizards."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] < 1:
        raise ValueError(f"features must be T x F with F >= 1, got {features.shape}")
    marker = np.full((MARKER_WIDTH, features.shape[1]), MARKER_VALUE[speaker])
    return np.concatenate([marker, features, marker], axis=0)


def label_wizard_turns(split):
    """Return a copy of ``split`` whose wizard turns are labelled ``[MachineSemantic]``."""
    utts = [
        replace(u, concepts=[MACHINE_SEMANTIC]) if u.speaker == WIZARD else u
        for u in split.utterances
    ]
    labels = list(split.label_vocab)
    if any(u.speaker == WIZARD for u in utts) and MACHINE_SEMANTIC not in labels:
        labels = sorted(labels + [MACHINE_SEMANTIC])
    return CorpusSplit(split.name, utts, labels, list(split.word_vocab))


# ----------------------------------------------------------------- statistics

@dataclass
class CorpusStats:
    total_audio_h: float = 0.0
    user_audio_h: float = 0.0
    n_sentences: int = 0
    n_user_sentences: int = 0
    n_word_tokens: int = 0
    n_user_word_tokens: int = 0
    n_label_tokens: int = 0
    n_user_label_tokens: int = 0
    word_dict_size: int = 0
    label_dict_size: int = 0
    word_oov_pct: float = 0.0
    label_oov_pct: float = 0.0


def _oov_pct(tokens, vocab):
    if not tokens:
        return 0.0
    vocab = set(vocab)
    return 100.0 * sum(1 for t in tokens if t not in vocab) / len(tokens)


def compute_stats(split, train_vocabularies=None):
    """Table-style statistics of ``split``.

    ``train_vocabularies`` is a ``(word_vocab, label_vocab)`` pair; it
    defaults to the split's own token types, giving 0 OOV.
    """
    utts = split.utterances
    users = [u for u in utts if u.speaker == USER]
    words = [w for u in utts for w in u.transcript]
    labels = [c for u in utts for c in u.concepts]
    if train_vocabularies is None:
        train_words, train_labels = set(words), set(labels)
    else:
        train_words, train_labels = train_vocabularies
    return CorpusStats(
        total_audio_h=sum(u.duration_s for u in utts) / 3600.0,
        user_audio_h=sum(u.duration_s for u in users) / 3600.0,
        n_sentences=len(utts),
        n_user_sentences=len(users),
        n_word_tokens=len(words),
        n_user_word_tokens=sum(len(u.transcript) for u in users),
        n_label_tokens=len(labels),
        n_user_label_tokens=sum(len(u.concepts) for u in users),
        word_dict_size=len(set(words)),
        label_dict_size=len(set(labels)),
        word_oov_pct=_oov_pct(words, train_words),
        label_oov_pct=_oov_pct(labels, train_labels),
    )


def format_stats(named_stats):
    """Render ``{split_name: CorpusStats}`` as a fixed-layout text block."""
    names = list(named_stats)
    rows = [
        ("Total audio (h)", lambda s: f"{s.total_audio_h:.4f}"),
        ("  of which user (h)", lambda s: f"{s.user_audio_h:.4f}"),
        ("# sentences", lambda s: str(s.n_sentences)),
        ("  of which user", lambda s: str(s.n_user_sentences)),
        ("# word tokens", lambda s: str(s.n_word_tokens)),
        ("  of which user", lambda s: str(s.n_user_word_tokens)),
        ("# label tokens", lambda s: str(s.n_label_tokens)),
        ("  of which user", lambda s: str(s.n_user_label_tokens)),
        ("word dictionary", lambda s: str(s.word_dict_size)),
        ("label dictionary", lambda s: str(s.label_dict_size)),
        ("word OOV%", lambda s: f"{s.word_oov_pct:.2f}"),
        ("label OOV%", lambda s: f"{s.label_oov_pct:.2f}"),
    ]
    table = [[""] + names] + [[label] + [fn(named_stats[n]) for n in names] for label, fn in rows]
    w0 = max(len(r[0]) for r in table)
    widths = [max(len(r[i]) for r in table) for i in range(1, len(names) + 1)]
    lines = []
    for r in table:
        lines.append(r[0].ljust(w0) + "  " + "  ".join(c.rjust(w) for c, w in zip(r[1:], widths)))
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------- I/O

def save_corpus(split, path):
    """Write ``split`` as JSON lines: one header record, then one record per utterance."""
    header = {
        "format": FORMAT_TAG,
        "split": split.name,
        "label_vocab": list(split.label_vocab),
        "word_vocab": list(split.word_vocab),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, ensure_ascii=False) + "\n")
        for u in split.utterances:
            fh.write(json.dumps(u.to_record(), ensure_ascii=False) + "\n")


_FIELDS = ("id", "speaker", "frame_duration_s", "features", "transcript", "concepts", "feature_family")


def _parse_utterance(rec, path, lineno):
    if not isinstance(rec, dict):
        raise CorpusParseError(path, lineno, "record is not an object")
    missing = [k for k in _FIELDS if k not in rec]
    if missing:
        raise CorpusParseError(path, lineno, f"missing fields {missing}")
    if rec["speaker"] not in SPEAKERS:
        raise CorpusParseError(path, lineno, f"unknown speaker {rec['speaker']!r}")
    feats = rec["features"]
    if (not isinstance(feats, list) or not feats
            or not all(isinstance(row, list) and len(row) == len(feats[0]) for row in feats)
            or not feats[0]):
        raise CorpusParseError(path, lineno, "features must be a non-empty rectangular array")
    try:
        return Utterance(
            id=str(rec["id"]),
            speaker=rec["speaker"],
            features=np.array(feats, dtype=np.float64),
            transcript=[str(w) for w in rec["transcript"]],
            concepts=[str(c) for c in rec["concepts"]],
            feature_family=str(rec["feature_family"]),
            frame_duration_s=float(rec["frame_duration_s"]),
        )
    except (TypeError, ValueError) as exc:
        raise CorpusParseError(path, lineno, str(exc)) from None


def load_corpus(path):
    path = str(path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.readlines()
    if not lines:
        raise CorpusParseError(path, 1, "empty file (no header)")
    records = []
    for lineno, line in enumerate(lines, start=1):
        if not line.endswith("\n"):
            raise CorpusParseError(path, lineno, "truncated record (no line terminator)")
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise CorpusParseError(path, lineno, f"invalid JSON: {exc.msg}") from None
    header = records[0]
    if not isinstance(header, dict) or header.get("format") != FORMAT_TAG:
        raise CorpusParseError(path, 1, f"missing {FORMAT_TAG!r} header")
    utts = [_parse_utterance(rec, path, i) for i, rec in enumerate(records[1:], start=2)]
    return CorpusSplit(
        name=header.get("split", ""),
        utterances=utts,
        label_vocab=list(header.get("label_vocab", [])),
        word_vocab=list(header.get("word_vocab", [])),
    )


# ----------------------------------------------------------------- synthetic

@dataclass(frozen=True)
class SyntheticDesign:
    """Prototype frames behind a synthetic corpus.

    Each concept owns ``words_per_concept`` words; each word is rendered as a
    run of identical Gaussian-bump frames (plus noise), separated by
    near-silent frames.
    """

    concepts: tuple
    words: tuple
    word_concept: tuple
    centroids: np.ndarray

    def silence(self):
        return np.zeros(self.centroids.shape[1])


def make_design(n_concepts, dim, words_per_concept=2):
    n_words = n_concepts * words_per_concept
    concepts = tuple(f"C{c:02d}" for c in range(n_concepts))
    words = tuple(f"w{c:02d}{chr(ord('a') + k)}" for c in range(n_concepts)
                  for k in range(words_per_concept))
    word_concept = tuple(concepts[j // words_per_concept] for j in range(n_words))
    axis = np.arange(dim)
    width = max(dim / (2.0 * n_words), 0.5)
    centroids = np.empty((n_words, dim))
    for j in range(n_words):
        center = (j + 0.5) * dim / n_words
        centroids[j] = np.exp(-0.5 * ((axis - center) / width) ** 2)
        # sign pattern keeps words distinct when bumps overlap heavily at small dim
        centroids[j] *= 1.0 if j % 2 == 0 else -1.0
    return SyntheticDesign(concepts, words, word_concept, centroids)


def generate_synthetic(seed, n_utts, n_concepts, dim, noise, wizard_fraction=0.2,
                       max_concepts=3, frame_duration_s=DEFAULT_FRAME_DURATION_S,
                       feature_family="spectro"):
    """Seeded synthetic SLU corpus split 70/15/15 into train/dev/test.

    Returns ``{"train": CorpusSplit, "dev": ..., "test": ...}``. Wizard turns
    are already labelled ``[MachineSemantic]``.
    """
    if n_concepts < 2:
        raise ValueError("need at least 2 concepts")
    if n_utts < 10:
        raise ValueError("need at least 10 utterances")
    if not 0.0 <= wizard_fraction < 1.0:
        raise ValueError("wizard_fraction must be in [0, 1)")
    rng = np.random.default_rng(seed)
    design = make_design(n_concepts, dim)
    n_words_per = len(design.words) // n_concepts

    def silence_frames(k):
        return noise * rng.standard_normal((k, dim))

    utts = []
    for idx in range(n_utts):
        speaker = WIZARD if rng.random() < wizard_fraction else USER
        n_segments = int(rng.integers(1, max_concepts + 1))
        concept_ids = rng.integers(0, n_concepts, size=n_segments)
        blocks = [silence_frames(int(rng.integers(1, 3)))]
        words, concepts = [], []
        for c in concept_ids:
            j = int(c) * n_words_per + int(rng.integers(0, n_words_per))
            run = int(rng.integers(3, 6))
            blocks.append(design.centroids[j] + noise * rng.standard_normal((run, dim)))
            blocks.append(silence_frames(int(rng.integers(1, 3))))
            words.append(design.words[j])
            concepts.append(design.concepts[int(c)])
        utts.append(Utterance(
            id=f"syn{seed}-{idx:05d}",
            speaker=speaker,
            features=np.concatenate(blocks, axis=0),
            transcript=words,
            concepts=concepts if speaker == USER else [],
            feature_family=feature_family,
            frame_duration_s=frame_duration_s,
        ))

    n_train = int(round(0.7 * n_utts))
    n_dev = int(round(0.15 * n_utts))
    parts = {
        "train": utts[:n_train],
        "dev": utts[n_train:n_train + n_dev],
        "test": utts[n_train + n_dev:],
    }
    label_vocab = sorted(design.concepts + ((MACHINE_SEMANTIC,) if wizard_fraction > 0 else ()))
    word_vocab = sorted(design.words)
    return {
        name: label_wizard_turns(CorpusSplit(name, part, list(label_vocab), list(word_vocab)))
        for name, part in parts.items()
    }

