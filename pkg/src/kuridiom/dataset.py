"""Idiom datasets: TSV loading, validation, synthesis and stratified folds.

Dataset files are UTF-8, tab-separated, with the header ``y<TAB>x<TAB>idiom_y``
(class id, sentence, idiom). The non-idiom class has an empty ``idiom_y``.
"""

from __future__ import annotations

import hashlib
import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .textnorm import normalize

HEADER = ("y", "x", "idiom_y")
ROLES = ("train", "validation", "test")


class DatasetError(ValueError):
    """Malformed or inconsistent dataset input."""


@dataclass(frozen=True)
class Example:
    label: int
    text: str
    idiom_surface: str = ""


@dataclass(frozen=True)
class Dataset:
    examples: tuple
    class_table: dict
    original_labels: dict = field(default_factory=dict)

    @property
    def num_classes(self):
        return len(self.class_table)

    def __len__(self):
        return len(self.examples)

    @property
    def labels(self):
        return np.array([e.label for e in self.examples], dtype=np.int64)

    @property
    def texts(self):
        return [e.text for e in self.examples]

    @property
    def non_idiom_labels(self):
        return [c for c, s in self.class_table.items() if s == ""]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for e in self.examples:
            h.update(f"{e.label}\t{e.text}\n".encode("utf-8"))
        return h.hexdigest()


def from_examples(examples) -> Dataset:
    """Build a Dataset, remapping labels densely by first occurrence."""
    remap, table, original = {}, {}, {}
    first_row = {}
    out = []
    for row, e in enumerate(examples):
        if e.label not in remap:
            new = len(remap)
            remap[e.label] = new
            table[new] = e.idiom_surface
            original[new] = e.label
            first_row[e.label] = row
        elif table[remap[e.label]] != e.idiom_surface:
            raise DatasetError(
                f"label {e.label} maps to {table[remap[e.label]]!r} in row {first_row[e.label]} "
                f"and to {e.idiom_surface!r} in row {row}"
            )
        out.append(Example(remap[e.label], e.text, e.idiom_surface))
    return Dataset(tuple(out), table, original)


def load_dataset(path) -> Dataset:
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or tuple(lines[0].rstrip("\r").split("\t")) != HEADER:
        raise DatasetError(f"{path}: line 1: expected header {'<TAB>'.join(HEADER)}")
    raw = []
    first_seen = {}
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.rstrip("\r").split("\t")
        if len(fields) != 3:
            raise DatasetError(f"{path}: line {lineno}: expected 3 tab-separated fields, got {len(fields)}")
        try:
            label = int(fields[0])
        except ValueError:
            raise DatasetError(f"{path}: line {lineno}: class id {fields[0]!r} is not an integer") from None
        surface = fields[2]
        if label in first_seen and first_seen[label][1] != surface:
            prev_line, prev_surface = first_seen[label]
            raise DatasetError(
                f"{path}: label {label} maps to {prev_surface!r} on line {prev_line} "
                f"and to {surface!r} on line {lineno}"
            )
        first_seen.setdefault(label, (lineno, surface))
        raw.append(Example(label, fields[1], surface))
    return from_examples(raw)


def save_dataset(ds: Dataset, path, original_labels=True) -> None:
    rows = ["\t".join(HEADER)]
    for i, e in enumerate(ds.examples):
        for value in (e.text, e.idiom_surface):
            if any(c in value for c in "\t\n\r"):
                raise DatasetError(f"example {i}: tabs and line breaks cannot be stored")
        label = ds.original_labels.get(e.label, e.label) if original_labels else e.label
        rows.append(f"{label}\t{e.text}\t{e.idiom_surface}")
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


@dataclass
class ValidationReport:
    class_counts: dict
    duplicates: list
    empty_texts: list
    small_classes: list
    surface_mismatches: list
    errors: list
    warnings: list

    @property
    def ok(self):
        return not self.errors

    def to_dict(self):
        return {
            "class_counts": {str(k): v for k, v in self.class_counts.items()},
            "duplicates": self.duplicates,
            "empty_texts": self.empty_texts,
            "small_classes": self.small_classes,
            "surface_mismatches": self.surface_mismatches,
            "errors": self.errors,
            "warnings": self.warnings,
        }


def validate(ds: Dataset, min_count: int = 1) -> ValidationReport:
    """Check a dataset. Idioms inflect, so a missing surface form only warns."""
    counts = Counter(e.label for e in ds.examples)
    class_counts = {c: counts.get(c, 0) for c in sorted(ds.class_table)}
    errors, warnings = [], []

    normalized = [normalize(e.text) for e in ds.examples]
    by_text = defaultdict(list)
    for i, t in enumerate(normalized):
        if t:
            by_text[t].append(i)
    duplicates = [rows for rows in by_text.values() if len(rows) > 1]
    for rows in duplicates:
        errors.append(f"duplicate sentence in rows {', '.join(map(str, rows))}")

    empty = [i for i, t in enumerate(normalized) if not t]
    for i in empty:
        errors.append(f"row {i}: text is empty after normalization")

    small = [c for c, n in class_counts.items() if n < min_count]
    for c in small:
        errors.append(f"class {c} has {class_counts[c]} examples, fewer than {min_count}")

    non_idiom = ds.non_idiom_labels
    if len(non_idiom) > 1:
        errors.append(f"several classes have an empty idiom: {non_idiom}")
    elif not non_idiom and ds.class_table:
        warnings.append("no non-idiom class")

    mismatches = []
    for i, e in enumerate(ds.examples):
        if e.idiom_surface and normalize(e.idiom_surface) not in normalized[i]:
            mismatches.append(i)
            warnings.append(f"row {i}: idiom {e.idiom_surface!r} does not occur verbatim")
    return ValidationReport(class_counts, duplicates, empty, small, mismatches, errors, warnings)


# ---------------------------------------------------------------------------
# nested stratified folds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FoldPlan:
    """Outer fold per example plus the inner train/validation split per fold."""

    k: int
    seed: int
    test_fold: tuple
    validation: tuple
    fingerprint: str = ""
    validation_fraction: float = 0.2

    def indices(self, fold: int, role: str) -> np.ndarray:
        if not 0 <= fold < self.k:
            raise IndexError(f"fold {fold} outside 0..{self.k - 1}")
        test = np.asarray(self.test_fold) == fold
        if role == "test":
            return np.flatnonzero(test)
        val = np.zeros(len(self.test_fold), dtype=bool)
        val[list(self.validation[fold])] = True
        if role == "validation":
            return np.flatnonzero(val)
        if role == "train":
            return np.flatnonzero(~test & ~val)
        raise ValueError(f"unknown role {role!r}")

    def role(self, example: int, fold: int) -> str:
        if self.test_fold[example] == fold:
            return "test"
        return "validation" if example in set(self.validation[fold]) else "train"

    def to_json(self) -> str:
        return json.dumps({
            "k": self.k,
            "seed": self.seed,
            "dataset_sha256": self.fingerprint,
            "validation_fraction": self.validation_fraction,
            "test_fold": list(self.test_fold),
            "folds": [
                {role: self.indices(f, role).tolist() for role in ROLES}
                for f in range(self.k)
            ],
        }, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "FoldPlan":
        d = json.loads(text)
        validation = tuple(tuple(f["validation"]) for f in d["folds"])
        return cls(d["k"], d["seed"], tuple(d["test_fold"]), validation,
                   d.get("dataset_sha256", ""), d.get("validation_fraction", 0.2))

    def save(self, path):
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def check_covers(self, ds: Dataset):
        if len(self.test_fold) != len(ds):
            raise DatasetError(f"fold plan covers {len(self.test_fold)} examples, dataset has {len(ds)}")
        if self.fingerprint and self.fingerprint != ds.fingerprint():
            raise DatasetError("fold plan was made for a different dataset")


def stratified_nested_folds(ds: Dataset, k: int = 5, seed: int = 0,
                            validation_fraction: float = 0.2) -> FoldPlan:
    if k < 2:
        raise DatasetError(f"k must be at least 2, got {k}")
    labels = ds.labels
    counts = Counter(labels.tolist())
    for c in sorted(counts):
        if counts[c] < k:
            raise DatasetError(f"class {c} has {counts[c]} examples, fewer than k={k}")
    rng = np.random.default_rng(seed)
    test_fold = np.full(len(ds), -1, dtype=np.int64)
    per_class = {}
    offset = 0
    for c in sorted(counts):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        per_class[c] = idx
        # rotating start keeps overall fold sizes balanced too
        test_fold[idx] = (np.arange(len(idx)) + offset) % k
        offset = (offset + len(idx)) % k
    validation = []
    for f in range(k):
        fold_rng = np.random.default_rng([seed, f])
        chosen = []
        for c in sorted(counts):
            rest = per_class[c][test_fold[per_class[c]] != f]
            rest = rest[fold_rng.permutation(len(rest))]
            n_val = int(np.floor(validation_fraction * len(rest) + 0.5))
            chosen.extend(rest[:n_val].tolist())
        validation.append(tuple(sorted(chosen)))
    return FoldPlan(k, seed, tuple(test_fold.tolist()), tuple(validation),
                    ds.fingerprint(), validation_fraction)


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

SORANI_LETTERS = "ئابپتجچحخدرڕزژسشعغفڤقکگلڵمنوۆهەیێ"
_ENDINGS = ("", "ەکە", "ان", "ێک", "ی", "ەوە")


@dataclass(frozen=True)
class SyntheticSpec:
    num_idioms: int = 101
    contexts_per_idiom: int = 35
    variants_per_context: int = 3
    non_idiom_count: int = 0
    seed: int = 0
    lexicon_size: int = 400

    def __post_init__(self):
        for name in ("num_idioms", "contexts_per_idiom", "variants_per_context", "lexicon_size"):
            if getattr(self, name) < 1:
                raise DatasetError(f"{name} must be at least 1")
        if self.non_idiom_count < 0:
            raise DatasetError("non_idiom_count must be non-negative")


def _pseudo_word(rng, lo=2, hi=6):
    n = int(rng.integers(lo, hi + 1))
    return "".join(SORANI_LETTERS[i] for i in rng.integers(0, len(SORANI_LETTERS), size=n))


def _unique_words(rng, n, taken, lo=2, hi=6):
    words = []
    while len(words) < n:
        w = _pseudo_word(rng, lo, hi)
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


# grammatical frames: declarative, question, conditional, then extra shapes
_FRAMES = (
    lambda s, m, o, t: f"{s} {m} {o} {t}.",
    lambda s, m, o, t: f"ئایا {s} {o} {m} {t}؟",
    lambda s, m, o, t: f"ئەگەر {t} {s} {m}، {o}.",
    lambda s, m, o, t: f"{t}، {o} {s} {m}.",
)


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Templated sentences with one marker phrase per idiom.

    Each idiom gets a unique two-word marker phrase (its surface form). A
    context is a random choice of subject, object and setting words; it is
    rendered in ``variants_per_context`` grammatical frames (declarative,
    question, conditional, ...) around the marker. Non-idiom sentences use the
    same frames with ordinary words in the marker slot, so only the marker
    phrase separates the classes.
    """
    rng = np.random.default_rng(spec.seed)
    taken = {"ئایا", "ئەگەر"}
    lexicon = _unique_words(rng, spec.lexicon_size, taken)
    taken.update(w + e for w in lexicon for e in _ENDINGS)
    markers = [" ".join(_unique_words(rng, 2, taken, 3, 6)) for _ in range(spec.num_idioms)]

    def word():
        w = lexicon[int(rng.integers(len(lexicon)))]
        return w + _ENDINGS[int(rng.integers(len(_ENDINGS)))]

    def phrase(n):
        return " ".join(word() for _ in range(n))

    seen = set()

    def render(frame_idx, context, marker_text):
        s, o, t = context
        extra = frame_idx // len(_FRAMES)
        if extra:
            o = o + " " + " ".join(t.split()[:1] * extra)
        return _FRAMES[frame_idx % len(_FRAMES)](s, marker_text, o, t)

    def context_sentences(marker_text, frames):
        while True:
            ctx = (phrase(int(rng.integers(1, 3))), phrase(int(rng.integers(1, 3))),
                   phrase(int(rng.integers(1, 3))))
            out = [render(f, ctx, marker_text) for f in frames]
            if len(set(out)) == len(out) and not seen.intersection(out):
                seen.update(out)
                return out

    examples = []
    variants = range(spec.variants_per_context)
    for label, marker in enumerate(markers):
        for _ in range(spec.contexts_per_idiom):
            for text in context_sentences(marker, variants):
                examples.append(Example(label, text, marker))
    for i in range(spec.non_idiom_count):
        (text,) = context_sentences(phrase(2), [i % len(_FRAMES)])
        examples.append(Example(spec.num_idioms, text, ""))
    return from_examples(examples)
