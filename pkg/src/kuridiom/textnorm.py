"""Normalisation of Arabic-script Sorani Kurdish text.

The pipeline runs in a fixed order so that it is idempotent:

1. Arabic presentation forms are folded to their base letters (NFKC, but only
   for characters in the presentation-form blocks, and only when the result
   contains no whitespace).
2. Tatweel, harakat, zero-width characters other than ZWNJ and non-whitespace
   control characters are removed.
3. Characters are unified through the mapping table (see
   ``data/unification.tsv``).
4. Latin letters are lower-cased. Arabic script has no case and is untouched.
5. Whitespace runs collapse to one space; the ends are stripped.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

ZWNJ = "\u200c"
TATWEEL = "\u0640"

_HARAKAT = re.compile("[\u064B-\u065F\u0670\u06D6-\u06DC\u06DF-\u06E4\u06E7\u06E8\u06EA-\u06ED]")
_CODEPOINT = re.compile(r"^U\+([0-9A-Fa-f]{4,6})$")


@dataclass(frozen=True)
class NormalizationConfig:
    unify_chars: bool = True
    collapse_whitespace: bool = True
    strip_controls: bool = True
    casefold_latin: bool = True


@dataclass(frozen=True)
class UnificationTable:
    always: dict
    word_final: dict
    version: str = ""

    def translate(self, text: str) -> str:
        if not self.always and not self.word_final:
            return text
        out = []
        last = len(text) - 1
        for pos, ch in enumerate(text):
            if ch in self.word_final and (pos == last or not _is_letter(text[pos + 1])):
                out.append(self.word_final[ch])
            else:
                out.append(self.always.get(ch, ch))
        return "".join(out)


def _is_letter(ch: str) -> bool:
    return unicodedata.category(ch).startswith("L")


def _parse_codepoint(field: str, lineno: int) -> str:
    m = _CODEPOINT.match(field.strip())
    if not m:
        raise ValueError(f"unification table line {lineno}: bad code point {field!r}")
    return chr(int(m.group(1), 16))


def parse_table(text: str) -> UnificationTable:
    always, final = {}, {}
    version = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = re.search(r"version\s+(\S+)", line)
            if m and not version:
                version = m.group(1)
            continue
        fields = line.split("\t")
        if len(fields) not in (2, 3) or (len(fields) == 3 and fields[2].strip() != "final"):
            raise ValueError(f"unification table line {lineno}: expected SRC<TAB>DST[<TAB>final]")
        src = _parse_codepoint(fields[0], lineno)
        dst = _parse_codepoint(fields[1], lineno)
        target = final if len(fields) == 3 else always
        if src in always or src in final:
            raise ValueError(f"unification table line {lineno}: duplicate source {fields[0]}")
        target[src] = dst
    sources = set(always) | set(final)
    for dst in list(always.values()) + list(final.values()):
        if dst in sources:
            raise ValueError(f"unification table: destination U+{ord(dst):04X} is also a source")
    return UnificationTable(always, final, version)


@lru_cache(maxsize=8)
def load_table(path: str | None = None) -> UnificationTable:
    """Read a unification table; the bundled one when ``path`` is None."""
    if path is None:
        text = resources.files("kuridiom").joinpath("data/unification.tsv").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return parse_table(text)


def _is_presentation_form(cp: int) -> bool:
    return 0xFB50 <= cp <= 0xFDFF or 0xFE70 <= cp <= 0xFEFE


def _fold_presentation(text: str) -> str:
    out = []
    for ch in text:
        if _is_presentation_form(ord(ch)):
            folded = unicodedata.normalize("NFKC", ch)
            if not any(c.isspace() for c in folded):
                out.append(folded)
                continue
        out.append(ch)
    return "".join(out)


def _strip_invisible(text: str) -> str:
    out = []
    for ch in text:
        if ch == ZWNJ:
            out.append(ch)
            continue
        cat = unicodedata.category(ch)
        if cat == "Cf" or (cat == "Cc" and not ch.isspace()):
            continue
        out.append(ch)
    return "".join(out)


def _lower_latin(text: str) -> str:
    out = []
    for ch in text:
        if ch.isascii():
            out.append(ch.lower())
        elif ch.isalpha() and unicodedata.name(ch, "").startswith("LATIN "):
            out.append(ch.lower())
        else:
            out.append(ch)
    return "".join(out)


def normalize(text: str, cfg: NormalizationConfig | None = None,
              table: UnificationTable | None = None) -> str:
    cfg = cfg or NormalizationConfig()
    if cfg.unify_chars:
        table = table or load_table()
        text = _fold_presentation(text)
        text = _HARAKAT.sub("", text.replace(TATWEEL, ""))
    if cfg.strip_controls:
        text = _strip_invisible(text)
    if cfg.unify_chars:
        text = table.translate(text)
    if cfg.casefold_latin:
        text = _lower_latin(text)
    if cfg.collapse_whitespace:
        text = " ".join(text.split())
    return text
