"""Rule-based splitting of a model response into its sentence set."""
import re
from typing import List

_LINE_RE = re.compile(r"\r\n|\r|\n")
# '.', '!' or '?' runs, optionally closed by quotes/brackets, then whitespace or end of line.
# A '.' inside "3.5" is never followed by whitespace, so decimals never split.
_BOUNDARY_RE = re.compile(r"[.!?]+[\"'”’)\]]*(?=\s|$)")
_MARKER_RE = re.compile(r"^(?:(?:[-*•‣◦]|\d+[.)])(?:\s+|$))+")
_OPENERS = "([{\"'“‘"
_CLOSERS = "\"'”’)]"

ABBREVIATIONS = frozenset({
    "e.g.", "i.e.", "etc.", "vs.", "approx.", "cf.", "fig.",
    "mr.", "mrs.", "ms.", "dr.", "prof.", "st.", "jr.", "sr.", "no.",
})


def _is_abbreviation(piece: str) -> bool:
    words = piece.split()
    if not words:
        return False
    word = words[-1].lstrip(_OPENERS).rstrip(_CLOSERS).lower()
    return word in ABBREVIATIONS


def _clean(piece: str) -> str:
    return _MARKER_RE.sub("", piece.strip()).strip()


def _split_line(line: str) -> List[str]:
    out = []
    start = 0
    for m in _BOUNDARY_RE.finditer(line):
        piece = line[start:m.end()]
        if _is_abbreviation(piece):
            continue
        out.append(_clean(piece))
        start = m.end()
    out.append(_clean(line[start:]))
    return [s for s in out if s]


def split(text: str) -> List[str]:
    """
    Split into lines, then into sentences within each line.

    List markers ("1.", "2)", "-", "*", bullets) are stripped from the start of every
    sentence; empty pieces are dropped and duplicates are kept.
    """
    if not text:
        return []
    sentences = []
    for line in _LINE_RE.split(text):
        sentences.extend(_split_line(line))
    return sentences
