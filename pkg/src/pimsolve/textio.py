"""Plain-text dense matrix format.

The first non-comment line holds ``rows cols frac_bits``; the next ``rows``
lines hold ``cols`` integers each.  ``#`` starts a comment.  Vectors are
written as ``n 1`` matrices.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ParseError
from .fixedpoint import Fixed


def _ints(tokens, lineno, path):
    try:
        return [int(t) for t in tokens]
    except ValueError:
        bad = next(t for t in tokens if not t.lstrip("+-").isdigit())
        raise ParseError(f"expected an integer, got {bad!r}", lineno, path) from None


def parse_matrix(text: str, path: str | None = None, bits: int | None = None) -> Fixed:
    lines = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        body = raw.split("#", 1)[0].strip()
        if body:
            lines.append((lineno, body.split()))
    if not lines:
        raise ParseError("empty matrix file", None, path)
    lineno, head = lines[0]
    if len(head) != 3:
        raise ParseError("header must be 'rows cols frac_bits'", lineno, path)
    rows, cols, frac = _ints(head, lineno, path)
    if rows < 1 or cols < 1:
        raise ParseError("rows and cols must be positive", lineno, path)
    body = lines[1:]
    if len(body) != rows:
        where = body[-1][0] if body else lineno
        raise ParseError(f"expected {rows} rows, found {len(body)}", where, path)
    data = []
    for ln, toks in body:
        if len(toks) != cols:
            raise ParseError(f"expected {cols} values, found {len(toks)}", ln, path)
        data.append(_ints(toks, ln, path))
    arr = np.array(data, dtype=object)
    # two's-complement width: -2**(w-1) needs w bits, +2**(w-1) needs w+1
    width = max((int(v) if v >= 0 else -int(v) - 1).bit_length() for v in arr.ravel()) + 1
    if bits is not None:
        if width > bits:
            raise ParseError(f"values do not fit in {bits} bits", None, path)
        width = bits
    if width > 63:
        raise ParseError("values exceed 63 bits", None, path)
    return Fixed(arr.astype(np.int64), width, frac)


def read_matrix(path, bits: int | None = None) -> Fixed:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc.strerror}", None, str(p)) from None
    return parse_matrix(text, str(p), bits)


def format_matrix(m: Fixed, comment: str | None = None) -> str:
    data = np.asarray(m.data)
    if data.ndim == 1:
        data = data.reshape(-1, 1)
    if np.ndim(m.frac_bits):
        raise ValueError("text format needs one frac_bits for the whole matrix")
    out = [f"# {comment}"] if comment else []
    out.append(f"{data.shape[0]} {data.shape[1]} {int(m.frac_bits)}")
    out += [" ".join(str(int(v)) for v in row) for row in data]
    return "\n".join(out) + "\n"


def write_matrix(path, m: Fixed, comment: str | None = None) -> None:
    Path(path).write_text(format_matrix(m, comment))
