"""Small shared utilities: stable seeding and deterministic file output."""

import csv
import hashlib
import io
import json


def stable_digest(*parts) -> str:
    """Hex digest of the string forms of ``parts``, stable across runs."""
    text = "\x1f".join(str(p) for p in parts)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def subseed(*parts) -> list[int]:
    """Derive a reproducible entropy list for numpy's default_rng.

    Python's built-in hash() is salted per process, so sub-stream seeds for
    named components go through sha256 instead.
    """
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


def fmt_float(value) -> str:
    """Shortest round-trip decimal form; keeps CSV output byte-stable."""
    return repr(float(value))


def write_csv(path, header, rows):
    """Write rows with a fixed header, LF newlines, UTF-8."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def csv_bytes(header, rows) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue().encode("utf-8")


def write_json(path, obj):
    """Canonical JSON: sorted keys, fixed separators, trailing newline."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
