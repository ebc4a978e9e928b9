"""Canonical on-disk dataset schema plus loaders, writers, and an import seam.

Layout (all paths relative to the dataset directory, recorded in the manifest):

    manifest.json                      version, provenance, users, file map
    items.csv                          id,kind,difficulty_level,concept_tags,parent_video,meta
    users/<user>/responses.csv         user,item,correct,response_time,meta
    users/<user>/labels.csv            user,lecture,understood
    users/<user>/streams/<segment>.csv t,f00,...,f50

Formatting is bit-exact and diff-friendly: LF newlines, headers exactly as
above, floats as shortest round-trip decimals (timestamps as float64, stream
intensities as float32), concept tags ";"-joined and sorted, ``meta`` as a
sorted-key JSON object.  Booleans are written as 1/0.  Loading never drops a
row silently: structural problems raise DatasetError with file/line context,
recoverable ones (out-of-range intensities, odd frame counts) are clamped or
kept and reported in the returned warning list.
"""

from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .domain import (
    EXPRESSION_CHANNELS,
    NOMINAL_RATE_HZ,
    FacialStream,
    Item,
    ItemBank,
    ResponseRecord,
    SessionRecord,
    UnderstandingLabel,
    validate_session,
)
from .errors import ConfigError, ConversionError, DatasetError

logger = logging.getLogger(__name__)

MANIFEST_VERSION = "1"
ITEM_COLUMNS = ("id", "kind", "difficulty_level", "concept_tags", "parent_video", "meta")
RESPONSE_COLUMNS = ("user", "item", "correct", "response_time", "meta")
LABEL_COLUMNS = ("user", "lecture", "understood")
STREAM_HEADER = ("t",) + tuple(f"f{k:02d}" for k in range(EXPRESSION_CHANNELS))

ROW_COUNT_TOLERANCE = 0.05  # warn when a stream's frame count is off by more


@dataclass(frozen=True)
class LoadResult:
    sessions: tuple
    bank: ItemBank
    warnings: tuple

    def __iter__(self):  # allow sessions, bank, warnings = load_dataset(...)
        return iter((self.sessions, self.bank, self.warnings))


def _fmt64(x):
    return repr(float(x))


def _fmt32(x):
    return np.format_float_positional(np.float32(x), unique=True, trim="0")


def _parse_float(text, where):
    try:
        return float(text)
    except ValueError:
        raise DatasetError(f"{where}: not a number: {text!r}") from None


def _parse_bool(text, where):
    if text in ("1", "0"):
        return text == "1"
    raise DatasetError(f"{where}: expected 1 or 0, got {text!r}")


def _meta_dumps(meta_pairs):
    return json.dumps(dict(meta_pairs), sort_keys=True, separators=(",", ":"))


def _meta_loads(text, where):
    if text == "":
        return ()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        raise DatasetError(f"{where}: malformed meta JSON") from None
    if not isinstance(doc, dict):
        raise DatasetError(f"{where}: meta must be a JSON object")
    return tuple(sorted((str(k), str(v)) for k, v in doc.items()))


# ---------------------------------------------------------------------------
# Column mapping (shared by the canonical loader and the external importer)
# ---------------------------------------------------------------------------

class _TableMap:
    """Resolves canonical column names against a (possibly renamed) header."""

    def __init__(self, table, renames, header, where):
        self.table = table
        self.renames = dict(renames or {})
        self.header = list(header)
        self.where = where
        self.positions = {name: k for k, name in enumerate(self.header)}

    def source_name(self, canonical):
        return self.renames.get(canonical, canonical)

    def has(self, canonical):
        return self.source_name(canonical) in self.positions

    def require(self, canonical_names):
        missing = [c for c in canonical_names if not self.has(c)]
        if missing:
            raise ConversionError(
                f"{self.where}: unmapped mandatory fields for {self.table}: {missing} "
                f"(header is {self.header})"
            )

    def get(self, row, canonical, default=None):
        src = self.source_name(canonical)
        pos = self.positions.get(src)
        if pos is None or pos >= len(row):
            return default
        return row[pos]

    def extras(self, row, canonical_names):
        mapped = {self.source_name(c) for c in canonical_names}
        out = []
        for k, name in enumerate(self.header):
            if name not in mapped and k < len(row) and row[k] != "":
                out.append((name, row[k]))
        return out


def _read_rows(path):
    if not path.exists():
        raise DatasetError(f"missing file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetError(f"{path}: empty file, expected a header row")
    return rows[0], rows[1:]


def _value_map(mapping, field):
    return (mapping.get("values") or {}).get(field, {})


def _map_value(vmap, raw):
    return vmap.get(raw, raw)


# ---------------------------------------------------------------------------
# Table parsers
# ---------------------------------------------------------------------------

def _parse_items(path, mapping):
    header, rows = _read_rows(path)
    tm = _TableMap("items", (mapping.get("columns") or {}).get("items"), header, str(path))
    tm.require(("id", "kind", "difficulty_level"))
    kind_map = _value_map(mapping, "kind")
    level_map = _value_map(mapping, "difficulty_level")
    items = []
    for ln, row in enumerate(rows, start=2):
        where = f"{path}:{ln}"
        if len(row) != len(header):
            raise DatasetError(f"{where}: expected {len(header)} columns, got {len(row)}")
        tags = tm.get(row, "concept_tags", "")
        meta = list(_meta_loads(tm.get(row, "meta", ""), where))
        meta.extend(tm.extras(row, ITEM_COLUMNS))
        try:
            items.append(Item(
                id=tm.get(row, "id"),
                kind=_map_value(kind_map, tm.get(row, "kind")),
                difficulty_level=_map_value(level_map, tm.get(row, "difficulty_level")),
                concept_tags=frozenset(t for t in tags.split(";") if t),
                parent_video=tm.get(row, "parent_video", "") or None,
                meta=tuple(sorted(set(meta))),
            ))
        except Exception as exc:
            raise DatasetError(f"{where}: {exc}") from None
    return items


def _parse_responses(path, mapping, default_user=None):
    header, rows = _read_rows(path)
    tm = _TableMap("responses", (mapping.get("columns") or {}).get("responses"), header, str(path))
    tm.require(("item", "correct") if default_user else ("user", "item", "correct"))
    true_vals = set(map(str, mapping.get("values", {}).get("correct_true", ["1"])))
    false_vals = set(map(str, mapping.get("values", {}).get("correct_false", ["0"])))
    out = []
    for ln, row in enumerate(rows, start=2):
        where = f"{path}:{ln}"
        if len(row) != len(header):
            raise DatasetError(f"{where}: expected {len(header)} columns, got {len(row)}")
        raw_correct = tm.get(row, "correct")
        if raw_correct in true_vals:
            correct = True
        elif raw_correct in false_vals:
            correct = False
        else:
            raise DatasetError(f"{where}: unrecognized correct value {raw_correct!r}")
        rt_text = tm.get(row, "response_time", "") or ""
        rt = _parse_float(rt_text, where) if rt_text else None
        meta = list(_meta_loads(tm.get(row, "meta", ""), where))
        meta.extend(tm.extras(row, RESPONSE_COLUMNS))
        out.append(ResponseRecord(
            user=tm.get(row, "user", default_user) or default_user,
            item=tm.get(row, "item"),
            correct=correct,
            response_time=rt,
            meta=tuple(sorted(set(meta))),
        ))
    return out


def _parse_labels(path, mapping, default_user=None):
    header, rows = _read_rows(path)
    tm = _TableMap("labels", (mapping.get("columns") or {}).get("labels"), header, str(path))
    tm.require(("lecture", "understood") if default_user else ("user", "lecture", "understood"))
    true_vals = set(map(str, mapping.get("values", {}).get("understood_true", ["1"])))
    false_vals = set(map(str, mapping.get("values", {}).get("understood_false", ["0"])))
    out = []
    for ln, row in enumerate(rows, start=2):
        where = f"{path}:{ln}"
        if len(row) != len(header):
            raise DatasetError(f"{where}: expected {len(header)} columns, got {len(row)}")
        raw = tm.get(row, "understood")
        if raw in true_vals:
            understood = True
        elif raw in false_vals:
            understood = False
        else:
            raise DatasetError(f"{where}: unrecognized understood value {raw!r}")
        out.append(UnderstandingLabel(
            user=tm.get(row, "user", default_user) or default_user,
            lecture=tm.get(row, "lecture"),
            understood=understood,
        ))
    return out


def _parse_stream(path, segment_id, mapping, warnings):
    header, rows = _read_rows(path)
    columns = mapping.get("columns") or {}
    time_col = columns.get("stream_time", "t")
    if header[0] != time_col:
        raise DatasetError(f"{path}:1: first column must be {time_col!r}, got {header[0]!r}")
    n_features = len(header) - 1
    if n_features != EXPRESSION_CHANNELS:
        raise DatasetError(
            f"{path}:1: stream has {n_features} feature columns, expected {EXPRESSION_CHANNELS}"
        )
    times = np.empty(len(rows))
    values = np.empty((len(rows), n_features))
    for ln, row in enumerate(rows, start=2):
        where = f"{path}:{ln}"
        if len(row) != len(header):
            raise DatasetError(
                f"{where}: frame row has {len(row) - 1} values, expected {n_features}"
            )
        k = ln - 2
        times[k] = _parse_float(row[0], where)
        for j in range(n_features):
            values[k, j] = _parse_float(row[j + 1], where)

    clamped = int(np.sum((values < 0.0) | (values > 1.0)))
    if clamped:
        warnings.append(f"{path}: clamped {clamped} intensity values into [0, 1]")
        np.clip(values, 0.0, 1.0, out=values)

    if len(rows) >= 2:
        span = times[-1] - times[0]
        expected = NOMINAL_RATE_HZ * span + 1.0
        if expected > 0 and abs(len(rows) - expected) > ROW_COUNT_TOLERANCE * expected:
            warnings.append(
                f"{path}: {len(rows)} frames but ~{expected:.0f} expected "
                f"at {NOMINAL_RATE_HZ:g} Hz over {span:.1f}s"
            )

    try:
        return FacialStream(segment_id, times, values.astype(np.float32))
    except Exception as exc:
        raise DatasetError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# Canonical load / write
# ---------------------------------------------------------------------------

def _identity_mapping():
    return {"layout": "manifest", "manifest": "manifest.json", "columns": {}, "values": {}}


def canonical_mapping():
    """Identity mapping spec: importing canonical data leaves it unchanged."""
    return _identity_mapping()


def _load_manifest_layout(root, mapping):
    manifest_path = root / mapping.get("manifest", "manifest.json")
    if not manifest_path.exists():
        raise DatasetError(f"missing manifest: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{manifest_path}: malformed JSON ({exc})") from None

    warnings = []
    items = _parse_items(root / manifest["items"], mapping)
    bank = ItemBank(items)

    sessions = []
    for user in manifest["users"]:
        entry = manifest["sessions"][user]
        responses = _parse_responses(root / entry["responses"], mapping, default_user=user)
        labels = _parse_labels(root / entry["labels"], mapping, default_user=user)
        streams = {}
        for seg_id in sorted(entry.get("streams", {})):
            rel = entry["streams"][seg_id]
            if rel is None:
                streams[seg_id] = None  # explicitly marked missing
            else:
                streams[seg_id] = _parse_stream(root / rel, seg_id, mapping, warnings)
        sessions.append(SessionRecord(user, streams, tuple(responses), tuple(labels)))

    _validate_loaded(sessions, bank)
    for w in warnings:
        logger.warning("%s", w)
    return LoadResult(tuple(sessions), bank, tuple(warnings))


def _validate_loaded(sessions, bank):
    problems = []
    for session in sessions:
        problems.extend(str(v) for v in validate_session(session, bank))
    if problems:
        raise DatasetError(
            "dataset failed validation:\n  " + "\n  ".join(problems)
        )


def load_dataset(path):
    """Load and fully validate a canonical dataset.

    ``path`` may be the dataset directory or the manifest file itself.
    Returns LoadResult(sessions, bank, warnings); structural violations raise
    DatasetError, recoverable issues are clamped and reported as warnings.
    """
    path = Path(path)
    root = path.parent if path.is_file() else path
    mapping = _identity_mapping()
    if path.is_file():
        mapping["manifest"] = path.name
    return _load_manifest_layout(root, mapping)


def write_dataset(sessions, bank, out_dir, provenance="", force=False):
    """Write a dataset in canonical form; returns the manifest path.

    Refuses to write into an existing non-empty directory unless ``force``.
    """
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigError(f"refusing to overwrite non-empty {out} without force")
    out.mkdir(parents=True, exist_ok=True)

    with open(out / "items.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ITEM_COLUMNS)
        for it in bank:
            w.writerow([
                it.id, it.kind, it.difficulty_level,
                ";".join(sorted(it.concept_tags)),
                it.parent_video or "",
                _meta_dumps(it.meta) if it.meta else "",
            ])

    manifest_sessions = {}
    for session in sorted(sessions, key=lambda s: s.user):
        user_dir = out / "users" / session.user
        (user_dir / "streams").mkdir(parents=True, exist_ok=True)

        with open(user_dir / "responses.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RESPONSE_COLUMNS)
            for r in session.responses:
                w.writerow([
                    r.user, r.item, "1" if r.correct else "0",
                    _fmt64(r.response_time) if r.response_time is not None else "",
                    _meta_dumps(r.meta) if r.meta else "",
                ])

        with open(user_dir / "labels.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LABEL_COLUMNS)
            for lab in session.labels:
                w.writerow([lab.user, lab.lecture, "1" if lab.understood else "0"])

        stream_map = {}
        for seg_id in sorted(session.streams):
            stream = session.streams[seg_id]
            if stream is None:
                stream_map[seg_id] = None
                continue
            rel = Path("users") / session.user / "streams" / f"{seg_id}.csv"
            stream_map[seg_id] = rel.as_posix()
            with open(out / rel, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(STREAM_HEADER)
                for t, row in zip(stream.times, stream.values):
                    w.writerow([_fmt64(t)] + [_fmt32(v) for v in row])

        manifest_sessions[session.user] = {
            "responses": (Path("users") / session.user / "responses.csv").as_posix(),
            "labels": (Path("users") / session.user / "labels.csv").as_posix(),
            "streams": stream_map,
        }

    manifest = {
        "version": MANIFEST_VERSION,
        "provenance": provenance,
        "users": sorted(s.user for s in sessions),
        "items": "items.csv",
        "sessions": manifest_sessions,
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return manifest_path


# ---------------------------------------------------------------------------
# External import
# ---------------------------------------------------------------------------

DEFAULT_STREAM_PATTERN = r"(?P<user>[^/]+)__(?P<segment>[^/]+)\.csv$"


def import_external(source_dir, mapping_spec):
    """Convert an externally laid-out dataset into canonical in-memory form.

    ``mapping_spec`` (dict or path to JSON) describes the layout:

    * ``layout: "manifest"`` - canonical structure with possibly renamed
      columns/values; delegates to the canonical loader with the mapping.
    * ``layout: "flat"`` - single ``items_path``/``responses_path``/
      ``labels_path`` tables carrying a user column, plus an optional
      ``streams_glob`` whose filenames encode user and segment via
      ``stream_pattern`` (a regex with named groups).

    Unmapped columns are preserved as opaque metadata on items/responses.
    Missing mandatory fields raise ConversionError naming them.
    """
    root = Path(source_dir)
    if not isinstance(mapping_spec, dict):
        mapping_path = Path(mapping_spec)
        if not mapping_path.exists():
            raise ConversionError(f"missing mapping spec: {mapping_path}")
        mapping_spec = json.loads(mapping_path.read_text(encoding="utf-8"))

    layout = mapping_spec.get("layout", "manifest")
    if layout == "manifest":
        return _load_manifest_layout(root, mapping_spec)
    if layout != "flat":
        raise ConversionError(f"unknown layout {layout!r}, expected 'manifest' or 'flat'")

    warnings = []
    for field in ("items_path", "responses_path", "labels_path"):
        if field not in mapping_spec:
            raise ConversionError(f"mapping spec is missing mandatory field {field!r}")

    items = _parse_items(root / mapping_spec["items_path"], mapping_spec)
    bank = ItemBank(items)
    responses = _parse_responses(root / mapping_spec["responses_path"], mapping_spec)
    labels = _parse_labels(root / mapping_spec["labels_path"], mapping_spec)

    streams_by_user = {}
    glob_pat = mapping_spec.get("streams_glob")
    if glob_pat:
        pattern = re.compile(mapping_spec.get("stream_pattern", DEFAULT_STREAM_PATTERN))
        for path in sorted(root.glob(glob_pat)):
            m = pattern.search(path.as_posix())
            if not m:
                warnings.append(f"{path}: does not match stream pattern, skipped")
                continue
            user, segment = m.group("user"), m.group("segment")
            streams_by_user.setdefault(user, {})[segment] = _parse_stream(
                path, segment, mapping_spec, warnings
            )

    users = sorted({r.user for r in responses} | {l.user for l in labels} | set(streams_by_user))
    sessions = []
    for user in users:
        sessions.append(SessionRecord(
            user,
            streams_by_user.get(user, {}),
            tuple(r for r in responses if r.user == user),
            tuple(l for l in labels if l.user == user),
        ))

    _validate_loaded(sessions, bank)
    for w in warnings:
        logger.warning("%s", w)
    return LoadResult(tuple(sessions), bank, tuple(warnings))
