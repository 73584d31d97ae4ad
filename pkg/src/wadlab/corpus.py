"""Labeled request corpora: synthesis, loading, deterministic splits."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

NORMAL = 0
ATTACK = 1

SPLIT_NAMES = ("train", "test", "dev")
DEFAULT_RATIOS = (0.8, 0.1, 0.1)

ALL_FAMILIES = (
    "sqli",
    "xss",
    "path-traversal",
    "benign-form",
    "benign-json",
    "benign-path",
)
ATTACK_FAMILIES = ("sqli", "xss", "path-traversal")
BENIGN_FAMILIES = ("benign-form", "benign-json", "benign-path")


@dataclass(frozen=True)
class RawSample:
    text: str
    label: int

    def __post_init__(self):
        if not self.text:
            raise DataError("sample text must be non-empty")
        if self.label not in (NORMAL, ATTACK):
            raise DataError(f"label must be 0 or 1, got {self.label!r}")


@dataclass
class Dataset:
    name: str
    train: list[RawSample]
    test: list[RawSample]
    dev: list[RawSample]

    def split(self, name: str) -> list[RawSample]:
        if name not in SPLIT_NAMES:
            raise KeyError(name)
        return getattr(self, name)

    def attack_fraction(self, split: str) -> float:
        samples = self.split(split)
        return sum(1 for s in samples if s.label == ATTACK) / len(samples)

    def stats(self) -> list[dict]:
        """Per-split summary rows: split, total, attack%."""
        return [
            {
                "split": name,
                "total": len(self.split(name)),
                "attack_percent": round(100.0 * self.attack_fraction(name), 2),
            }
            for name in SPLIT_NAMES
        ]


@dataclass(frozen=True)
class GeneratorSpec:
    n_samples: int
    attack_fraction: float
    seed: int
    template_families: tuple = ALL_FAMILIES

    def validate(self):
        if self.n_samples < 10:
            raise ConfigError(f"n_samples must be >= 10, got {self.n_samples}")
        if not 0.0 < self.attack_fraction < 1.0:
            raise ConfigError(
                f"attack_fraction must be in (0, 1), got {self.attack_fraction}"
            )
        unknown = set(self.template_families) - set(ALL_FAMILIES)
        if unknown:
            raise ConfigError(f"unknown template families: {sorted(unknown)}")
        fams = set(self.template_families)
        if not fams & set(ATTACK_FAMILIES) or not fams & set(BENIGN_FAMILIES):
            raise ConfigError(
                "template_families must include at least one attack and one benign family"
            )


# --- synthetic request templates -------------------------------------------
# Attack requests all start with '/', contain at least two slashes and an
# early 't', so every trigger kind (DBS, RFR, HLR) is applicable to them.
# Path heads (site/, cart/, static/) are chosen not to recur later in the
# text so that a delete-beginning-slash edit removes a distinctive window.

# The word pool deliberately overlaps with payload vocabulary (select,
# update, alert, table, ...) so class membership hinges on token
# combinations rather than single giveaway tokens.
_WORDS = [
    "report", "update", "profile", "media", "archive", "browse", "market",
    "detail", "filter", "export", "invite", "notify", "review", "sample",
    "select", "script", "union", "alert", "table", "case", "admin", "files",
]
_NAMES = ["alice", "bob", "carol", "dave", "erin", "frank", "grace", "henry"]
_PAGES = ["index", "view", "main", "home", "list", "show", "page", "info"]
_EXTS = ["html", "php", "asp", "jsp"]
_VERBS = ["view", "edit", "open", "close", "save", "send", "select", "update"]
_COLUMNS = ["name", "email", "phone", "address", "city", "country"]
_TABLES = ["users", "orders", "accounts", "sessions", "members", "clients"]
_FILES = ["etc/passwd", "etc/shadow", "windows/win.ini", "boot.ini", "proc/self/environ"]


def _num(rng, lo=1000, hi=99999):
    return int(rng.integers(lo, hi))


def _gen_sqli(rng):
    kind = int(rng.integers(6))
    a, b = _num(rng), _num(rng)
    ext = rng.choice(_EXTS)
    table = rng.choice(_TABLES)
    if kind == 0:
        cols = ",".join(rng.choice(_COLUMNS, size=2, replace=False))
        return f"/site/list.{ext}?id={a}' union select {cols} from {table}--"
    if kind == 1:
        return (
            f"/site/list.{ext}?q={a},(select (case when ({a}={b}) "
            f"then 1 else {a} * (select {a} from information_schema.character_sets) end))"
        )
    if kind == 2:
        return f"/site/list.{ext}?id={a} or {b}={b}; drop table {table}--"
    if kind == 3:
        return f"/site/list.{ext}?sort={a}' and sleep({int(rng.integers(1, 9))})--"
    if kind == 4:
        return (
            f"/site/list.{ext}?ref={a}'; insert into {table} values "
            f"({b},'{rng.choice(_NAMES)}')--"
        )
    return (
        f"/site/list.{ext}?id={a}' or exists(select {rng.choice(_COLUMNS)} "
        f"from {table} where {rng.choice(_COLUMNS)} like '%{b}%')--"
    )


def _gen_xss(rng):
    kind = int(rng.integers(6))
    n = _num(rng)
    ext = rng.choice(_EXTS)
    if kind == 0:
        return f"/cart/item.{ext}?msg=<script>alert({n})</script>"
    if kind == 1:
        return (
            f"/cart/item.{ext}?name=\"><img src=x "
            f"onerror=alert(document.cookie)&ref={n}"
        )
    if kind == 2:
        return f"/cart/item.{ext}?cb=<svg onload=eval(atob('{n}'))>"
    if kind == 3:
        return f"/cart/item.{ext}?note=<iframe src=javascript:alert({n})></iframe>"
    if kind == 4:
        return f"/cart/item.{ext}?bio=<body onload=document.location='//x{n}.net'>"
    return f"/cart/item.{ext}?q=<a href=\"javascript:void({n})\">click</a>"


def _gen_traversal(rng):
    kind = int(rng.integers(5))
    n = _num(rng)
    ext = rng.choice(_EXTS)
    target = rng.choice(_FILES)
    if kind == 0:
        return f"/static/fetch.{ext}?file=../../../{target}&cache={n}"
    if kind == 1:
        enc = target.replace("/", "%2f")
        return f"/static/fetch.{ext}?doc=..%2f..%2f..%2f{enc}&rev={n}"
    if kind == 2:
        return f"/static/fetch.{ext}?path=....//....//{target}&tag={n}"
    if kind == 3:
        return f"/static/fetch.{ext}?src=php://filter/convert.base64-encode/resource={target}&v={n}"
    return f"/static/fetch.{ext}?inc=%252e%252e%252f%252e%252e%252f{target.replace('/', '%252f')}&s={n}"


def _gen_benign_path(rng):
    kind = int(rng.integers(3))
    w1, w2 = rng.choice(_WORDS, size=2, replace=False)
    page, ext = rng.choice(_PAGES), rng.choice(_EXTS)
    if kind == 0:
        return f"/{w1}/{w2}/{page}.{ext}?lang=en&rev={_num(rng)}"
    if kind == 1:
        return (
            f"/{w1}/{w2}/{page}.{ext}?range=({_num(rng, 10, 99)},{_num(rng, 100, 999)})"
            f"&mode={rng.choice(_VERBS)}"
        )
    return f"/{w1}/{page}.{ext}?from={rng.choice(_TABLES)}&col={rng.choice(_COLUMNS)}&id={_num(rng)}"


def _gen_benign_form(rng):
    kind = int(rng.integers(3))
    name = rng.choice(_NAMES)
    if kind == 0:
        return (
            f"/account/login.{rng.choice(_EXTS)}?username={name}{_num(rng, 10, 999)}"
            f"&session={_num(rng)}&remember=1"
        )
    if kind == 1:
        return (
            f"username={name}{_num(rng, 10, 999)}&password=pw{_num(rng)}"
            f"&submit=Sign+In"
        )
    return (
        f"/account/update.{rng.choice(_EXTS)}?comment=please+{rng.choice(_VERBS)}"
        f"+the+{rng.choice(_WORDS)}+{rng.choice(_TABLES)}&ts={_num(rng)}"
    )


def _gen_benign_json(rng):
    return (
        f'{{"user": "{rng.choice(_NAMES)}", "action": "{rng.choice(_VERBS)}", '
        f'"item": "{rng.choice(_WORDS)}", "id": {_num(rng)}}}'
    )


_GENERATORS = {
    "sqli": _gen_sqli,
    "xss": _gen_xss,
    "path-traversal": _gen_traversal,
    "benign-form": _gen_benign_form,
    "benign-json": _gen_benign_json,
    "benign-path": _gen_benign_path,
}


def generate_synthetic(spec: GeneratorSpec) -> Dataset:
    """Generate a deterministic labeled corpus and split it 80/10/10."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    attack_fams = [f for f in spec.template_families if f in ATTACK_FAMILIES]
    benign_fams = [f for f in spec.template_families if f in BENIGN_FAMILIES]

    n_attack = int(round(spec.n_samples * spec.attack_fraction))
    n_attack = min(max(n_attack, 1), spec.n_samples - 1)

    samples = []
    seen = set()
    for label, count, fams in (
        (ATTACK, n_attack, attack_fams),
        (NORMAL, spec.n_samples - n_attack, benign_fams),
    ):
        made = 0
        while made < count:
            fam = fams[int(rng.integers(len(fams)))]
            text = _GENERATORS[fam](rng)
            if text in seen:
                continue
            seen.add(text)
            samples.append(RawSample(text, label))
            made += 1

    return split_dataset(samples, DEFAULT_RATIOS, spec.seed, name=f"synthetic-{spec.seed}")


def split_dataset(samples, ratios, seed: int, name: str = "dataset") -> Dataset:
    """Deterministic stratified split; duplicates (by text) removed first."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {ratios}")
    if len(ratios) != 3:
        raise ConfigError("expected exactly three ratios (train, test, dev)")
    if not samples:
        raise DataError("cannot split an empty sample list")

    seen = set()
    unique = []
    for s in samples:
        if s.text not in seen:
            seen.add(s.text)
            unique.append(s)

    n = len(unique)
    totals = _largest_remainder(n, ratios)
    if any(t == 0 for t in totals):
        raise ConfigError(
            f"too few samples ({n}) for ratios {ratios}: a split would be empty"
        )

    by_label = {NORMAL: [], ATTACK: []}
    for s in unique:
        by_label[s.label].append(s)

    alloc = {
        label: _largest_remainder(len(group), ratios)
        for label, group in by_label.items()
        if group
    }
    _balance_columns(alloc, totals)

    rng = np.random.default_rng(seed)
    splits = {name_: [] for name_ in SPLIT_NAMES}
    for label in sorted(alloc):
        group = by_label[label]
        order = rng.permutation(len(group))
        shuffled = [group[i] for i in order]
        start = 0
        for split_name, count in zip(SPLIT_NAMES, alloc[label]):
            splits[split_name].extend(shuffled[start : start + count])
            start += count

    # Interleave classes deterministically within each split.
    rng2 = np.random.default_rng(seed + 1)
    for split_name in SPLIT_NAMES:
        order = rng2.permutation(len(splits[split_name]))
        splits[split_name] = [splits[split_name][i] for i in order]

    return Dataset(name=name, **splits)


def _largest_remainder(n: int, ratios) -> list[int]:
    ideal = [n * r for r in ratios]
    base = [math.floor(x) for x in ideal]
    rem = n - sum(base)
    fracs = sorted(
        range(len(ratios)), key=lambda i: (-(ideal[i] - base[i]), i)
    )
    for i in fracs[:rem]:
        base[i] += 1
    return base


def _balance_columns(alloc: dict, totals) -> None:
    """Adjust per-class split counts so column sums match the split totals."""
    for i in range(len(totals)):
        while True:
            col = sum(counts[i] for counts in alloc.values())
            if col <= totals[i]:
                break
            # Move one sample from the most-loaded class in split i to the
            # most underfull split.
            deficits = [
                (totals[j] - sum(c[j] for c in alloc.values()), j)
                for j in range(len(totals))
            ]
            deficit, j = max(deficits)
            donor = max(alloc, key=lambda lab: (alloc[lab][i], -lab))
            alloc[donor][i] -= 1
            alloc[donor][j] += 1


# --- persistence ------------------------------------------------------------


def load_samples(path, fmt: str) -> list[RawSample]:
    """Load one split file; abort with the line number on any malformed record."""
    if fmt not in ("jsonl", "csv"):
        raise ConfigError(f"unknown dataset format {fmt!r}")
    if not os.path.exists(path):
        raise DataError(f"dataset file not found: {path}")
    samples = []
    with open(path, encoding="utf-8", newline="") as fh:
        if fmt == "jsonl":
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DataError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
                samples.append(_record_to_sample(record, path, lineno))
        else:
            reader = csv.DictReader(fh)
            for lineno, record in enumerate(reader, start=2):
                samples.append(_record_to_sample(record, path, lineno))
    if not samples:
        raise DataError(f"{path}: no samples")
    return samples


def _record_to_sample(record, path, lineno) -> RawSample:
    if record is None or "text" not in record or "label" not in record:
        raise DataError(f"{path}:{lineno}: record missing 'text' or 'label'")
    text = record["text"]
    try:
        label = int(record["label"])
    except (TypeError, ValueError):
        raise DataError(f"{path}:{lineno}: label {record['label']!r} is not an integer")
    if label not in (NORMAL, ATTACK):
        raise DataError(f"{path}:{lineno}: label {label} outside {{0,1}}")
    if not isinstance(text, str) or not text:
        raise DataError(f"{path}:{lineno}: text must be a non-empty string")
    return RawSample(text, label)


def load_dataset(path, fmt: str = "jsonl", name: str | None = None) -> Dataset:
    """Load a dataset directory containing train/test/dev split files."""
    if not os.path.isdir(path):
        raise DataError(f"expected a dataset directory: {path}")
    splits = {
        split: load_samples(os.path.join(path, f"{split}.{fmt}"), fmt)
        for split in SPLIT_NAMES
    }
    return Dataset(name=name or os.path.basename(os.path.normpath(path)), **splits)


def save_dataset(dataset: Dataset, out_dir, fmt: str = "jsonl") -> None:
    """Write train/test/dev files plus a stats.json summary."""
    if fmt not in ("jsonl", "csv"):
        raise ConfigError(f"unknown dataset format {fmt!r}")
    os.makedirs(out_dir, exist_ok=True)
    for split in SPLIT_NAMES:
        path = os.path.join(out_dir, f"{split}.{fmt}")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            if fmt == "jsonl":
                for s in dataset.split(split):
                    fh.write(
                        json.dumps({"text": s.text, "label": s.label}, ensure_ascii=False)
                        + "\n"
                    )
            else:
                writer = csv.writer(fh)
                writer.writerow(["text", "label"])
                for s in dataset.split(split):
                    writer.writerow([s.text, s.label])
    with open(os.path.join(out_dir, "stats.json"), "w", encoding="utf-8") as fh:
        json.dump({"name": dataset.name, "splits": dataset.stats()}, fh, indent=2)
