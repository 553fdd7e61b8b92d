"""Search-log domain types, JSONL ingestion and training-pair construction.

A log file holds one search per line. Feature dimensions are declared in a
``schemas.json`` manifest stored next to the log file; when no manifest is
present the dimensions of the first record are taken as the schema.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

MANIFEST_NAME = "schemas.json"


class LogFormatError(ValueError):
    """A search-log line violates the format or a domain invariant."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class FeatureSchema:
    schema_id: str
    dim: int


@dataclass(frozen=True)
class SchemaSet:
    query: FeatureSchema
    user: FeatureSchema
    listing: FeatureSchema

    def ids(self) -> dict[str, str]:
        return {"query": self.query.schema_id, "user": self.user.schema_id, "listing": self.listing.schema_id}

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "schemas": {
                role: {"id": s.schema_id, "dim": s.dim}
                for role, s in (("query", self.query), ("user", self.user), ("listing", self.listing))
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SchemaSet":
        try:
            s = d["schemas"]
            return cls(*(FeatureSchema(str(s[r]["id"]), int(s[r]["dim"])) for r in ("query", "user", "listing")))
        except (KeyError, TypeError, ValueError) as exc:
            raise LogFormatError(f"malformed schema manifest: {exc!r}") from None


@dataclass(frozen=True)
class FeatureVector:
    values: tuple[float, ...]
    schema_id: str

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError(f"non-finite feature value in schema {self.schema_id!r}")

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class QueryContext:
    query_features: FeatureVector
    user_features: FeatureVector


@dataclass(frozen=True)
class ListingImpression:
    listing_id: str
    position: int
    features: FeatureVector
    booked: bool
    price: float
    location: tuple[float, float]

    def __post_init__(self):
        if self.position < 0:
            raise ValueError(f"negative position for listing {self.listing_id!r}")
        if not self.price > 0:
            raise ValueError(f"non-positive price for listing {self.listing_id!r}")


@dataclass(frozen=True)
class SearchLog:
    search_id: str
    context: QueryContext
    impressions: tuple[ListingImpression, ...]

    def __post_init__(self):
        positions = [imp.position for imp in self.impressions]
        if len(set(positions)) != len(positions):
            raise ValueError(f"duplicate positions in search {self.search_id!r}")
        if positions != list(range(len(positions))):
            raise ValueError(f"positions not contiguous from 0 in search {self.search_id!r}")
        if sum(imp.booked for imp in self.impressions) > 1:
            raise ValueError(f"multiple bookings in search {self.search_id!r}")

    @property
    def booked(self) -> ListingImpression | None:
        for imp in self.impressions:
            if imp.booked:
                return imp
        return None


@dataclass(frozen=True)
class PairExample:
    search_id: str
    context: QueryContext
    booked: ListingImpression
    not_booked: ListingImpression


@dataclass(frozen=True)
class ConditionalPairExample:
    search_id: str
    context: QueryContext
    booked: ListingImpression
    not_booked: ListingImpression
    antecedent: ListingImpression


# -- serialization -----------------------------------------------------------


def log_to_dict(log: SearchLog) -> dict:
    return {
        "search_id": log.search_id,
        "query_features": list(log.context.query_features.values),
        "user_features": list(log.context.user_features.values),
        "impressions": [
            {
                "listing_id": imp.listing_id,
                "position": imp.position,
                "booked": imp.booked,
                "price": imp.price,
                "location": list(imp.location),
                "features": list(imp.features.values),
            }
            for imp in log.impressions
        ],
    }


def serialize_log(log: SearchLog) -> str:
    """Canonical one-line JSON encoding (fixed key order, no whitespace)."""
    return json.dumps(log_to_dict(log), separators=(",", ":"), allow_nan=False)


def _floats(raw, what: str) -> tuple[float, ...]:
    if not isinstance(raw, list):
        raise ValueError(f"{what} must be a list")
    out = []
    for v in raw:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ValueError(f"{what} contains a non-number")
        out.append(float(v))
    return tuple(out)


def log_from_dict(d: dict, schemas: SchemaSet | None = None) -> SearchLog:
    if not isinstance(d, dict):
        raise ValueError("record must be an object")
    ids = schemas.ids() if schemas else {"query": "query", "user": "user", "listing": "listing"}
    search_id = str(d["search_id"])
    q = FeatureVector(_floats(d["query_features"], "query_features"), ids["query"])
    u = FeatureVector(_floats(d["user_features"], "user_features"), ids["user"])
    impressions = []
    for raw in d["impressions"]:
        loc = _floats(raw["location"], "location")
        if len(loc) != 2:
            raise ValueError("location must be [x, y]")
        if not isinstance(raw["booked"], bool):
            raise ValueError("booked must be a boolean")
        impressions.append(
            ListingImpression(
                listing_id=str(raw["listing_id"]),
                position=int(raw["position"]),
                features=FeatureVector(_floats(raw["features"], "features"), ids["listing"]),
                booked=raw["booked"],
                price=float(raw["price"]),
                location=(loc[0], loc[1]),
            )
        )
    impressions.sort(key=lambda imp: imp.position)
    log = SearchLog(search_id, QueryContext(q, u), tuple(impressions))
    if schemas is not None:
        check_schemas(log, schemas)
    return log


def check_schemas(log: SearchLog, schemas: SchemaSet) -> None:
    ctx = log.context
    if len(ctx.query_features) != schemas.query.dim:
        raise ValueError(f"query_features has dim {len(ctx.query_features)}, schema expects {schemas.query.dim}")
    if len(ctx.user_features) != schemas.user.dim:
        raise ValueError(f"user_features has dim {len(ctx.user_features)}, schema expects {schemas.user.dim}")
    for imp in log.impressions:
        if len(imp.features) != schemas.listing.dim:
            raise ValueError(
                f"listing {imp.listing_id!r} has feature dim {len(imp.features)}, schema expects {schemas.listing.dim}"
            )


def infer_schemas(log: SearchLog) -> SchemaSet:
    dim = len(log.impressions[0].features) if log.impressions else 0
    return SchemaSet(
        FeatureSchema("query", len(log.context.query_features)),
        FeatureSchema("user", len(log.context.user_features)),
        FeatureSchema("listing", dim),
    )


def read_manifest(log_path: str | Path) -> SchemaSet | None:
    path = Path(log_path).parent / MANIFEST_NAME
    if not path.exists():
        return None
    with open(path) as f:
        return SchemaSet.from_dict(json.load(f))


def write_manifest(directory: str | Path, schemas: SchemaSet) -> Path:
    path = Path(directory) / MANIFEST_NAME
    path.write_text(json.dumps(schemas.to_dict(), indent=2, sort_keys=True) + "\n")
    return path


def load_logs(path: str | Path, format: str = "jsonl", schemas: SchemaSet | None = None) -> list[SearchLog]:
    """Read a search-log file; errors carry the 1-based line number."""
    if format != "jsonl":
        raise ValueError(f"unsupported log format {format!r}")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"log file not found: {path}")
    if schemas is None:
        schemas = read_manifest(path)
    logs = []
    seen: set[str] = set()
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            sid = None
            try:
                record = json.loads(line)
                sid = record.get("search_id") if isinstance(record, dict) else None
                log = log_from_dict(record, schemas)
            except LogFormatError:
                raise
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                where = f" (search_id {sid!r})" if sid is not None else ""
                raise LogFormatError(f"{exc}{where}", line=lineno) from None
            if schemas is None:
                schemas = infer_schemas(log)
                log = log_from_dict(record, schemas)
            if log.search_id in seen:
                raise LogFormatError(f"duplicate search_id {log.search_id!r}", line=lineno)
            seen.add(log.search_id)
            logs.append(log)
    return logs


def save_logs(path: str | Path, logs: Iterable[SearchLog], schemas: SchemaSet | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for log in logs:
            f.write(serialize_log(log))
            f.write("\n")
    if schemas is not None:
        write_manifest(path.parent, schemas)
    return path


# -- training examples -------------------------------------------------------


def build_pairs(logs: Sequence[SearchLog]) -> list[PairExample]:
    """One (booked, not booked) pair per non-booked impression of each booked search."""
    pairs = []
    for log in logs:
        booked = log.booked
        if booked is None:
            continue
        for imp in log.impressions:
            if not imp.booked:
                pairs.append(PairExample(log.search_id, log.context, booked, imp))
    return pairs


def build_conditional_pairs(logs: Sequence[SearchLog]) -> list[ConditionalPairExample]:
    """Pairs below position 0, each carrying the rejected position-0 listing.

    Searches booked at position 0, and searches without a booking, contribute
    nothing.
    """
    out = []
    for log in logs:
        booked = log.booked
        if booked is None or booked.position == 0 or not log.impressions:
            continue
        antecedent = log.impressions[0]
        for imp in log.impressions[1:]:
            if not imp.booked:
                out.append(ConditionalPairExample(log.search_id, log.context, booked, imp, antecedent))
    return out
