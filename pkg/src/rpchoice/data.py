"""Containers and CSV ingestion for market-level choice data.

A dataset is a balanced panel: n markets, each with the same d choices and
b covariates per choice, plus an observed share per choice. Shares within a
market live on the probability simplex; markets whose file omits the
outside alternative may sum to less than one when the schema says so.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionError,
    InfeasibleError,
    ParseError,
    ScalingError,
    ValidationError,
)

SHARE_SUM_TOL = 1e-9


def _readonly(values, dtype=np.float64) -> np.ndarray:
    arr = np.ascontiguousarray(np.asarray(values, dtype=dtype))
    arr.setflags(write=False)
    return arr


def exact_unit_sum(shares: np.ndarray, adjust: int | None = None) -> np.ndarray:
    """Nudge one entry so math.fsum(result) == 1.0 exactly.

    The residual 1 - fsum(shares) is a few ulp at most; folding it into a
    single entry (the largest by default, or the index given by `adjust`)
    keeps every other entry untouched. Two rounds suffice because fsum is
    correctly rounded.
    """
    out = np.array(shares, dtype=np.float64, copy=True)
    slot = int(np.argmax(out)) if adjust is None else int(adjust)
    for _ in range(4):
        residual = 1.0 - math.fsum(out.tolist())
        if residual == 0.0:
            break
        out[slot] += residual
    return out


@dataclass(frozen=True)
class Market:
    """One market: a d x b covariate matrix and a length-d share vector.

    Shares must be finite, nonnegative, and sum to at most 1 (+1e-9 slack).
    Whether the sum must equal 1 is a dataset-level question: a file that
    omits the outside alternative legitimately leaves mass on the table,
    so the strict check lives in the loader, not here.
    """

    covariates: np.ndarray
    shares: np.ndarray

    def __post_init__(self):
        cov = _readonly(self.covariates)
        sh = _readonly(self.shares)
        if cov.ndim != 2:
            raise DimensionError(f"covariates must be 2-d, got shape {cov.shape}")
        if sh.ndim != 1 or sh.shape[0] != cov.shape[0]:
            raise DimensionError(
                f"shares shape {sh.shape} does not match covariates shape {cov.shape}"
            )
        if not np.isfinite(cov).all():
            raise ValidationError("covariates contain non-finite values")
        if not np.isfinite(sh).all():
            raise ValidationError("shares contain non-finite values")
        if (sh < 0).any():
            raise ValidationError("shares must be nonnegative")
        total = math.fsum(sh.tolist())
        if total > 1.0 + SHARE_SUM_TOL:
            raise ValidationError(f"shares sum to {total!r}, above 1")
        object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "shares", sh)

    @property
    def d(self) -> int:
        return self.shares.shape[0]

    @property
    def b(self) -> int:
        return self.covariates.shape[1]

    def share_sum(self) -> float:
        return math.fsum(self.shares.tolist())


@dataclass(frozen=True)
class ColumnScaling:
    """Per-column multipliers relative to the covariates' original units.

    Stored covariates equal original covariates times `factors`. A unit-norm
    coefficient estimated on scaled data maps back to original units by
    multiplying elementwise with `factors` and renormalizing; see
    map_to_original_units.
    """

    factors: np.ndarray

    def __post_init__(self):
        f = _readonly(self.factors)
        if f.ndim != 1:
            raise DimensionError("scaling factors must be a vector")
        if not np.isfinite(f).all() or (f <= 0).any():
            raise ScalingError("scaling factors must be positive and finite")
        object.__setattr__(self, "factors", f)

    @staticmethod
    def identity(b: int) -> "ColumnScaling":
        return ColumnScaling(np.ones(b))

    def compose(self, other: "ColumnScaling") -> "ColumnScaling":
        return ColumnScaling(self.factors * other.factors)


def map_to_original_units(scaling: ColumnScaling, beta: np.ndarray) -> np.ndarray:
    """Convert a coefficient vector estimated on scaled data back to original units.

    Scaled column X'_c = f_c * X_c, so utilities X'beta' equal X(f * beta');
    the original-unit direction is f * beta', renormalized to the sphere.
    """
    raw = scaling.factors * np.asarray(beta, dtype=np.float64)
    norm = float(np.linalg.norm(raw))
    if norm == 0.0:
        raise ScalingError("coefficient vector maps to zero")
    return raw / norm


@dataclass(frozen=True)
class Dataset:
    """Balanced panel of markets sharing one choice set and covariate layout."""

    markets: tuple[Market, ...]
    scaling: ColumnScaling = None  # type: ignore[assignment]
    covariate_names: tuple[str, ...] = ()
    market_ids: tuple[str, ...] = ()
    choice_ids: tuple[str, ...] = ()

    def __post_init__(self):
        markets = tuple(self.markets)
        if len(markets) < 2:
            raise ValidationError("a dataset needs at least 2 markets")
        d, b = markets[0].d, markets[0].b
        for i, m in enumerate(markets):
            if m.d != d or m.b != b:
                raise DimensionError(
                    f"market {i} has shape ({m.d}, {m.b}), expected ({d}, {b})"
                )
        scaling = self.scaling if self.scaling is not None else ColumnScaling.identity(b)
        if scaling.factors.shape[0] != b:
            raise DimensionError("scaling factor count does not match covariate count")
        names = tuple(self.covariate_names) or tuple(f"x{j + 1}" for j in range(b))
        if len(names) != b:
            raise DimensionError("covariate name count does not match covariate count")
        mids = tuple(self.market_ids) or tuple(str(i) for i in range(len(markets)))
        if len(mids) != len(markets):
            raise DimensionError("market id count does not match market count")
        cids = tuple(self.choice_ids) or tuple(str(j) for j in range(d))
        if len(cids) != d:
            raise DimensionError("choice id count does not match choice count")
        object.__setattr__(self, "markets", markets)
        object.__setattr__(self, "scaling", scaling)
        object.__setattr__(self, "covariate_names", names)
        object.__setattr__(self, "market_ids", mids)
        object.__setattr__(self, "choice_ids", cids)

    @property
    def n(self) -> int:
        return len(self.markets)

    @property
    def d(self) -> int:
        return self.markets[0].d

    @property
    def b(self) -> int:
        return self.markets[0].b

    def covariate_stack(self) -> np.ndarray:
        """All covariates as one (n, d, b) array."""
        return np.stack([m.covariates for m in self.markets])

    def share_stack(self) -> np.ndarray:
        """All shares as one (n, d) array."""
        return np.stack([m.shares for m in self.markets])

    def to_metadata(self) -> dict:
        return {
            "schema_version": 1,
            "n": self.n,
            "d": self.d,
            "b": self.b,
            "covariate_names": list(self.covariate_names),
            "scaling_factors": [float(f) for f in self.scaling.factors],
        }


@dataclass(frozen=True)
class CsvSchema:
    """Column-name mapping for the long-format CSV layout.

    One row per (market, choice) pair. Either `share` holds observed shares
    directly, or `quantity` holds purchase counts and `custcount_path` names
    a sidecar CSV (columns market,custcount) with per-market customer counts;
    in quantity mode shares are quantity/custcount and an outside alternative
    with zero covariates absorbs the remaining mass.

    covariates: names of the covariate columns, in order. Empty means every
    column other than the id and share/quantity columns, in header order.
    fill_missing: absent (market, choice) rows become share 0, covariates 0.
    has_outside: inside shares may sum to less than 1 (an outside option
    exists but is not a row); without it each market must sum to 1.
    """

    market: str = "market"
    choice: str = "choice"
    covariates: tuple[str, ...] = ()
    share: str = "share"
    quantity: str | None = None
    custcount_path: str | None = None
    fill_missing: bool = False
    has_outside: bool = False


def _sort_ids(ids) -> list[str]:
    """Numeric order when every id parses as a number, else lexicographic."""
    ids = list(ids)
    try:
        keys = [float(i) for i in ids]
    except ValueError:
        return sorted(ids)
    return [i for _, i in sorted(zip(keys, ids), key=lambda t: t[0])]


def _parse_cell(raw: str, column: str, line_num: int) -> float:
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise ParseError(
            f"row {line_num}: cannot parse {raw!r} in column {column!r} as a number"
        ) from None


def _load_custcounts(path: str) -> dict[str, float]:
    counts: dict[str, float] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"market", "custcount"} <= set(reader.fieldnames):
            raise ParseError(f"{path}: expected header with columns market,custcount")
        for row in reader:
            counts[row["market"]] = _parse_cell(row["custcount"], "custcount", reader.line_num)
    return counts


def load_csv(path: str, schema: CsvSchema = CsvSchema()) -> Dataset:
    """Read a long-format CSV into a Dataset.

    Markets are ordered by market id and choices by choice id (numeric order
    when the ids parse as numbers, lexicographic otherwise), so the same file
    always produces the same array layout.
    """
    value_col = schema.quantity if schema.quantity is not None else schema.share
    rows: dict[str, dict[str, tuple[list[float], float]]] = {}
    cov_names: tuple[str, ...] = schema.covariates

    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if header is None:
            raise ParseError(f"{path}: empty file, expected a header row")
        for required in (schema.market, schema.choice, value_col):
            if required not in header:
                raise ParseError(f"{path}: missing required column {required!r}")
        if not cov_names:
            reserved = {schema.market, schema.choice, value_col}
            cov_names = tuple(c for c in header if c not in reserved)
        else:
            missing = [c for c in cov_names if c not in header]
            if missing:
                raise ParseError(f"{path}: missing covariate columns {missing}")
        if not cov_names:
            raise ParseError(f"{path}: no covariate columns found")

        for row in reader:
            mid, cid = row[schema.market], row[schema.choice]
            cov = [_parse_cell(row[c], c, reader.line_num) for c in cov_names]
            val = _parse_cell(row[value_col], value_col, reader.line_num)
            per_market = rows.setdefault(mid, {})
            if cid in per_market:
                raise ValidationError(
                    f"row {reader.line_num}: duplicate entry for market {mid!r}, choice {cid!r}"
                )
            per_market[cid] = (cov, val)

    if len(rows) < 2:
        raise ValidationError(f"{path}: found {len(rows)} market(s), need at least 2")

    market_ids = _sort_ids(rows.keys())
    universe: set[str] = set()
    for per_market in rows.values():
        universe |= per_market.keys()
    choice_ids = _sort_ids(universe)

    if not schema.fill_missing:
        for mid in market_ids:
            missing = universe - rows[mid].keys()
            if missing:
                raise DimensionError(
                    f"market {mid!r} is missing choices {sorted(missing)}; "
                    "pass fill_missing to zero-fill"
                )

    b = len(cov_names)
    zero_row = ([0.0] * b, 0.0)
    quantity_mode = schema.quantity is not None
    custcounts = _load_custcounts(schema.custcount_path) if quantity_mode else {}

    markets = []
    for mid in market_ids:
        per_market = rows[mid]
        cov = np.array(
            [per_market.get(cid, zero_row)[0] for cid in choice_ids], dtype=np.float64
        )
        vals = np.array(
            [per_market.get(cid, zero_row)[1] for cid in choice_ids], dtype=np.float64
        )
        if quantity_mode:
            if mid not in custcounts:
                raise ValidationError(f"market {mid!r} has no custcount entry")
            try:
                shares = build_outside_option(vals, custcounts[mid])
            except InfeasibleError as exc:
                raise InfeasibleError(f"market {mid!r}: {exc}") from None
            cov = np.vstack([cov, np.zeros((1, b))])
        else:
            shares = vals
            total = math.fsum(shares.tolist())
            if not schema.has_outside and abs(total - 1.0) > SHARE_SUM_TOL:
                raise ValidationError(
                    f"market {mid!r}: shares sum to {total!r}, expected 1"
                )
        try:
            markets.append(Market(cov, shares))
        except (ValidationError, DimensionError) as exc:
            raise type(exc)(f"market {mid!r}: {exc}") from None

    out_choice_ids = list(choice_ids)
    if quantity_mode:
        outside_id = "outside"
        while outside_id in universe:
            outside_id = "_" + outside_id
        out_choice_ids.append(outside_id)

    return Dataset(
        markets=tuple(markets),
        covariate_names=cov_names,
        market_ids=tuple(market_ids),
        choice_ids=tuple(out_choice_ids),
    )


def write_csv(data: Dataset, path: str) -> None:
    """Write the long-format CSV. repr round-trips float64 exactly."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["market", "choice", *data.covariate_names, "share"])
        for mid, market in zip(data.market_ids, data.markets):
            for cid, cov, share in zip(data.choice_ids, market.covariates, market.shares):
                writer.writerow([mid, cid, *(repr(float(x)) for x in cov), repr(float(share))])


def build_outside_option(quantities, custcount: float) -> np.ndarray:
    """Shares from raw counts, with the outside alternative appended.

    Inside share j is quantities[j]/custcount; the last entry is the leftover
    1 - sum of inside shares. Compensated summation plus a residual fold into
    the outside entry keep the full vector summing to 1.0 exactly.
    """
    q = np.asarray(quantities, dtype=np.float64)
    if q.ndim != 1 or q.size == 0:
        raise DimensionError("quantities must be a nonempty vector")
    if not np.isfinite(q).all() or (q < 0).any():
        raise ValidationError("quantities must be finite and nonnegative")
    if not np.isfinite(custcount) or custcount <= 0:
        raise ValidationError(f"custcount must be positive, got {custcount!r}")
    total_q = math.fsum(q.tolist())
    if total_q > custcount * (1.0 + 1e-12):
        raise InfeasibleError(
            f"quantities sum to {total_q!r}, above custcount {custcount!r}"
        )
    inside = q / custcount
    outside = max(0.0, 1.0 - math.fsum(inside.tolist()))
    shares = exact_unit_sum(np.append(inside, outside), adjust=len(inside))
    if shares[-1] < 0.0:
        # the residual fold can only undershoot when quantities fill the
        # market exactly; push the leftover into the largest inside share
        shares[-1] = 0.0
        shares = exact_unit_sum(shares, adjust=int(np.argmax(shares[:-1])))
    return shares


def rescale_columns(
    data: Dataset, policy="unit-norm", reference: int = 0
) -> tuple[Dataset, ColumnScaling]:
    """Rescale covariate columns, recording the multipliers.

    policy "unit-norm": every column, stacked across all markets, gets the
    same Euclidean length as the stacked reference column. Otherwise policy
    is an explicit vector of b positive factors. Returns the rescaled
    dataset (with cumulative scaling composed in) and this step's factors.
    """
    stack = data.covariate_stack()
    if isinstance(policy, str):
        if policy != "unit-norm":
            raise ScalingError(f"unknown scaling policy {policy!r}")
        if not 0 <= reference < data.b:
            raise ScalingError(f"reference column {reference} out of range")
        norms = np.sqrt((stack ** 2).sum(axis=(0, 1)))
        if norms[reference] == 0.0:
            raise ScalingError(f"reference column {reference} has zero norm")
        zero = np.flatnonzero(norms == 0.0)
        if zero.size:
            raise ScalingError(f"columns {zero.tolist()} have zero norm, cannot rescale")
        factors = norms[reference] / norms
    else:
        factors = np.asarray(policy, dtype=np.float64)
        if factors.shape != (data.b,):
            raise ScalingError(f"expected {data.b} factors, got shape {factors.shape}")
        if not np.isfinite(factors).all() or (factors <= 0).any():
            raise ScalingError("explicit factors must be positive and finite")

    step = ColumnScaling(factors)
    markets = tuple(
        Market(m.covariates * factors, m.shares) for m in data.markets
    )
    rescaled = Dataset(
        markets=markets,
        scaling=data.scaling.compose(step),
        covariate_names=data.covariate_names,
        market_ids=data.market_ids,
        choice_ids=data.choice_ids,
    )
    return rescaled, step


def save_metadata(data: Dataset, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(data.to_metadata(), fh, indent=2, sort_keys=True)
        fh.write("\n")
