"""Choice datasets: ingestion, reductions, synthetic generators, batching.

Three observation kinds are supported:

* single:     a choice ``i`` from an assortment ``S``
* sequential: a choice ``i`` from candidates ``C`` within assortment ``S``
* multi:      a basket ``B`` chosen from ``S``

Single and multi datasets reduce to sequential form for model training.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

SINGLE = "single"
SEQUENTIAL = "sequential"
MULTI = "multi"

STOP_ITEM_NAME = "__stop__"


class DataError(ValueError):
    pass


@dataclass
class ItemCatalog:
    """Item universe with per-item feature rows (one-hot when featureless)."""

    names: list[str]
    features: np.ndarray  # n x d
    no_purchase_index: int | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.shape[0] != len(self.names):
            raise DataError("feature rows must match item count")
        if self.no_purchase_index is not None and not (
            0 <= self.no_purchase_index < len(self.names)
        ):
            raise DataError("no_purchase_index out of range")
        self._index = {name: i for i, name in enumerate(self.names)}

    @classmethod
    def one_hot(cls, names: list[str], no_purchase_index: int | None = None) -> "ItemCatalog":
        return cls(list(names), np.eye(len(names)), no_purchase_index)

    @property
    def item_count(self) -> int:
        return len(self.names)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def index_of(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise DataError(f"unknown item {name!r}") from None

    def with_stop_item(self) -> "ItemCatalog":
        """Append a dedicated stop item with its own one-hot feature column."""
        n, d = self.features.shape
        feats = np.zeros((n + 1, d + 1))
        feats[:n, :d] = self.features
        feats[n, d] = 1.0
        return ItemCatalog(self.names + [STOP_ITEM_NAME], feats, self.no_purchase_index)

    @property
    def stop_index(self) -> int | None:
        return self._index.get(STOP_ITEM_NAME)


@dataclass(frozen=True)
class ChoiceObservation:
    kind: str
    assortment: frozenset[int]
    candidates: frozenset[int] | None = None
    choice: int | None = None
    basket: frozenset[int] | None = None
    context: tuple[float, ...] | None = None

    def validate(self, n_items: int) -> None:
        if not self.assortment:
            raise DataError("empty assortment")
        for i in self.assortment:
            if not 0 <= i < n_items:
                raise DataError(f"item index {i} outside catalog")
        if self.kind == SINGLE:
            if self.choice not in self.assortment:
                raise DataError(f"choice {self.choice} not in assortment")
        elif self.kind == SEQUENTIAL:
            if self.candidates is None or not self.candidates <= self.assortment:
                raise DataError("candidates must be a subset of the assortment")
            if self.choice not in self.candidates:
                raise DataError(f"choice {self.choice} not in candidates")
        elif self.kind == MULTI:
            if not self.basket:
                raise DataError("multi observation needs a nonempty basket")
            if not self.basket <= self.assortment:
                raise DataError("basket must be a subset of the assortment")
        else:
            raise DataError(f"unknown kind {self.kind!r}")


@dataclass
class ChoiceDataset:
    catalog: ItemCatalog
    observations: list[ChoiceObservation]
    kind: str

    def __post_init__(self):
        for k, obs in enumerate(self.observations):
            if obs.kind != self.kind:
                raise DataError(f"observation {k} has kind {obs.kind}, dataset is {self.kind}")
            try:
                obs.validate(self.catalog.item_count)
            except DataError as exc:
                raise DataError(f"observation {k}: {exc}") from None

    def __len__(self) -> int:
        return len(self.observations)


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

CSV_COLUMNS = ("obs_id", "kind", "assortment", "candidates", "choice", "basket")


def _parse_set(cell: str, catalog: ItemCatalog) -> frozenset[int]:
    return frozenset(catalog.index_of(tok.strip()) for tok in cell.split(";") if tok.strip())


def load_csv(path, item_features_path=None) -> ChoiceDataset:
    """Load a dataset from the documented CSV schema.

    Columns: ``obs_id, kind, assortment, candidates, choice, basket`` plus
    optional context feature columns ``f_0..f_{k-1}``. Set-valued cells are
    semicolon-separated item names. Item features come from a separate CSV
    (``name, f_0, ...``); without one the catalog is one-hot.
    """
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DataError(f"{path}: no data rows")
    header = rows[0].keys()
    missing = [c for c in ("obs_id", "kind", "assortment") if c not in header]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    feat_cols = sorted(
        (c for c in header if c.startswith("f_")), key=lambda c: int(c.split("_")[1])
    )

    names: list[str] = []
    seen = set()
    for row in rows:
        for cell in (row.get("assortment", ""), row.get("candidates", ""), row.get("basket", "")):
            for tok in (cell or "").split(";"):
                tok = tok.strip()
                if tok and tok not in seen:
                    seen.add(tok)
                    names.append(tok)

    if item_features_path is not None:
        catalog = _load_item_features(item_features_path, names)
    else:
        catalog = ItemCatalog.one_hot(names)

    kind = rows[0]["kind"].strip()
    observations = []
    for lineno, row in enumerate(rows, start=2):
        try:
            assortment = _parse_set(row["assortment"], catalog)
            candidates = _parse_set(row["candidates"], catalog) if row.get("candidates") else None
            basket = _parse_set(row["basket"], catalog) if row.get("basket") else None
            choice = catalog.index_of(row["choice"].strip()) if row.get("choice") else None
            context = (
                tuple(float(row[c]) for c in feat_cols) if feat_cols else None
            )
            obs = ChoiceObservation(
                kind=row["kind"].strip(),
                assortment=assortment,
                candidates=candidates,
                choice=choice,
                basket=basket,
                context=context,
            )
            obs.validate(catalog.item_count)
        except (DataError, KeyError, ValueError) as exc:
            raise DataError(f"{path}, line {lineno}: {exc}") from None
        observations.append(obs)
    return ChoiceDataset(catalog, observations, kind)


def _load_item_features(path, names: list[str]) -> ItemCatalog:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    feats_by_name = {}
    for row in rows:
        name = row["name"].strip()
        vals = [float(v) for k, v in row.items() if k != "name"]
        feats_by_name[name] = vals
    missing = [n for n in names if n not in feats_by_name]
    if missing:
        raise DataError(f"{path}: no features for items {missing[:5]}")
    features = np.array([feats_by_name[n] for n in names])
    return ItemCatalog(names, features)


def save_csv(ds: ChoiceDataset, path) -> None:
    feat_dim = len(ds.observations[0].context) if ds.observations[0].context else 0
    cols = list(CSV_COLUMNS) + [f"f_{i}" for i in range(feat_dim)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for k, obs in enumerate(ds.observations):
            names = ds.catalog.names
            row = [
                k,
                obs.kind,
                ";".join(names[i] for i in sorted(obs.assortment)),
                ";".join(names[i] for i in sorted(obs.candidates)) if obs.candidates else "",
                names[obs.choice] if obs.choice is not None else "",
                ";".join(names[i] for i in sorted(obs.basket)) if obs.basket else "",
            ]
            if obs.context:
                row.extend(obs.context)
            writer.writerow(row)


def load_basket_transactions(path, n_items: int | None = None) -> ChoiceDataset:
    """Load the public bakery-style transaction format: one line per basket.

    Each line lists integer item ids, optionally preceded by a transaction id
    (detected when the first column is a unique running id). The assortment of
    every observation is the full catalog.
    """
    baskets_raw: list[list[int]] = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            toks = [t for t in line.replace(",", " ").split() if t]
            baskets_raw.append([int(t) for t in toks])
    if not baskets_raw:
        raise DataError(f"{path}: empty transaction file")

    first_cols = [b[0] for b in baskets_raw if b]
    has_tid = len(set(first_cols)) == len(first_cols) and len(baskets_raw) > 1
    baskets = [b[1:] if has_tid else b for b in baskets_raw]
    baskets = [b for b in baskets if b]

    max_id = max(max(b) for b in baskets)
    min_id = min(min(b) for b in baskets)
    offset = min_id  # ids may be 0- or 1-based
    n = n_items if n_items is not None else max_id - offset + 1
    catalog = ItemCatalog.one_hot([f"item_{i}" for i in range(n)])
    full = frozenset(range(n))
    observations = [
        ChoiceObservation(kind=MULTI, assortment=full, basket=frozenset(i - offset for i in b))
        for b in baskets
    ]
    return ChoiceDataset(catalog, observations, MULTI)


# ---------------------------------------------------------------------------
# Splits and reductions
# ---------------------------------------------------------------------------


def split(
    ds: ChoiceDataset, ratios: tuple[float, float, float] = (0.6, 0.2, 0.2), seed: int = 0
) -> tuple[ChoiceDataset, ChoiceDataset, ChoiceDataset]:
    """Disjoint train/val/test partition, deterministic under ``seed``."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"ratios {ratios} must sum to 1")
    if not ds.observations:
        raise DataError("cannot split an empty dataset")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ds.observations))
    n = len(order)
    n_train = int(n * ratios[0])
    n_val = int(n * ratios[1])
    parts = (order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :])
    return tuple(
        ChoiceDataset(ds.catalog, [ds.observations[i] for i in idx], ds.kind) for idx in parts
    )


def single_to_sequential(ds: ChoiceDataset) -> ChoiceDataset:
    """Augment each (i, S) into (i, C=S, S)."""
    if ds.kind != SINGLE:
        raise DataError(f"expected a single-choice dataset, got {ds.kind}")
    observations = [
        ChoiceObservation(
            kind=SEQUENTIAL,
            assortment=obs.assortment,
            candidates=obs.assortment,
            choice=obs.choice,
            context=obs.context,
        )
        for obs in ds.observations
    ]
    return ChoiceDataset(ds.catalog, observations, SEQUENTIAL)


def multi_to_sequential(
    ds: ChoiceDataset, rng: np.random.Generator, append_stop: bool = False
) -> ChoiceDataset:
    """Expand each basket into sequential samples with a uniform random order.

    The k-th sample's candidates are the assortment minus the k-1 previously
    drawn basket items. With ``append_stop`` the catalog must carry the stop
    item (see ``ItemCatalog.with_stop_item``) and a final stop-choice sample
    is emitted per basket.
    """
    if ds.kind != MULTI:
        raise DataError(f"expected a multi-choice dataset, got {ds.kind}")
    stop = ds.catalog.stop_index
    if append_stop and stop is None:
        raise DataError("append_stop requires a catalog with the stop item")

    observations = []
    for obs in ds.observations:
        assortment = obs.assortment | {stop} if append_stop else obs.assortment
        basket = sorted(obs.basket)
        order = rng.permutation(len(basket))
        drawn: set[int] = set()
        for k in order:
            item = basket[k]
            candidates = frozenset(assortment - drawn)
            observations.append(
                ChoiceObservation(
                    kind=SEQUENTIAL,
                    assortment=frozenset(assortment),
                    candidates=candidates,
                    choice=item,
                    context=obs.context,
                )
            )
            drawn.add(item)
        if append_stop:
            observations.append(
                ChoiceObservation(
                    kind=SEQUENTIAL,
                    assortment=frozenset(assortment),
                    candidates=frozenset(assortment - drawn),
                    choice=stop,
                    context=obs.context,
                )
            )
    return ChoiceDataset(ds.catalog, observations, SEQUENTIAL)


# ---------------------------------------------------------------------------
# Boosted-utility synthetic generators
# ---------------------------------------------------------------------------

BOOST_ITEMS = ["A", "A'", "B", "L"]
_A, _AP, _B, _L = 0, 1, 2, 3

CANDIDATE_BOOST = "candidate"
CHOSEN_BOOST = "chosen"


def boosted_utility(item: int, C: frozenset, S: frozenset, boost_kind: str, boost_value: float):
    """True utility: 1 for everything except A, which is boosted when A' sits
    in the triggering set (candidates, or chosen-so-far)."""
    if item != _A:
        return 1.0
    if boost_kind == CANDIDATE_BOOST:
        return boost_value if _AP in C else 1.0
    if boost_kind == CHOSEN_BOOST:
        return boost_value if _AP in (S - C) else 1.0
    raise DataError(f"unknown boost kind {boost_kind!r}")


def _boost_choice_probs(C: frozenset, S: frozenset, boost_kind: str, boost_value: float):
    items = sorted(C)
    u = np.array([boosted_utility(i, C, S, boost_kind, boost_value) for i in items])
    e = np.exp(u - u.max())
    return items, e / e.sum()


def _sample_boost_sets(rng: np.random.Generator):
    S = {_L} | {i for i in (_A, _AP, _B) if rng.random() < 0.5}
    C = {_L} | {i for i in S - {_L} if rng.random() < 0.5}
    return frozenset(S), frozenset(C)


def generate_boosted_synthetic(
    n_samples: int,
    boost_kind: str = CANDIDATE_BOOST,
    boost_value: float = 100.0,
    seed: int = 0,
) -> ChoiceDataset:
    """Sequential dataset over items {A, A', B, L} with a boosted utility for A.

    Assortments include A, A', B each with probability 0.5 and always L;
    candidates thin the assortment at 0.5 with L always kept; the choice is
    drawn from the softmax of the true utilities.
    """
    if boost_value <= 0:
        raise DataError("boost_value must be positive")
    rng = np.random.default_rng(seed)
    catalog = ItemCatalog.one_hot(BOOST_ITEMS)
    observations = []
    for _ in range(n_samples):
        S, C = _sample_boost_sets(rng)
        items, probs = _boost_choice_probs(C, S, boost_kind, boost_value)
        choice = items[rng.choice(len(items), p=probs)]
        observations.append(
            ChoiceObservation(kind=SEQUENTIAL, assortment=S, candidates=C, choice=choice)
        )
    return ChoiceDataset(catalog, observations, SEQUENTIAL)


def boosted_conditional_entropy(boost_kind: str, boost_value: float = 100.0) -> float:
    """Exact expected entropy of the true choice distribution, i.e. the CE a
    perfect model attains, averaged over the (S, C) sampling scheme."""
    total = 0.0
    for bits_s in range(8):
        S = frozenset({_L} | {i for i in (_A, _AP, _B) if bits_s >> i & 1})
        p_s = 0.5 ** 3  # A, A', B each independently present or not
        inner = sorted(S - {_L})
        for bits_c in range(1 << len(inner)):
            C = frozenset({_L} | {it for k, it in enumerate(inner) if bits_c >> k & 1})
            p_c = 0.5 ** len(inner)
            _, probs = _boost_choice_probs(C, S, boost_kind, boost_value)
            ent = -np.sum(probs * np.log(probs))
            total += p_s * p_c * ent
    return float(total)


def boosted_conditional_choice_prob(
    target: int, condition, boost_kind: str, boost_value: float = 100.0
) -> float:
    """Exact P(choice == target | condition(C, S)) under the generator."""
    num = den = 0.0
    for bits_s in range(8):
        S = frozenset({_L} | {i for i in (_A, _AP, _B) if bits_s >> i & 1})
        inner = sorted(S - {_L})
        for bits_c in range(1 << len(inner)):
            C = frozenset({_L} | {it for k, it in enumerate(inner) if bits_c >> k & 1})
            w = 0.5 ** 3 * 0.5 ** len(inner)
            if not condition(C, S):
                continue
            items, probs = _boost_choice_probs(C, S, boost_kind, boost_value)
            den += w
            if target in C:
                num += w * probs[items.index(target)]
    return num / den if den else 0.0


# Multi-choice variant: utilities depend on S only, baskets are generated by
# the sequential model until L ("leave") is drawn; L never enters the basket.
MULTI_BOOST_UTILITIES = {_AP: 2.5, _B: -2.5, _L: 0.0}
MULTI_BOOST_A = {True: 5.0, False: -2.5}


def _multi_boost_utility(item: int, S: frozenset, boost_value: float = 5.0) -> float:
    if item == _A:
        return boost_value if _AP in S else MULTI_BOOST_A[False]
    return MULTI_BOOST_UTILITIES[item]


def generate_boosted_multi(
    n_samples: int, seed: int = 0, boost_value: float = 5.0
) -> ChoiceDataset:
    """Multi-choice variant of the boosted synthetic: membership is near 0/1.

    Baskets are drawn by sequentially sampling from softmax utilities over the
    remaining candidates until L is drawn; empty baskets are resampled.
    """
    rng = np.random.default_rng(seed)
    catalog = ItemCatalog.one_hot(BOOST_ITEMS)
    observations = []
    while len(observations) < n_samples:
        S = frozenset({_L} | {i for i in (_A, _AP, _B) if rng.random() < 0.5})
        basket: set[int] = set()
        C = set(S)
        while True:
            items = sorted(C)
            u = np.array([_multi_boost_utility(i, S, boost_value) for i in items])
            e = np.exp(u - u.max())
            choice = items[rng.choice(len(items), p=e / e.sum())]
            if choice == _L:
                break
            basket.add(choice)
            C.remove(choice)
            if not C - {_L}:
                break
        if basket:
            observations.append(
                ChoiceObservation(kind=MULTI, assortment=S, basket=frozenset(basket))
            )
    return ChoiceDataset(catalog, observations, MULTI)


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------


@dataclass
class PaddedBatch:
    """A batch of sequential observations padded to the batch's max set sizes.

    Padded positions carry zero features and False masks; ``labels`` indexes
    the chosen candidate position of each row.
    """

    cand_features: np.ndarray  # B x Cmax x d
    assort_features: np.ndarray  # B x Smax x d
    cand_mask: np.ndarray  # B x Cmax bool
    assort_mask: np.ndarray  # B x Smax bool
    labels: np.ndarray | None  # B int, position in candidate axis
    label_mask: np.ndarray | None  # B x Smax bool (multi membership)
    cand_items: list[list[int]]
    assort_items: list[list[int]]

    @property
    def size(self) -> int:
        return self.cand_features.shape[0]


def _item_features(catalog: ItemCatalog, items: list[int], context) -> np.ndarray:
    feats = catalog.features[items]
    if context is not None:
        ctx = np.tile(np.asarray(context, dtype=np.float64), (len(items), 1))
        feats = np.concatenate([feats, ctx], axis=1)
    return feats


def effective_feature_dim(ds: ChoiceDataset) -> int:
    ctx = ds.observations[0].context
    return ds.catalog.feature_dim + (len(ctx) if ctx else 0)


def pad_batch(catalog: ItemCatalog, observations: list[ChoiceObservation]) -> PaddedBatch:
    cand_sets = [sorted(o.candidates) for o in observations]
    assort_sets = [sorted(o.assortment) for o in observations]
    cmax = max(len(c) for c in cand_sets)
    smax = max(len(s) for s in assort_sets)
    d = catalog.feature_dim + (
        len(observations[0].context) if observations[0].context else 0
    )
    B = len(observations)
    fc = np.zeros((B, cmax, d))
    fs = np.zeros((B, smax, d))
    mc = np.zeros((B, cmax), dtype=bool)
    ms = np.zeros((B, smax), dtype=bool)
    labels = np.zeros(B, dtype=np.int64)
    for b, obs in enumerate(observations):
        fc[b, : len(cand_sets[b])] = _item_features(catalog, cand_sets[b], obs.context)
        fs[b, : len(assort_sets[b])] = _item_features(catalog, assort_sets[b], obs.context)
        mc[b, : len(cand_sets[b])] = True
        ms[b, : len(assort_sets[b])] = True
        labels[b] = cand_sets[b].index(obs.choice)
    return PaddedBatch(fc, fs, mc, ms, labels, None, cand_sets, assort_sets)


def pad_multi_batch(catalog: ItemCatalog, observations: list[ChoiceObservation]) -> PaddedBatch:
    """Batch for the binary-membership head: candidates are the assortment and
    ``label_mask`` flags basket membership per assortment position."""
    assort_sets = [sorted(o.assortment) for o in observations]
    smax = max(len(s) for s in assort_sets)
    d = catalog.feature_dim + (
        len(observations[0].context) if observations[0].context else 0
    )
    B = len(observations)
    fs = np.zeros((B, smax, d))
    ms = np.zeros((B, smax), dtype=bool)
    lm = np.zeros((B, smax), dtype=bool)
    for b, obs in enumerate(observations):
        fs[b, : len(assort_sets[b])] = _item_features(catalog, assort_sets[b], obs.context)
        ms[b, : len(assort_sets[b])] = True
        for pos, item in enumerate(assort_sets[b]):
            lm[b, pos] = item in obs.basket
    return PaddedBatch(fs, fs, ms, ms, None, lm, assort_sets, assort_sets)


def make_batches(
    ds: ChoiceDataset,
    batch_size: int,
    rng: np.random.Generator | None = None,
    shuffle: bool = True,
):
    """Yield PaddedBatches; observations are shuffled when ``shuffle``."""
    if not ds.observations:
        raise DataError("cannot batch an empty dataset")
    pad = pad_multi_batch if ds.kind == MULTI else pad_batch
    order = np.arange(len(ds.observations))
    if shuffle:
        if rng is None:
            raise DataError("shuffling requires an rng")
        order = rng.permutation(order)
    for start in range(0, len(order), batch_size):
        chunk = [ds.observations[i] for i in order[start : start + batch_size]]
        yield pad(ds.catalog, chunk)
