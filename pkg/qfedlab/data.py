"""
Transaction datasets: CSV ingestion, the synthetic fraud generator, sequence windows and
the IID train/test/client split.
"""
from collections import namedtuple
from fractions import Fraction
import json
import os
import numpy as np
import pandas as pd
if __package__ is None or __package__ == '':
    from errors import ConfigurationError, DataFormatError
else:
    from .errors import ConfigurationError, DataFormatError


__all__ = ['DataConfig', 'TabularDataset', 'SequenceSet', 'SplitPlan', 'load_schema', 'load_csv', 'synth_generate',
           'make_windows', 'make_split', 'parse_ratio']

SOURCES = ('synthetic', 'csv')
PIPELINES = ('pca', 'onehot')


def parse_ratio(ratio):
    """
    Train fraction from a float or an "a:b" train:test string.

    >>> parse_ratio('2:1')
    0.6666666666666666
    >>> parse_ratio(0.75)
    0.75
    """
    if isinstance(ratio, str):
        try:
            (a, b) = [Fraction(p.strip()) for p in ratio.split(':')]
        except ValueError:
            raise ConfigurationError("train_ratio must look like '2:1', got " + repr(ratio))
        if a <= 0 or b <= 0:
            raise ConfigurationError("train_ratio parts must be positive, got " + repr(ratio))
        return float(a / (a + b))
    return float(ratio)


class DataConfig(namedtuple('DataConfig', ['source', 'path', 'schema', 'n_samples', 'n_features', 'signal', 'fraud_rate',
                                           'n_categorical', 'pipeline', 'pca_components', 'train_ratio', 'shuffle'],
                            defaults=('synthetic', None, None, 2000, 30, 3.0, 0.5, 0, 'pca', 28, 2 / 3, None))):
    """
    Where the transactions come from and how they are preprocessed.

    `shuffle=None` shuffles CSV rows but keeps the synthetic generator's order, since the
    generator already emits rows in random order and its labels depend on the preceding rows.
    """
    def validate(self):
        if self.source not in SOURCES:
            raise ConfigurationError("data.source must be one of " + str(SOURCES) + ", got " + repr(self.source))
        if self.source == 'csv' and not self.path:
            raise ConfigurationError("data.path is required when data.source is 'csv'")
        if self.pipeline not in PIPELINES:
            raise ConfigurationError("data.pipeline must be one of " + str(PIPELINES) + ", got " + repr(self.pipeline))
        if self.source == 'synthetic':
            if self.n_features < 2:
                raise ConfigurationError("data.n_features must be at least 2, got " + str(self.n_features))
            if not (0.0 < self.fraud_rate < 1.0):
                raise ConfigurationError("data.fraud_rate must be in (0, 1), got " + str(self.fraud_rate))
            if self.signal < 0:
                raise ConfigurationError("data.signal must be non-negative, got " + str(self.signal))
        if self.pca_components < 1:
            raise ConfigurationError("data.pca_components must be positive, got " + str(self.pca_components))
        if not (0.0 < self.train_fraction() < 1.0):
            raise ConfigurationError("data.train_ratio must leave both a train and a test split, got " + repr(self.train_ratio))
        return self

    def train_fraction(self):
        return parse_ratio(self.train_ratio)

    def should_shuffle(self):
        return (self.source == 'csv') if self.shuffle is None else bool(self.shuffle)


class TabularDataset(namedtuple('TabularDataset', ['features', 'labels', 'names', 'categories'])):
    """
    N x d features with binary labels. Categorical columns hold integer codes into
    `categories[name]` until they are one-hot encoded.
    """
    @property
    def n_samples(self):
        return len(self.labels)

    @property
    def n_features(self):
        return self.features.shape[1]

    def take(self, idx):
        return self._replace(features=self.features[idx], labels=self.labels[idx])


class SequenceSet(namedtuple('SequenceSet', ['sequences', 'labels', 'rows'])):
    """
    Windows of consecutive rows: `rows[m]` lists the source rows of window m, `sequences`
    is (M, L, d) once features are transformed, and `labels[m]` is the label of the window's
    last row.
    """
    @property
    def n_samples(self):
        return len(self.labels)

    def take(self, idx):
        return SequenceSet(None if self.sequences is None else self.sequences[idx], self.labels[idx], self.rows[idx])

    def prevalence(self):
        return float(np.mean(self.labels)) if self.n_samples else float('nan')


class SplitPlan(namedtuple('SplitPlan', ['train', 'test', 'clients'])):
    def validate(self, n_samples):
        train, test = set(self.train.tolist()), set(self.test.tolist())
        assert not (train & test), "train and test overlap"
        assert train | test == set(range(n_samples)), "split does not cover the dataset"
        seen = set()
        for shard in self.clients:
            shard = set(shard.tolist())
            assert not (shard & seen), "client shards overlap"
            seen |= shard
        assert seen == train, "client shards do not cover the train split"
        return self


def load_schema(path):
    """A JSON schema naming the label column, categorical columns and columns to drop."""
    try:
        with open(path) as f:
            schema = json.load(f)
    except FileNotFoundError:
        raise DataFormatError("No such schema file: " + str(path))
    if 'label' not in schema:
        raise DataFormatError("Schema " + str(path) + " does not name a label column")
    return schema


def _parse_numeric(column, values):
    parsed = pd.to_numeric(values.str.strip(), errors='coerce')
    bad = parsed.isna() | ~np.isfinite(parsed.to_numpy(dtype=float, na_value=np.nan))
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        # +2: the header is line 1
        raise DataFormatError("Row " + str(row + 2) + ", column " + repr(column) + ": " + repr(values.iloc[row]) + " is not a finite number")
    return parsed.to_numpy(dtype=float)


def load_csv(path, schema):
    """
    Reads a CSV with a header row. `schema` is a dict (or a path to a JSON schema) with keys
    `label`, optional `categorical` and optional `drop`.
    """
    if not isinstance(schema, dict):
        schema = load_schema(schema)
    if not os.path.exists(path):
        raise DataFormatError("No such data file: " + str(path))
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise DataFormatError("Data file " + str(path) + " is empty")
    if len(df) == 0:
        raise DataFormatError("Data file " + str(path) + " has no data rows")
    label = schema['label']
    if label not in df.columns:
        raise DataFormatError("Label column " + repr(label) + " not found in " + str(path))
    categorical = list(schema.get('categorical', []))
    for column in categorical:
        if column not in df.columns:
            raise DataFormatError("Categorical column " + repr(column) + " not found in " + str(path))
    df = df.drop(columns=[c for c in schema.get('drop', []) if c in df.columns])

    labels = _parse_numeric(label, df[label])
    if not np.all((labels == 0) | (labels == 1)):
        raise DataFormatError("Label column " + repr(label) + " must contain only 0 and 1")

    names, columns, categories = [], [], {}
    for column in df.columns:
        if column == label:
            continue
        if column in categorical:
            values = df[column].str.strip()
            vocab = tuple(sorted(values.unique()))
            codes = {v: i for (i, v) in enumerate(vocab)}
            columns.append(values.map(codes).to_numpy(dtype=float))
            categories[column] = vocab
        else:
            columns.append(_parse_numeric(column, df[column]))
        names.append(column)
    features = np.column_stack(columns) if columns else np.zeros((len(df), 0))
    return TabularDataset(features, labels.astype(int), tuple(names), categories)


def synth_generate(n_samples, n_features, signal, rng, window=3, fraud_rate=0.5, n_categorical=0):
    """
    Synthetic transactions whose fraud label depends on the last `window` rows.

    Rows are i.i.d. standard normal in n_features dimensions. A hidden unit direction u
    scores each row; row t is fraudulent when

        signal * (sum of u . x over rows t-window+1..t) / sqrt(window) + N(0, 1)

    exceeds its (1 - fraud_rate) quantile. With signal == 0 the label is independent of the
    features. `n_categorical` extra label-independent categorical columns with categories
    A, B, C are appended.

    >>> a = synth_generate(50, 4, 2.0, np.random.default_rng(7))
    >>> b = synth_generate(50, 4, 2.0, np.random.default_rng(7))
    >>> bool(np.array_equal(a.features, b.features) and np.array_equal(a.labels, b.labels))
    True
    >>> a.names
    ('v1', 'v2', 'v3', 'v4')
    """
    if n_features < 2:
        raise ConfigurationError("The generator needs at least 2 features, got " + str(n_features))
    features = rng.standard_normal((n_samples, n_features))
    direction = rng.standard_normal(n_features)
    direction /= np.linalg.norm(direction)
    projected = features @ direction
    score = np.convolve(projected, np.ones(window))[:n_samples] / np.sqrt(window)
    latent = signal * score + rng.standard_normal(n_samples)
    labels = (latent > np.quantile(latent, 1.0 - fraud_rate)).astype(int)

    names = tuple('v' + str(j + 1) for j in range(n_features))
    categories = {}
    if n_categorical > 0:
        codes = rng.integers(0, 3, size=(n_samples, n_categorical)).astype(float)
        features = np.hstack([features, codes])
        cat_names = tuple('cat' + str(j + 1) for j in range(n_categorical))
        names = names + cat_names
        categories = {name: ('A', 'B', 'C') for name in cat_names}
    return TabularDataset(features, labels, names, categories)


def make_windows(dataset, seq_len):
    """
    Non-overlapping windows of `seq_len` consecutive rows, labelled by their last row.

    >>> ds = TabularDataset(np.arange(14.0).reshape(7, 2), np.array([0, 1, 0, 0, 1, 1, 0]), ('a', 'b'), {})
    >>> w = make_windows(ds, 3)
    >>> w.rows.tolist(), w.labels.tolist()
    ([[0, 1, 2], [3, 4, 5]], [0, 1])
    """
    if seq_len < 1:
        raise ConfigurationError("seq_len must be positive, got " + str(seq_len))
    n_windows = dataset.n_samples // seq_len
    rows = np.arange(n_windows * seq_len).reshape(n_windows, seq_len)
    return SequenceSet(dataset.features[rows], dataset.labels[rows[:, -1]], rows)


def make_split(data, train_ratio, n_clients, rng):
    """
    Shuffled train/test split at `train_ratio`, with the train part cut into `n_clients`
    disjoint, near-equal IID shards. `data` is a sample count or anything with `n_samples`.

    >>> plan = make_split(20000, '2:1', 5, np.random.default_rng(0))
    >>> len(plan.test), sorted(len(c) for c in plan.clients)
    (6667, [2666, 2666, 2667, 2667, 2667])
    """
    n = data if isinstance(data, (int, np.integer)) else data.n_samples
    ratio = parse_ratio(train_ratio)
    if not (0.0 < ratio < 1.0):
        raise ConfigurationError("train_ratio must be in (0, 1), got " + repr(train_ratio))
    if n_clients < 1:
        raise ConfigurationError("Need at least one client, got " + str(n_clients))
    n_train = int(np.floor(n * ratio + 1e-9))
    if n_train < n_clients:
        raise ConfigurationError(str(n) + " samples at train ratio " + str(ratio) + " leave fewer than one training sample per client (" + str(n_clients) + " clients)")
    if n_train == n:
        raise ConfigurationError(str(n) + " samples at train ratio " + str(ratio) + " leave no test samples")
    order = rng.permutation(n)
    train, test = order[:n_train], order[n_train:]
    return SplitPlan(train, test, np.array_split(train, n_clients))
