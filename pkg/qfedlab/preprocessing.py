"""
Feature transforms and the two preprocessing pipelines.

Every fitted statistic (PCA basis, scaler moments, category vocabularies) is computed from
the training rows only and then applied to all rows.

    pca:     [shuffle] -> windows -> split -> PCA(k) -> scale
    onehot:  windows -> under-sample -> split -> one-hot -> scale
"""
from collections import namedtuple
import hashlib
import json
import logging
import os
import numpy as np
if __package__ is None or __package__ == '':
    from data import SequenceSet, SplitPlan, load_csv, make_split, make_windows, synth_generate
    from errors import ConfigurationError, DataFormatError
    from _utils import jsonable, spawn_generators
else:
    from .data import SequenceSet, SplitPlan, load_csv, make_split, make_windows, synth_generate
    from .errors import ConfigurationError, DataFormatError
    from ._utils import jsonable, spawn_generators


__all__ = ['PCAModel', 'ScalerModel', 'PreparedData', 'pca_fit', 'pca_transform', 'pca_inverse_transform',
           'pca_fit_transform', 'standard_scale', 'scale_transform', 'one_hot', 'undersample', 'prepare',
           'prepare_data', 'cache_key', 'save_prepared', 'load_prepared']

logger = logging.getLogger(__name__)

CACHE_FORMAT = 'qfedlab-prepared/1'
DATA_STREAMS = 0


class PCAModel(namedtuple('PCAModel', ['mean', 'components', 'explained_variance', 'total_variance'])):
    """`components` is d x k with orthonormal columns ordered by decreasing variance."""
    def explained_variance_ratio(self):
        if self.total_variance == 0:
            return np.zeros_like(self.explained_variance)
        return self.explained_variance / self.total_variance


class ScalerModel(namedtuple('ScalerModel', ['mean', 'std'])):
    pass


def _rows(x, idx):
    return x if idx is None else x[np.asarray(idx, dtype=int)]


def pca_fit(x, k):
    """
    Top-k eigenvectors of the sample covariance of x (N x d).

    >>> t = np.linspace(-1.0, 1.0, 20)
    >>> model = pca_fit(np.column_stack([t, 2 * t]), 1)
    >>> bool(model.explained_variance_ratio()[0] >= 1 - 1e-9)
    True
    """
    x = np.asarray(x, dtype=float)
    (n, d) = x.shape
    if k > d:
        raise ConfigurationError("Cannot keep " + str(k) + " principal components of " + str(d) + " features")
    if n <= k:
        raise ConfigurationError("PCA with " + str(k) + " components needs more than " + str(k) + " samples, got " + str(n))
    mean = x.mean(axis=0)
    cov = np.atleast_2d(np.cov(x - mean, rowvar=False))
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:k]
    components = eigvecs[:, order]
    # eigh's sign is arbitrary; make the largest-magnitude loading of each component positive
    signs = np.sign(components[np.argmax(np.abs(components), axis=0), np.arange(k)])
    components = components * np.where(signs == 0, 1.0, signs)
    explained = np.clip(eigvals[order], 0.0, None)
    return PCAModel(mean, components, explained, float(np.clip(eigvals, 0.0, None).sum()))


def pca_transform(model, x):
    return (np.asarray(x, dtype=float) - model.mean) @ model.components


def pca_inverse_transform(model, z):
    return np.asarray(z, dtype=float) @ model.components.T + model.mean


def pca_fit_transform(x, k=28, train_idx=None):
    model = pca_fit(_rows(np.asarray(x, dtype=float), train_idx), k)
    return model, pca_transform(model, x)


def scale_transform(model, x):
    x = np.asarray(x, dtype=float)
    safe = np.where(model.std > 0, model.std, 1.0)
    return np.where(model.std > 0, (x - model.mean) / safe, 0.0)


def standard_scale(x, train_idx=None):
    """
    (x - mean) / std per feature with moments from the training rows; constant features
    become 0.

    >>> scaled, model = standard_scale(np.array([[1.0, 5.0], [3.0, 5.0]]))
    >>> scaled.tolist()
    [[-1.0, 0.0], [1.0, 0.0]]
    """
    x = np.asarray(x, dtype=float)
    train = _rows(x, train_idx)
    model = ScalerModel(train.mean(axis=0), train.std(axis=0))
    return scale_transform(model, x), model


def one_hot(dataset, columns=None, train_idx=None):
    """
    Replaces each categorical column with one indicator column per category seen in the
    training rows. Categories never seen in training encode as all zeros.

    Returns the widened dataset and the fitted vocabularies {column: [category, ...]}.
    """
    columns = list(dataset.categories) if columns is None else list(columns)
    unknown = [c for c in columns if c not in dataset.names]
    if unknown:
        raise ConfigurationError("Unknown categorical columns " + str(unknown))
    train_rows = np.arange(dataset.n_samples) if train_idx is None else np.asarray(train_idx, dtype=int)

    blocks, names, vocabularies = [], [], {}
    for (j, name) in enumerate(dataset.names):
        column = dataset.features[:, j]
        if name not in columns:
            blocks.append(column[:, None])
            names.append(name)
            continue
        codes = np.unique(column[train_rows]).astype(int)
        labels = dataset.categories.get(name)
        vocab = [labels[c] if labels is not None else str(c) for c in codes]
        blocks.append((column[:, None] == codes[None, :]).astype(float))
        names.extend(name + '=' + v for v in vocab)
        vocabularies[name] = vocab
    features = np.hstack(blocks) if blocks else dataset.features
    categories = {k: v for (k, v) in dataset.categories.items() if k not in columns}
    return dataset._replace(features=features, names=tuple(names), categories=categories), vocabularies


def undersample(data, rng):
    """
    Randomly drops majority-class samples until both classes have the minority count.
    Works on anything with `labels` and `take` (tabular rows or sequence windows).
    """
    labels = np.asarray(data.labels)
    positives = np.flatnonzero(labels == 1)
    negatives = np.flatnonzero(labels == 0)
    if len(positives) == 0 or len(negatives) == 0:
        raise ConfigurationError("Cannot under-sample a single-class dataset")
    (minority, majority) = (positives, negatives) if len(positives) <= len(negatives) else (negatives, positives)
    kept = rng.choice(majority, size=len(minority), replace=False)
    return data.take(np.sort(np.concatenate([minority, kept])))


class PreparedData(namedtuple('PreparedData', ['windows', 'plan', 'input_dim', 'transforms'])):
    """Preprocessed windows with their split; `transforms` holds the fitted parameters as JSON-able data."""
    @property
    def train(self):
        return self.windows.take(self.plan.train)

    @property
    def test(self):
        return self.windows.take(self.plan.test)

    @property
    def clients(self):
        return [self.windows.take(c) for c in self.plan.clients]


def prepare(dataset, data_cfg, seq_len, n_clients, rng):
    """Runs the configured pipeline over a loaded dataset."""
    if data_cfg.should_shuffle():
        dataset = dataset.take(rng.permutation(dataset.n_samples))
    windows = make_windows(dataset, seq_len)
    if data_cfg.pipeline == 'onehot':
        windows = undersample(windows, rng)
    plan = make_split(windows, data_cfg.train_ratio, n_clients, rng)
    train_rows = windows.rows[plan.train].ravel()

    transforms = {'pipeline': data_cfg.pipeline}
    if data_cfg.pipeline == 'pca':
        (pca, features) = pca_fit_transform(dataset.features, data_cfg.pca_components, train_idx=train_rows)
        transforms['pca'] = pca
    else:
        (dataset, vocabularies) = one_hot(dataset, train_idx=train_rows)
        features = dataset.features
        transforms['vocabularies'] = vocabularies
    (features, scaler) = standard_scale(features, train_idx=train_rows)
    transforms['scaler'] = scaler

    windows = SequenceSet(features[windows.rows], windows.labels, windows.rows)
    logger.info("Prepared %d windows of %d x %d (%s pipeline), %d train / %d test, prevalence %.3f",
                windows.n_samples, seq_len, features.shape[1], data_cfg.pipeline, len(plan.train), len(plan.test),
                windows.prevalence())
    return PreparedData(windows, plan, features.shape[1], jsonable(transforms))


def load_dataset(data_cfg, rng, window=3):
    if data_cfg.source == 'csv':
        return load_csv(data_cfg.path, data_cfg.schema if data_cfg.schema is not None else {'label': 'Class'})
    return synth_generate(data_cfg.n_samples, data_cfg.n_features, data_cfg.signal, rng, window=window,
                          fraud_rate=data_cfg.fraud_rate, n_categorical=data_cfg.n_categorical)


def cache_key(data_cfg, seq_len, n_clients, seed):
    """SHA-256 of the canonical JSON form of everything that determines the prepared data."""
    canonical = json.dumps({'data': jsonable(data_cfg), 'seq_len': seq_len, 'n_clients': n_clients, 'seed': seed},
                           sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def save_prepared(prepared, path):
    """
    npz container: windows (sequences, labels, rows), the split plan (train, test and the
    concatenated client shards with their sizes) and the fitted transforms as a JSON string.
    """
    clients = prepared.plan.clients
    np.savez(path,
             format=np.array(CACHE_FORMAT),
             sequences=prepared.windows.sequences,
             labels=prepared.windows.labels,
             rows=prepared.windows.rows,
             train=prepared.plan.train,
             test=prepared.plan.test,
             clients=np.concatenate(clients) if clients else np.zeros(0, dtype=int),
             client_sizes=np.array([len(c) for c in clients], dtype=int),
             input_dim=np.array(prepared.input_dim),
             transforms=np.array(json.dumps(prepared.transforms, sort_keys=True)))


def load_prepared(path):
    with np.load(path, allow_pickle=False) as f:
        if 'format' not in f.files or str(f['format']) != CACHE_FORMAT:
            raise DataFormatError("Not a prepared-data cache: " + str(path))
        windows = SequenceSet(f['sequences'], f['labels'], f['rows'])
        clients = np.split(f['clients'], np.cumsum(f['client_sizes'])[:-1])
        plan = SplitPlan(f['train'], f['test'], clients)
        return PreparedData(windows, plan, int(f['input_dim']), json.loads(str(f['transforms'])))


def prepare_data(data_cfg, seq_len, n_clients, seed, cache_dir=None):
    """
    Loads, preprocesses and splits the configured dataset. With `cache_dir`, the result is
    stored under its cache key and reused on later calls.
    """
    data_cfg.validate()
    path = None
    if cache_dir is not None:
        path = os.path.join(cache_dir, cache_key(data_cfg, seq_len, n_clients, seed) + '.npz')
        if os.path.exists(path):
            logger.info("Using cached prepared data %s", path)
            return load_prepared(path)
    (generator_rng, pipeline_rng) = spawn_generators(seed, 2, purpose=DATA_STREAMS)
    dataset = load_dataset(data_cfg, generator_rng, window=seq_len)
    prepared = prepare(dataset, data_cfg, seq_len, n_clients, pipeline_rng)
    if path is not None:
        os.makedirs(cache_dir, exist_ok=True)
        save_prepared(prepared, path)
        logger.info("Wrote prepared data cache %s", path)
    return prepared
