import math
import numpy as np
import pandas as pd


def chunks(iterator, chunk_size):
    """
    Takes an iterator or collection and breaks it up into chunks of fixed size.

    >>> list(chunks(range(5), 2))
    [[0, 1], [2, 3], [4]]
    """
    chunk = []
    for x in iterator:
        chunk.append(x)
        if len(chunk) == chunk_size:
            yield chunk
            chunk = []
    if len(chunk) > 0:
        yield chunk


def slices(n, chunk_size):
    """
    Contiguous slices covering range(n), at most chunk_size long.

    >>> list(slices(5, 2))
    [slice(0, 2, None), slice(2, 4, None), slice(4, 5, None)]
    """
    for start in range(0, n, chunk_size):
        yield slice(start, min(start + chunk_size, n))


def ceil_fraction(fraction, size):
    """
    ceil(fraction * size), ignoring floating point dust in the product.

    >>> ceil_fraction(0.85, 10)
    9
    >>> ceil_fraction(0.8, 5)
    4
    >>> ceil_fraction(0.7, 10)
    7
    """
    return int(math.ceil(round(fraction * size, 9)))


def spawn_generators(seed, n, purpose=0):
    """
    Independent, reproducible RNG streams derived from one run seed. Different `purpose`
    values give unrelated families of streams for the same seed.
    """
    root = np.random.SeedSequence(seed, spawn_key=(purpose,))
    return [np.random.default_rng(s) for s in root.spawn(n)]


def jsonable(o):
    """
    Recursively converts numpy scalars/arrays and namedtuples into plain JSON types.
    Non-finite floats become None.

    >>> jsonable({'a': np.float64(0.5), 'b': float('nan'), 'c': np.arange(2)})
    {'a': 0.5, 'b': None, 'c': [0, 1]}
    """
    if hasattr(o, '_asdict'):
        return {k: jsonable(v) for (k, v) in o._asdict().items()}
    if isinstance(o, dict):
        return {str(k): jsonable(v) for (k, v) in o.items()}
    if isinstance(o, (list, tuple, set, frozenset)):
        items = sorted(o) if isinstance(o, (set, frozenset)) else o
        return [jsonable(v) for v in items]
    if isinstance(o, np.ndarray):
        return [jsonable(v) for v in o.tolist()]
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, (float, np.floating)):
        return float(o) if math.isfinite(o) else None
    return o


class HasDfDict:
    """
    Records listing their table columns in DICT_COLUMNS.

    >>> from collections import namedtuple
    >>> class Row(namedtuple('Row', ['node_id', 'loss', 'scratch']), HasDfDict):
    ...     DICT_COLUMNS = ['node_id', 'loss']
    >>> Row(3, 0.5, None).df_dict()
    {'node_id': 3, 'loss': 0.5}
    """
    def df_dict(self):
        return {c: getattr(self, c) for c in self.DICT_COLUMNS}


class DictableToDataframe:
    """
    Buffers records (dicts or HasDfDict objects) and turns them into a DataFrame on demand.

    >>> log = DictableToDataframe()
    >>> log.append({'round': 1, 'common': 3})
    >>> log.append({'round': 2, 'common': 0})
    >>> log.get()
       round  common
    0      1       3
    1      2       0
    >>> len(log.records())
    2
    """
    def __init__(self):
        self.buffer = []
        self.history = []
        self.df_result = pd.DataFrame()

    def append(self, o):
        if isinstance(o, dict):
            self.buffer.append(o)
        else:
            self.buffer.append(o.df_dict())

    def records(self):
        return self.history + self.buffer

    def get(self):
        if len(self.buffer) == 0:  # Easy case
            return self.df_result

        result = [o for o in self.buffer]
        self.history.extend(result)
        self.buffer = []
        if len(self.df_result) == 0:
            self.df_result = pd.DataFrame(result)
        else:
            self.df_result = pd.concat([self.df_result, pd.DataFrame(result)], ignore_index=True)
        return self.df_result
