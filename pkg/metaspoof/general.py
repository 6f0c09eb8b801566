import dataclasses

import numpy as np
import pandas as pd


def chunks(l, n):
    """Yield successive n-sized chunks from l."""
    for i in range(0, len(l), n):
        yield l[i:i + n]


def derive_seed(*keys):
    """
    Derive a 64-bit seed from a tuple of non-negative integers.

    The result depends only on ``keys``, never on the order in which seeds
    are requested, so jobs keyed this way can run in any order or in
    parallel.

    """
    ss = np.random.SeedSequence([int(k) for k in keys])
    return int(ss.generate_state(1, np.uint64)[0])


def format_value(value):
    """Render a setting the way it is written to key=value files."""
    if isinstance(value, (tuple, list)):
        return ','.join(format_value(v) for v in value)
    if value is None:
        return 'none'
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_items(config, prefix=''):
    """Flatten a dataclass instance to sorted (key, formatted value) pairs."""
    items = []
    for field in dataclasses.fields(config):
        items.append((prefix + field.name,
                      format_value(getattr(config, field.name))))
    return sorted(items)


def write_key_values(items, fn):
    """
    Write key=value lines.

    Parameters
    ----------
    items : dict or list of (key, value)
        Settings to write. Keys are written in sorted order.

    fn : str
        Output file.

    """
    if isinstance(items, dict):
        items = list(items.items())
    with open(fn, 'w') as f:
        for k, v in sorted(items):
            f.write('{}={}\n'.format(k, format_value(v)))


def read_key_values(fn):
    """Read a key=value file into a pandas.Series of strings."""
    with open(fn) as f:
        pairs = [line.rstrip('\n').split('=', 1) for line in f
                 if line.strip()]
    bad = [p[0] for p in pairs if len(p) != 2]
    if bad:
        raise ValueError('{}: not a key=value line: {!r}'.format(fn, bad[0]))
    return pd.Series([v for _, v in pairs], index=[k for k, _ in pairs],
                     dtype=object)
