"""Run configuration: INI config files, precedence merging and output
directory checks."""
import configparser
import dataclasses
from dataclasses import dataclass, field
import os

from . import general

COMMANDS = ('gen-data', 'train', 'adapt-eval', 'sweep-shots', 'sweep-steps',
            'compare')
# Keys a config section may hold besides settings fields.
RUN_KEYS = ('seed', 'method', 'dataset', 'val', 'checkpoint', 'k', 'steps',
            'step_values')

_TRUE = ('1', 'true', 'yes', 'on')
_FALSE = ('0', 'false', 'no', 'off')


class ConfigError(ValueError):
    """Invalid configuration file, setting or path."""


def load_config(fn):
    """
    Read an INI config file.

    Parameters
    ----------
    fn : str
        File with one ``[command]`` section per command and ``key = value``
        lines.

    Returns
    -------
    sections : dict
        Command name to a dict of raw string values.

    """
    if not os.path.exists(fn):
        raise ConfigError('config file not found: {}'.format(fn))
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read(fn)
    except configparser.Error as e:
        raise ConfigError('{}: {}'.format(fn, e))
    unknown = [s for s in parser.sections() if s not in COMMANDS]
    if unknown:
        raise ConfigError('{}: unknown section [{}]'.format(fn, unknown[0]))
    return {s: dict(parser.items(s)) for s in parser.sections()}


def coerce(raw, fld, where=''):
    """Parse the string ``raw`` into the type of dataclass field ``fld``."""
    text = raw.strip()
    if text.lower() == 'none':
        return None
    try:
        if fld.type is tuple:
            return tuple(int(v) for v in text.split(',') if v.strip())
        if fld.type is bool:
            if text.lower() in _TRUE:
                return True
            if text.lower() in _FALSE:
                return False
            raise ValueError(text)
        if fld.type in (int, float, str):
            return fld.type(text)
    except ValueError:
        raise ConfigError('{}{}: cannot parse {!r} as {}'.format(
            where, fld.name, raw, fld.type.__name__))
    return text


def check_keys(values, classes, where=''):
    """Raise if a key is neither a run key nor a field of ``classes``."""
    known = set(RUN_KEYS)
    for cls in classes:
        known.update(f.name for f in dataclasses.fields(cls))
    for key in values:
        if key not in known:
            raise ConfigError('{}unknown setting {!r}'.format(where, key))


def merge_settings(cls, file_values=None, set_values=None, flags=None,
                   where=''):
    """
    Build a ``cls`` instance from layered settings.

    Precedence, lowest first: dataclass defaults, ``file_values`` and
    ``set_values`` (raw strings, coerced to the field types), then
    ``flags`` (typed values; None means not given). Keys that ``cls`` does
    not have are ignored.

    """
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for layer in (file_values or {}, set_values or {}):
        for key, raw in layer.items():
            if key in fields:
                kwargs[key] = coerce(raw, fields[key], where)
    for key, value in (flags or {}).items():
        if key in fields and value is not None:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError('{}{}'.format(where, e))


def parse_assignments(items, what='--set'):
    """Split ``KEY=VALUE`` strings into an ordered dict."""
    out = {}
    for item in items or []:
        key, sep, value = item.partition('=')
        if not sep or not key.strip():
            raise ConfigError('{} expects KEY=VALUE, got {!r}'.format(
                what, item))
        out[key.strip()] = value.strip()
    return out


@dataclass
class RunConfig:
    """
    Everything one CLI invocation needs.

    ``settings`` maps a short name (``gen``, ``train``, ``sweep``) to the
    merged settings dataclass of the command.

    """
    command: str
    out: str
    seed: int = 0
    force: bool = False
    method: str = None
    datasets: list = field(default_factory=list)
    val: str = None
    checkpoints: list = field(default_factory=list)
    k: int = None
    steps: int = None
    step_values: tuple = None
    settings: dict = field(default_factory=dict)

    def input_paths(self):
        paths = [p for _, p in self.datasets]
        paths += [p for _, p in self.checkpoints]
        if self.val is not None:
            paths.append(self.val)
        return paths

    def output_path(self, name):
        return os.path.join(self.out, name)

    def validate(self, outputs=()):
        """
        Check inputs exist, create the output directory and refuse to
        overwrite existing outputs unless ``force`` is set.
        """
        for path in self.input_paths():
            if not os.path.exists(path):
                raise ConfigError('input file not found: {}'.format(path))
        if os.path.exists(self.out) and not os.path.isdir(self.out):
            raise ConfigError('output path is not a directory: {}'.format(
                self.out))
        if not self.force:
            existing = [n for n in outputs
                        if os.path.exists(self.output_path(n))]
            if existing:
                raise ConfigError(
                    '{} already exists; use --force to overwrite'.format(
                        self.output_path(existing[0])))
        os.makedirs(self.out, exist_ok=True)

    def manifest_items(self):
        items = [('command', self.command), ('out', self.out),
                 ('seed', self.seed)]
        for key in ('method', 'val', 'k', 'steps', 'step_values'):
            value = getattr(self, key)
            if value is not None:
                items.append((key, value))
        for name, path in self.datasets:
            items.append(('dataset.{}'.format(name), path))
        for name, path in self.checkpoints:
            items.append(('checkpoint.{}'.format(name), path))
        for name, settings in self.settings.items():
            items += general.config_items(settings, prefix=name + '.')
        return items

    def write_manifest(self, name='manifest.txt', extra=()):
        general.write_key_values(self.manifest_items() + list(extra),
                                 self.output_path(name))
