import hashlib
import math
import os
import sys
from typing import List, Optional, Sequence

import crayons
import numpy as np

import pyrejective
from pyrejective.errors import DataFileError, ValidationError


def format_number(value) -> str:
    """17 significant digits, enough for an exact float round-trip"""
    if isinstance(value, (bool, np.bool_)):
        return '1' if value else '0'
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if value is None:
        return ''
    return '%.17g' % float(value)


def parse_float_list(text: str, name: str = 'list') -> List[float]:
    try:
        values = [float(v) for v in text.split(',') if v.strip() != '']
    except ValueError:
        raise ValidationError(f'{name} must be a comma separated list of numbers', {name: text})
    if len(values) == 0:
        raise ValidationError(f'{name} is empty', {name: text})
    return values


def parse_int_list(text: str, name: str = 'list') -> List[int]:
    values = parse_float_list(text, name)
    if any(v != int(v) for v in values):
        raise ValidationError(f'{name} must hold integers', {name: text})
    return [int(v) for v in values]


def floats_from_file(path) -> List[float]:
    """one-column file of numbers, blank lines and a non-numeric header ignored"""
    if not os.path.exists(path):
        raise DataFileError(f'File {path} not found', {'path': str(path)}, code='FILE_NOT_FOUND')
    values = list()
    with open(path, 'r') as f:
        for lineno, line in enumerate(f, start=1):
            text = line.split(',')[0].strip()
            if len(text) == 0:
                continue
            try:
                values.append(float(text))
            except ValueError:
                if lineno == 1:
                    continue
                raise DataFileError(f'line {lineno}: "{text}" is not a number', {'path': str(path), 'line': lineno})
    return values


def file_digest(path) -> str:
    sha = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(65536), b''):
            sha.update(chunk)
    return sha.hexdigest()


def fit_loglog_slope(sizes: Sequence[float], values: Sequence[float]) -> Optional[float]:
    """least-squares slope of log(value) against log(size); None when it cannot be fitted"""
    pairs = [(s, v) for s, v in zip(sizes, values) if s > 0 and v > 0 and math.isfinite(v)]
    if len(pairs) < 2:
        return None
    x = np.log([s for s, _ in pairs])
    y = np.log([v for _, v in pairs])
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


def log(*args, **kwargs):
    """verbose-only diagnostics, kept off stdout so CSV output stays clean"""
    if pyrejective.verbose:
        print(*args, file=sys.stderr, **kwargs)
        sys.stderr.flush()


def warn(message: str):
    if pyrejective.verbose:
        print(crayons.yellow(message), file=sys.stderr)
        sys.stderr.flush()


def dump_stats(rows: List[tuple]):
    """print (label, value) summary pairs as an aligned table"""

    if len(rows) == 0:
        return
    width = len(max((label for label, _ in rows), key=len))
    print('-' * (width + 24))
    for label, value in rows:
        text = format_number(value) if not isinstance(value, str) else value
        print(f'{label.rjust(width)}  {text}')
    print()
