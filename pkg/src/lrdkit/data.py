"""Seeded synthetic classification sets and raw-array ingestion."""

import os

import numpy as np


def gaussian_blobs(n=512, dim=8, classes=2, spread=0.5, seed=0):
    """Isotropic Gaussian clusters around random unit-scale centres."""
    rng = np.random.default_rng(seed)
    centres = rng.standard_normal((classes, dim)) * 2.0
    y = rng.integers(0, classes, size=n)
    X = centres[y] + spread * rng.standard_normal((n, dim))
    return X, y


def separable(n=256, dim=4, seed=0, margin=0.5):
    """Two classes split by a random hyperplane with a guaranteed margin."""
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(dim)
    w /= np.linalg.norm(w)
    X = rng.standard_normal((n, dim))
    s = X @ w
    y = (s > 0).astype(np.int64)
    X += np.where(y == 1, margin, -margin)[:, None] * w
    return X, y


def stripes(n=512, size=8, channels=3, classes=3, noise=0.3, seed=0):
    """Images of horizontal, vertical or diagonal stripes with random phase."""
    if not 2 <= classes <= 4:
        raise ValueError("stripes supports 2 to 4 classes")
    rng = np.random.default_rng(seed)
    y = rng.integers(0, classes, size=n)
    ii, jj = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    coords = [ii, jj, ii + jj, ii - jj]
    period = rng.integers(2, 4, size=n)
    phase = rng.uniform(0, 2 * np.pi, size=n)
    X = np.empty((n, channels, size, size))
    for i in range(n):
        base = np.sin(2 * np.pi * coords[y[i]] / period[i] + phase[i])
        X[i] = base + noise * rng.standard_normal((channels, size, size))
    return X, y


def load_array_dir(path):
    """Read ``X.npy`` (inputs) and ``y.npy`` (integer labels) from a directory."""
    X = np.load(os.path.join(path, "X.npy"))
    y = np.load(os.path.join(path, "y.npy"))
    if len(X) != len(y):
        raise ValueError(f"{path}: X has {len(X)} rows but y has {len(y)}")
    return X.astype(np.float64), y.astype(np.int64)


GENERATORS = {"blobs": gaussian_blobs, "separable": separable, "stripes": stripes}


def parse_spec(spec):
    """``"name:key=value,..."`` -> ``(name, kwargs)``."""
    name, _, rest = spec.partition(":")
    kwargs = {}
    if name == "dir":
        return name, {"path": rest}
    for item in filter(None, rest.split(",")):
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"bad dataset option {item!r}; expected key=value")
        try:
            kwargs[key] = int(value)
        except ValueError:
            kwargs[key] = float(value)
    return name, kwargs


def make_dataset(spec, seed=0):
    name, kwargs = parse_spec(spec)
    if name == "dir":
        return load_array_dir(kwargs["path"])
    if name not in GENERATORS:
        raise ValueError(f"unknown dataset {name!r}; choose from {sorted(GENERATORS)} or dir:PATH")
    kwargs.setdefault("seed", seed)
    return GENERATORS[name](**kwargs)
