"""Datasets: IDX files, synthetic Gaussian classes and non-i.i.d. partitioning."""
import struct
from dataclasses import dataclass

import numpy as np

IDX_UBYTE = 0x08
IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
MAX_ELEMENTS = 2**31 - 1


class IdxError(ValueError):
    pass


class BadMagicError(IdxError):
    pass


class TruncatedError(IdxError):
    pass


class DimensionOverflowError(IdxError):
    pass


class TrailingBytesError(IdxError):
    pass


def parse_idx(data, max_elements=MAX_ELEMENTS):
    """Parse an unsigned-byte IDX blob into a uint8 array of its declared shape."""
    data = bytes(data)
    if len(data) < 4:
        raise TruncatedError("missing magic number")
    zero, dtype, ndim = struct.unpack(">HBB", data[:4])
    if zero != 0 or dtype != IDX_UBYTE or ndim == 0:
        raise BadMagicError(f"bad magic {data[:4].hex()}")
    header = 4 + 4 * ndim
    if len(data) < header:
        raise TruncatedError("truncated dimension header")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    count = 1
    for d in dims:
        count *= d
        if count > max_elements:
            raise DimensionOverflowError(f"dimensions {dims} exceed {max_elements} elements")
    payload = len(data) - header
    if payload < count:
        raise TruncatedError(f"payload has {payload} bytes, expected {count}")
    if payload > count:
        raise TrailingBytesError(f"{payload - count} bytes after payload")
    return np.frombuffer(data, dtype=np.uint8, offset=header).reshape(dims).copy()


def write_idx(array):
    a = np.asarray(array)
    if a.dtype != np.uint8:
        raise IdxError("only unsigned byte arrays are supported")
    if a.ndim == 0 or a.ndim > 255:
        raise IdxError("array must have 1..255 dimensions")
    head = struct.pack(">HBB", 0, IDX_UBYTE, a.ndim) + struct.pack(f">{a.ndim}I", *a.shape)
    return head + np.ascontiguousarray(a).tobytes()


def read_idx(path):
    with open(path, "rb") as f:
        return parse_idx(f.read())


def write_idx_file(path, array):
    with open(path, "wb") as f:
        f.write(write_idx(array))


@dataclass
class LabeledDataset:
    points: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.points.ndim != 2:
            raise ValueError("points must be a 2-D array")
        if len(self.points) != len(self.labels):
            raise ValueError("points and labels differ in length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError("labels outside [0, class_count)")

    @property
    def dim(self):
        return self.points.shape[1]

    def __len__(self):
        return len(self.points)

    def subset(self, idx):
        return LabeledDataset(self.points[idx], self.labels[idx], self.class_count)


def idx_dataset(images, labels, class_count=None):
    """Flatten an IDX image tensor and scale pixels to [0, 1]."""
    images = np.asarray(images)
    labels = np.asarray(labels, dtype=int)
    if class_count is None:
        class_count = int(labels.max()) + 1
    return LabeledDataset(images.reshape(len(images), -1) / 255.0, labels, class_count)


def _class_means(class_count, dim, separation, rng, max_tries=1000):
    if class_count == 1:
        return np.zeros((1, dim))
    if dim >= class_count:
        # scaled basis vectors under a random rotation: all pairwise distances equal
        Q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        return (separation / np.sqrt(2.0)) * Q[:, :class_count].T
    for _ in range(max_tries):
        means = rng.standard_normal((class_count, dim)) * separation
        diff = means[:, None, :] - means[None, :, :]
        d = np.sqrt((diff ** 2).sum(-1))
        if d[np.triu_indices(class_count, 1)].min() >= separation:
            return means
    raise ValueError(f"cannot place {class_count} means {separation} apart in {dim} dimensions")


def synth_generate(class_count, per_class, dim, sigma, class_separation, rng):
    """Isotropic Gaussian classes around well-separated means."""
    if class_count < 1 or per_class < 1 or dim < 1:
        raise ValueError("sizes must be positive")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    means = _class_means(class_count, dim, class_separation, rng)
    labels = np.repeat(np.arange(class_count), per_class)
    points = means[labels] + sigma * rng.standard_normal((len(labels), dim))
    return LabeledDataset(points, labels, class_count)


def assign_labels(device_count, labels_per_device, class_count, rng):
    """Label sets per device, round-robin over a shuffled label order.

    Each device takes the least-used labels, ties broken by cyclic distance
    from its start position in the order. Starts advance by
    ``labels_per_device`` and slip by one per full pass, so repeated passes
    pair labels differently. Label usage counts differ by at most one.
    """
    if not 1 <= labels_per_device <= class_count:
        raise ValueError("labels_per_device must lie in [1, class_count]")
    perm = rng.permutation(class_count)
    used = np.zeros(class_count, dtype=int)
    out = []
    for d in range(device_count):
        start = d * labels_per_device
        start = (start + start // class_count) % class_count
        offset = (np.arange(class_count) - start) % class_count
        order = np.lexsort((offset, used[perm]))[:labels_per_device]
        picked = perm[order]
        used[picked] += 1
        out.append([int(c) for c in picked])
    return out


def partition_noniid(dataset, device_count, labels_per_device, per_device_size, rng, return_indices=False):
    """Disjoint per-device subsets, each drawn from ``labels_per_device`` labels.

    Each device takes an equal share (remainder to its first labels) from the
    pool of each of its labels, without replacement.
    """
    label_sets = assign_labels(device_count, labels_per_device, dataset.class_count, rng)
    pools = {c: list(rng.permutation(np.flatnonzero(dataset.labels == c))) for c in range(dataset.class_count)}
    demand = np.zeros(dataset.class_count, dtype=int)
    shares = []
    for labels in label_sets:
        base, extra = divmod(per_device_size, labels_per_device)
        share = [base + (1 if k < extra else 0) for k in range(labels_per_device)]
        for c, s in zip(labels, share):
            demand[c] += s
        shares.append(share)
    for c in range(dataset.class_count):
        if demand[c] > len(pools[c]):
            raise ValueError(f"label {c}: need {demand[c]} points, only {len(pools[c])} available")
    parts, index_sets = [], []
    for labels, share in zip(label_sets, shares):
        idx = []
        for c, s in zip(labels, share):
            idx.extend(pools[c][:s])
            pools[c] = pools[c][s:]
        idx = np.array(sorted(int(i) for i in idx), dtype=int)
        index_sets.append(idx)
        parts.append(dataset.subset(idx))
    return (parts, index_sets) if return_indices else parts


def quantize(points, low=None, high=None):
    """Min-max scale real points to uint8 for IDX export."""
    P = np.asarray(points, dtype=float)
    low = P.min() if low is None else low
    high = P.max() if high is None else high
    scale = (high - low) or 1.0
    return np.clip(np.rint((P - low) / scale * 255.0), 0, 255).astype(np.uint8)


def _split_eval(dataset, eval_per_class, rng):
    """Hold out ``eval_per_class`` points per class."""
    train_idx, eval_idx = [], []
    for c in range(dataset.class_count):
        idx = rng.permutation(np.flatnonzero(dataset.labels == c))
        eval_idx.extend(idx[:eval_per_class])
        train_idx.extend(idx[eval_per_class:])
    return dataset.subset(np.sort(train_idx)), dataset.subset(np.sort(eval_idx))


def _halve(dataset):
    idx = np.arange(len(dataset))
    return dataset.subset(idx[0::2]), dataset.subset(idx[1::2])


def synthetic_pool(cfg):
    """Generate the synthetic source for ``cfg``: (device pool, held-out set)."""
    rng = np.random.default_rng([cfg.seed, 7])
    per_class = cfg.per_class
    if per_class is None:
        rounds = -(-cfg.devices * cfg.labels_per_device // cfg.classes)
        per_class = rounds * -(-cfg.per_device_size // cfg.labels_per_device)
    full = synth_generate(cfg.classes, per_class + cfg.eval_per_class, cfg.dim,
                          cfg.sigma, cfg.separation, rng)
    return _split_eval(full, cfg.eval_per_class, rng)


def assemble_data(cfg):
    """Device partitions and probe train/test sets for a run configuration.

    Returns ``(device_parts, probe_train, probe_test)``.
    """
    if cfg.source == "synthetic":
        pool, held = synthetic_pool(cfg)
    else:
        pool = idx_dataset(read_idx(cfg.idx_images), read_idx(cfg.idx_labels), cfg.classes)
        if cfg.eval_idx_images:
            held = idx_dataset(read_idx(cfg.eval_idx_images), read_idx(cfg.eval_idx_labels), cfg.classes)
        else:
            pool, held = _split_eval(pool, cfg.eval_per_class, np.random.default_rng([cfg.seed, 7]))
    parts = partition_noniid(pool, cfg.devices, cfg.labels_per_device, cfg.per_device_size,
                             np.random.default_rng([cfg.seed, 8]))
    probe_train, probe_test = _halve(held)
    return parts, probe_train, probe_test
