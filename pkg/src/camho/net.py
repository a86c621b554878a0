"""From-scratch convolutional Q-network on numpy, double precision.

Architecture (defaults): two valid-padding ReLU conv layers (8 kernels of
8x8 stride 4, then 16 kernels of 4x4 stride 2), flatten, concatenation of
side features (one-hot association + normalized disruption counter), a
64-unit ReLU dense layer, and a linear output with one Q-value per BS.

Convolutions are evaluated as im2col + matmul. backward() returns the
vector-Jacobian product of upstream_grad . output with respect to every
parameter; it never computes input gradients for the first layer, and the
whole module owns no RNG state except where a seed is passed explicitly.

Encoding convention: channels are camera-major, then recency (camera 1
newest, camera 1 one epoch back, ..., camera 2 newest, ...). The conv
output is flattened position-major. Checkpoints round-trip bit-exactly.
"""

import io
import json
import zipfile
from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional

import numpy as np

from .process import DecisionState, ProcessConfig

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class NetConfig:
    in_channels: int
    frame_height: int
    frame_width: int
    num_actions: int
    side_features: int
    conv1_filters: int = 8
    conv1_kernel: int = 8
    conv1_stride: int = 4
    conv2_filters: int = 16
    conv2_kernel: int = 4
    conv2_stride: int = 2
    hidden_units: int = 64

    def __post_init__(self):
        for name in ("in_channels", "frame_height", "frame_width", "num_actions",
                     "conv1_filters", "conv1_kernel", "conv1_stride",
                     "conv2_filters", "conv2_kernel", "conv2_stride", "hidden_units"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if self.side_features < 0:
            raise ValueError("side_features must be non-negative")
        if self.frame_height < self.conv1_kernel or self.frame_width < self.conv1_kernel:
            raise ValueError("frame smaller than the first conv kernel")
        if min(self.conv1_out_hw) < self.conv2_kernel:
            raise ValueError("first conv output smaller than the second conv kernel")

    @property
    def conv1_out_hw(self):
        return (
            (self.frame_height - self.conv1_kernel) // self.conv1_stride + 1,
            (self.frame_width - self.conv1_kernel) // self.conv1_stride + 1,
        )

    @property
    def conv2_out_hw(self):
        h1, w1 = self.conv1_out_hw
        return (
            (h1 - self.conv2_kernel) // self.conv2_stride + 1,
            (w1 - self.conv2_kernel) // self.conv2_stride + 1,
        )

    @property
    def conv_feature_count(self) -> int:
        h2, w2 = self.conv2_out_hw
        return self.conv2_filters * h2 * w2

    @classmethod
    def for_problem(cls, cfg: ProcessConfig, frame_shape, cameras=None, **overrides):
        n_cams = len(cameras) if cameras is not None else cfg.num_cameras
        return cls(
            in_channels=n_cams * cfg.stack_depth,
            frame_height=frame_shape[0],
            frame_width=frame_shape[1],
            num_actions=cfg.num_bs,
            side_features=cfg.num_bs + 1,
            **overrides,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "NetConfig":
        return cls(**data)


_PARAM_KEYS = ("w1", "b1", "w2", "b2", "w3", "b3", "w4", "b4")


def init_params(cfg: NetConfig, seed: int) -> dict:
    """He-normal weights (scaled-down linear output layer), zero biases."""
    rng = np.random.default_rng(seed)
    fan1 = cfg.in_channels * cfg.conv1_kernel ** 2
    fan2 = cfg.conv1_filters * cfg.conv2_kernel ** 2
    fan3 = cfg.conv_feature_count + cfg.side_features
    params = {
        "w1": rng.standard_normal((fan1, cfg.conv1_filters)) * np.sqrt(2.0 / fan1),
        "b1": np.zeros(cfg.conv1_filters),
        "w2": rng.standard_normal((fan2, cfg.conv2_filters)) * np.sqrt(2.0 / fan2),
        "b2": np.zeros(cfg.conv2_filters),
        "w3": rng.standard_normal((fan3, cfg.hidden_units)) * np.sqrt(2.0 / fan3),
        "b3": np.zeros(cfg.hidden_units),
        "w4": rng.standard_normal((cfg.hidden_units, cfg.num_actions))
        * np.sqrt(1.0 / cfg.hidden_units),
        "b4": np.zeros(cfg.num_actions),
    }
    return params


def param_count(params: dict) -> int:
    return sum(v.size for v in params.values())


def _im2col(x: np.ndarray, k: int, s: int):
    """(B, C, H, W) -> (B*oh*ow, C*k*k) patch matrix plus (oh, ow)."""
    b, c, _, _ = x.shape
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
    oh, ow = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * oh * ow, c * k * k)
    return cols, oh, ow


def _col2im(dcols: np.ndarray, shape, k: int, s: int, oh: int, ow: int) -> np.ndarray:
    """Scatter-add patch gradients back to (B, C, H, W)."""
    b, c, h, w = shape
    out = np.zeros((b, c, h, w))
    blocks = dcols.reshape(b, oh, ow, c, k, k)
    for ki in range(k):
        for kj in range(k):
            out[:, :, ki : ki + s * oh : s, kj : kj + s * ow : s] += (
                blocks[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
            )
    return out


class _Cache(NamedTuple):
    batch: int
    cols1: np.ndarray
    mask1: np.ndarray
    cols2: np.ndarray
    mask2: np.ndarray
    flat: np.ndarray
    mask3: np.ndarray
    hidden: np.ndarray


def conv_features(params: dict, cfg: NetConfig, images: np.ndarray,
                  cache_parts: Optional[list] = None) -> np.ndarray:
    """Conv trunk only: (B, C, H, W) float64 -> (B, conv_feature_count)."""
    cols1, _, _ = _im2col(images, cfg.conv1_kernel, cfg.conv1_stride)
    return conv_features_from_cols(params, cfg, images.shape[0], cols1, cache_parts)


def conv_features_from_cols(params: dict, cfg: NetConfig, batch: int,
                            cols1: np.ndarray,
                            cache_parts: Optional[list] = None) -> np.ndarray:
    """Conv trunk applied to precomputed first-layer im2col rows.

    cols1 holds (batch * prod(conv1_out_hw), in_channels * kernel^2) window
    rows. Since frames are float32 at the source, callers may keep pooled
    rows in float32 and cast here without changing a single bit relative
    to the image path.
    """
    oh1, ow1 = cfg.conv1_out_hw
    if cols1.dtype != np.float64:
        cols1 = cols1.astype(np.float64)
    z1 = cols1 @ params["w1"]
    z1 += params["b1"]
    mask1 = z1 > 0.0
    a1 = np.where(mask1, z1, 0.0)
    a1_img = a1.reshape(batch, oh1, ow1, cfg.conv1_filters).transpose(0, 3, 1, 2)
    cols2, oh2, ow2 = _im2col(a1_img, cfg.conv2_kernel, cfg.conv2_stride)
    z2 = cols2 @ params["w2"]
    z2 += params["b2"]
    mask2 = z2 > 0.0
    a2 = np.where(mask2, z2, 0.0)
    feats = a2.reshape(batch, cfg.conv_feature_count)
    if cache_parts is not None:
        cache_parts.extend([cols1, mask1, cols2, mask2, (oh1, ow1, oh2, ow2)])
    return feats


def head_q(params: dict, cfg: NetConfig, feats: np.ndarray, side: np.ndarray,
           cache_parts: Optional[list] = None) -> np.ndarray:
    """Dense head: conv features + side features -> (B, num_actions)."""
    flat = np.concatenate([feats, side], axis=1)
    z3 = flat @ params["w3"]
    z3 += params["b3"]
    mask3 = z3 > 0.0
    hidden = np.where(mask3, z3, 0.0)
    q = hidden @ params["w4"]
    q += params["b4"]
    if cache_parts is not None:
        cache_parts.extend([flat, mask3, hidden])
    return q


def forward(params: dict, cfg: NetConfig, images, side: np.ndarray,
            want_cache: bool = False, cols1: Optional[np.ndarray] = None):
    """Q-values for a batch. images (B,C,H,W), side (B,side_features).

    When cols1 is given the first-layer im2col rows are taken as-is and
    images is ignored (may be None); results are identical to the image
    path for rows produced by the same windowing.
    """
    if side.ndim != 2 or side.shape[1] != cfg.side_features:
        raise ValueError(f"side shape {side.shape} does not match the architecture")
    batch = side.shape[0]
    parts: Optional[list] = [] if want_cache else None
    if cols1 is not None:
        oh1, ow1 = cfg.conv1_out_hw
        fan1 = cfg.in_channels * cfg.conv1_kernel ** 2
        if cols1.shape != (batch * oh1 * ow1, fan1):
            raise ValueError(
                f"cols1 shape {cols1.shape}, expected {(batch * oh1 * ow1, fan1)}"
            )
        feats = conv_features_from_cols(params, cfg, batch, cols1, parts)
    else:
        if images.ndim != 4 or images.shape[1:] != (cfg.in_channels, cfg.frame_height,
                                                    cfg.frame_width):
            raise ValueError(
                f"images shape {images.shape} does not match the architecture"
            )
        if images.shape[0] != batch:
            raise ValueError("images and side disagree on batch size")
        feats = conv_features(params, cfg, images, parts)
    q = head_q(params, cfg, feats, side, parts)
    if not want_cache:
        return q
    cols1, mask1, cols2, mask2, _dims, flat, mask3, hidden = parts
    cache = _Cache(batch, cols1, mask1, cols2, mask2, flat, mask3, hidden)
    return q, cache


def backward(params: dict, cfg: NetConfig, cache: _Cache, dq: np.ndarray) -> dict:
    """Gradients of sum(dq * q) with respect to every parameter."""
    b = cache.batch
    oh1, ow1 = cfg.conv1_out_hw
    oh2, ow2 = cfg.conv2_out_hw

    grads = {}
    grads["w4"] = cache.hidden.T @ dq
    grads["b4"] = dq.sum(axis=0)
    dhidden = dq @ params["w4"].T
    dz3 = np.where(cache.mask3, dhidden, 0.0)
    grads["w3"] = cache.flat.T @ dz3
    grads["b3"] = dz3.sum(axis=0)
    dflat = dz3 @ params["w3"].T

    dfeats = dflat[:, : cfg.conv_feature_count]
    dz2 = np.where(cache.mask2, dfeats.reshape(b * oh2 * ow2, cfg.conv2_filters), 0.0)
    grads["w2"] = cache.cols2.T @ dz2
    grads["b2"] = dz2.sum(axis=0)
    dcols2 = dz2 @ params["w2"].T
    da1 = _col2im(dcols2, (b, cfg.conv1_filters, oh1, ow1),
                  cfg.conv2_kernel, cfg.conv2_stride, oh2, ow2)
    dz1 = np.where(cache.mask1,
                   da1.transpose(0, 2, 3, 1).reshape(b * oh1 * ow1, cfg.conv1_filters),
                   0.0)
    grads["w1"] = cache.cols1.T @ dz1
    grads["b1"] = dz1.sum(axis=0)
    return grads


class RmsProp:
    """RMSProp with an optional plain-gradient mode; deterministic given state.

    mode="rmsprop": acc <- rho*acc + (1-rho)*g^2; p -= lr * g / (sqrt(acc)+eps)
    mode="sgd":     p -= lr * g
    """

    def __init__(self, learning_rate: float, rho: float = 0.95, eps: float = 1e-6,
                 mode: str = "rmsprop"):
        if learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 < rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        if eps <= 0:
            raise ValueError("eps must be positive")
        if mode not in ("rmsprop", "sgd"):
            raise ValueError(f"unknown mode {mode!r}")
        self.learning_rate = learning_rate
        self.rho = rho
        self.eps = eps
        self.mode = mode
        self.acc = {}

    def step(self, params: dict, grads: dict):
        """Update params in place."""
        for key in sorted(params):
            g = grads[key]
            if self.mode == "sgd":
                params[key] -= self.learning_rate * g
                continue
            if key not in self.acc:
                self.acc[key] = np.zeros_like(params[key])
            acc = self.acc[key]
            acc *= self.rho
            acc += (1.0 - self.rho) * np.square(g)
            params[key] -= self.learning_rate * g / (np.sqrt(acc) + self.eps)


def grad_check(params: dict, cfg: NetConfig, images: np.ndarray, side: np.ndarray,
               seed: int = 0, num_coords: int = 200, step: float = 1e-3,
               corrupt=None) -> dict:
    """Compare backward() against central differences on random coordinates.

    Perturbs num_coords randomly chosen parameter entries by +-step and
    measures |fd - analytic| / max(|fd| + |analytic|, 1e-6). `corrupt`, if
    given, is applied to the analytic gradient dict first (used to verify
    the check catches broken gradients).
    """
    rng = np.random.default_rng(seed)
    upstream = rng.standard_normal((images.shape[0], cfg.num_actions))
    _, cache = forward(params, cfg, images, side, want_cache=True)
    analytic = backward(params, cfg, cache, upstream)
    if corrupt is not None:
        analytic = corrupt(analytic)

    sizes = [(k, params[k].size) for k in _PARAM_KEYS]
    total = sum(s for _, s in sizes)
    chosen = rng.choice(total, size=min(num_coords, total), replace=False)

    def locate(flat_index):
        for key, size in sizes:
            if flat_index < size:
                return key, flat_index
            flat_index -= size
        raise AssertionError("unreachable")

    errors = np.empty(len(chosen))
    for i, flat_index in enumerate(chosen):
        key, idx = locate(int(flat_index))
        original = params[key].flat[idx]
        params[key].flat[idx] = original + step
        plus = float(np.sum(upstream * forward(params, cfg, images, side)))
        params[key].flat[idx] = original - step
        minus = float(np.sum(upstream * forward(params, cfg, images, side)))
        params[key].flat[idx] = original
        fd = (plus - minus) / (2.0 * step)
        an = float(analytic[key].flat[idx])
        errors[i] = abs(fd - an) / max(abs(fd) + abs(an), 1e-6)
    return {
        "max_rel_error": float(errors.max()),
        "mean_rel_error": float(errors.mean()),
        "num_coords": len(chosen),
    }


# -- state encoding ----------------------------------------------------------


class EncodedState(NamedTuple):
    images: np.ndarray  # (C, H, W) float64
    side: np.ndarray    # (side_features,) float64


def encode_state(state: DecisionState, cfg: ProcessConfig, cameras=None) -> EncodedState:
    """Stack a decision state into network inputs.

    cameras selects a subset of 1-based camera ids (default: all); channel
    order is camera-major, then recency within each camera.
    """
    if cameras is None:
        cameras = tuple(range(1, cfg.num_cameras + 1))
    for i in cameras:
        if not 1 <= i <= cfg.num_cameras:
            raise ValueError(f"camera {i} outside 1..{cfg.num_cameras}")
    sel = state.frames[np.asarray(cameras) - 1]
    n_ch = len(cameras) * cfg.stack_depth
    images = sel.reshape(n_ch, sel.shape[2], sel.shape[3]).astype(np.float64)
    side = np.zeros(cfg.num_bs + 1)
    side[state.assoc_bs - 1] = 1.0
    side[cfg.num_bs] = state.counter / max(1, cfg.disruption_epochs)
    return EncodedState(images=images, side=side)


# -- checkpoints --------------------------------------------------------------


def save_checkpoint(path, params: dict, cfg: NetConfig, meta: Optional[dict] = None):
    """Write parameters plus architecture/metadata; bit-exact round-trip.

    The container is a plain npz, assembled by hand with a fixed zip
    timestamp and entry order so identical runs produce identical bytes
    (np.savez would stamp the current time into each entry).
    """
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "net_config": cfg.to_dict(),
        "meta": meta or {},
    }
    entries = [("__header__", np.array(json.dumps(header, sort_keys=True)))]
    entries += [(f"param_{k}", np.ascontiguousarray(params[k])) for k in _PARAM_KEYS]
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in entries:
            buf = io.BytesIO()
            np.lib.format.write_array(buf, arr, allow_pickle=False)
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


def load_checkpoint(path):
    """Read (params, NetConfig, meta) written by save_checkpoint."""
    with np.load(path, allow_pickle=False) as data:
        if "__header__" not in data:
            raise ValueError(f"{path} is not a checkpoint file")
        header = json.loads(str(data["__header__"][()]))
        version = header.get("format_version")
        if version != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(
                f"unsupported checkpoint format_version {version!r}, "
                f"this build reads {CHECKPOINT_FORMAT_VERSION}"
            )
        params = {k: np.array(data[f"param_{k}"], dtype=np.float64) for k in _PARAM_KEYS}
    cfg = NetConfig.from_dict(header["net_config"])
    return params, cfg, header.get("meta", {})
