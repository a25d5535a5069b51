"""Generator and discriminator networks over pre-extracted feature vectors.

Three generators (label, image, text) share one output recipe: a relu MLP
whose 512-wide penultimate activation is the semantic feature, followed by
an affine head whose first k columns pass through tanh (real-valued hash)
and whose remaining c columns pass through sigmoid (label predictions).
The text generator first replaces its input with a multi-scale fusion:
five stride-1 average-pooling maps (windows 1, 2, 3, 5, 10, edge windows
truncated) combined per position by five learned weights.  Discriminators
are relu MLPs with a linear scalar head that score semantic features.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, List, Sequence, Tuple, Union

import numpy as np

from . import ndcore as nd
from .errors import ContractError, FormatError, ShapeError
from .ndcore import Parameter, Tape, Var

MODEL_MAGIC = b"XMHM"
MODEL_VERSION = 1

SEMANTIC_WIDTH = 512
BASE_HIDDEN = 4096
MS_WINDOWS = (1, 2, 3, 5, 10)
FUSION_INIT = 0.2

Layer = Tuple[Parameter, Parameter]


def hidden_width(width_factor: float) -> int:
    """Hidden layer width: 4096 scaled by the configured factor."""
    if width_factor <= 0.0:
        raise ContractError(f"width_factor must be positive, got {width_factor}")
    return max(1, int(round(BASE_HIDDEN * width_factor)))


def init_layers(dims: Sequence[int], rng: np.random.Generator, prefix: str = "") -> List[Layer]:
    """Affine layers with Xavier-uniform weights and zero biases.

    Each weight entry is uniform in [-r, r] with r = sqrt(6 / (fan_in + fan_out)).
    """
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ContractError(f"layer dims must be positive with depth >= 1, got {dims}")
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        r = np.sqrt(6.0 / (fan_in + fan_out))
        w = Parameter(rng.uniform(-r, r, (fan_in, fan_out)), name=f"{prefix}w{i}")
        b = Parameter(np.zeros((1, fan_out)), name=f"{prefix}b{i}")
        layers.append((w, b))
    return layers


def pooling_matrix(d: int, window: int) -> np.ndarray:
    """Linear map of stride-1 average pooling with truncated edge windows.

    Row p averages positions [p - (window-1)//2, p + window//2] clipped to
    [0, d-1], so even windows lean one step to the right and window 1 is
    the identity.
    """
    if d < 1 or window < 1:
        raise ContractError(f"pooling needs positive sizes, got d={d}, window={window}")
    mat = np.zeros((d, d))
    for p in range(d):
        lo = max(0, p - (window - 1) // 2)
        hi = min(d - 1, p + window // 2)
        mat[p, lo : hi + 1] = 1.0 / (hi - lo + 1)
    return mat


def ms_fusion(t: np.ndarray, weights: Sequence[float]) -> np.ndarray:
    """Reference multi-scale fusion on plain arrays (rows are instances)."""
    weights = np.asarray(weights, dtype=np.float64).ravel()
    if weights.shape != (len(MS_WINDOWS),):
        raise ShapeError(f"need {len(MS_WINDOWS)} fusion weights, got {weights.shape}")
    arr = np.asarray(t, dtype=np.float64)
    squeeze = arr.ndim == 1
    if squeeze:
        arr = arr.reshape(1, -1)
    d = arr.shape[1]
    out = np.zeros_like(arr)
    for wgt, window in zip(weights, MS_WINDOWS):
        out += wgt * (arr @ pooling_matrix(d, window).T)
    return out.ravel() if squeeze else out


@dataclass
class ModalityOutput:
    """Per-batch generator outputs, all recorded on one tape."""

    semantic: Var
    hash_real: Var
    labels: Var


def _insert(tape: Tape, param: Parameter, trainable: bool) -> Var:
    return tape.leaf(param) if trainable else tape.constant(param.value)


def _dense_head(
    tape: Tape, h: Var, layers: Sequence[Layer], k: int, c: int, trainable: bool
) -> ModalityOutput:
    """Relu hidden layers, then the split tanh/sigmoid output head."""
    for w, b in layers[:-1]:
        h = nd.relu(nd.add_rowvec(nd.matmul(h, _insert(tape, w, trainable)), _insert(tape, b, trainable)))
    semantic = h
    w, b = layers[-1]
    out = nd.add_rowvec(nd.matmul(h, _insert(tape, w, trainable)), _insert(tape, b, trainable))
    return ModalityOutput(
        semantic=semantic,
        hash_real=nd.tanh(nd.slice_cols(out, 0, k)),
        labels=nd.sigmoid(nd.slice_cols(out, k, k + c)),
    )


class LabNet:
    """Generator that hashes label vectors."""

    def __init__(self, layers: List[Layer], k: int, c: int) -> None:
        self.layers = layers
        self.k = k
        self.c = c

    @classmethod
    def create(cls, c: int, k: int, width_factor: float, rng: np.random.Generator) -> "LabNet":
        dims = [c, hidden_width(width_factor), SEMANTIC_WIDTH, k + c]
        return cls(init_layers(dims, rng, "lab."), k, c)

    def forward(self, tape: Tape, x, trainable: bool = True) -> ModalityOutput:
        xv = x if isinstance(x, Var) else tape.constant(x)
        if xv.shape[1] != self.layers[0][0].shape[0]:
            raise ShapeError(
                f"label input width {xv.shape[1]} != expected {self.layers[0][0].shape[0]}"
            )
        return _dense_head(tape, xv, self.layers, self.k, self.c, trainable)

    def params(self) -> List[Parameter]:
        return [p for layer in self.layers for p in layer]


class ImgNet:
    """Generator that hashes pre-extracted image features."""

    def __init__(self, layers: List[Layer], k: int, c: int) -> None:
        self.layers = layers
        self.k = k
        self.c = c

    @classmethod
    def create(cls, d_v: int, c: int, k: int, rng: np.random.Generator) -> "ImgNet":
        dims = [d_v, SEMANTIC_WIDTH, k + c]
        return cls(init_layers(dims, rng, "img."), k, c)

    def forward(self, tape: Tape, x, trainable: bool = True) -> ModalityOutput:
        xv = x if isinstance(x, Var) else tape.constant(x)
        if xv.shape[1] != self.layers[0][0].shape[0]:
            raise ShapeError(
                f"image input width {xv.shape[1]} != expected {self.layers[0][0].shape[0]}"
            )
        return _dense_head(tape, xv, self.layers, self.k, self.c, trainable)

    def params(self) -> List[Parameter]:
        return [p for layer in self.layers for p in layer]


class TxtNet:
    """Generator that hashes text features after multi-scale fusion."""

    def __init__(self, fusion: Parameter, layers: List[Layer], k: int, c: int) -> None:
        if fusion.shape != (1, len(MS_WINDOWS)):
            raise ShapeError(f"fusion weights must be 1x{len(MS_WINDOWS)}, got {fusion.shape}")
        self.fusion = fusion
        self.layers = layers
        self.k = k
        self.c = c
        d_t = layers[0][0].shape[0]
        self._pool_t = [
            np.ascontiguousarray(pooling_matrix(d_t, w).T) for w in MS_WINDOWS
        ]

    @classmethod
    def create(
        cls, d_t: int, c: int, k: int, width_factor: float, rng: np.random.Generator
    ) -> "TxtNet":
        fusion = Parameter(np.full((1, len(MS_WINDOWS)), FUSION_INIT), name="txt.fusion")
        dims = [d_t, hidden_width(width_factor), SEMANTIC_WIDTH, k + c]
        return cls(fusion, init_layers(dims, rng, "txt."), k, c)

    def fused_input(self, tape: Tape, x, trainable: bool = True) -> Var:
        """Multi-scale fusion of the raw text batch as a tape node."""
        xv = x if isinstance(x, Var) else tape.constant(x)
        if xv.shape[1] != self.layers[0][0].shape[0]:
            raise ShapeError(
                f"text input width {xv.shape[1]} != expected {self.layers[0][0].shape[0]}"
            )
        fw = _insert(tape, self.fusion, trainable)
        fused = None
        for i, mat in enumerate(self._pool_t):
            pooled = nd.matmul(xv, tape.constant(mat))
            weighted = nd.scale_var(pooled, nd.slice_cols(fw, i, i + 1))
            fused = weighted if fused is None else nd.add(fused, weighted)
        return fused

    def forward(self, tape: Tape, x, trainable: bool = True) -> ModalityOutput:
        fused = self.fused_input(tape, x, trainable)
        return _dense_head(tape, fused, self.layers, self.k, self.c, trainable)

    def params(self) -> List[Parameter]:
        return [self.fusion] + [p for layer in self.layers for p in layer]


class Discriminator:
    """Scores semantic features; trained toward 1 for label-net features."""

    def __init__(self, layers: List[Layer]) -> None:
        self.layers = layers

    @classmethod
    def create(cls, width_factor: float, rng: np.random.Generator, prefix: str) -> "Discriminator":
        h = hidden_width(width_factor)
        dims = [SEMANTIC_WIDTH, h, h, 1]
        return cls(init_layers(dims, rng, prefix))

    def forward(self, tape: Tape, x: Union[Var, np.ndarray], trainable: bool = True) -> Var:
        h = x if isinstance(x, Var) else tape.constant(x)
        if h.shape[1] != self.layers[0][0].shape[0]:
            raise ShapeError(
                f"discriminator input width {h.shape[1]} != expected "
                f"{self.layers[0][0].shape[0]}"
            )
        for w, b in self.layers[:-1]:
            h = nd.relu(nd.add_rowvec(nd.matmul(h, _insert(tape, w, trainable)), _insert(tape, b, trainable)))
        w, b = self.layers[-1]
        return nd.add_rowvec(nd.matmul(h, _insert(tape, w, trainable)), _insert(tape, b, trainable))

    def params(self) -> List[Parameter]:
        return [p for layer in self.layers for p in layer]


@dataclass
class Models:
    """The five networks trained together, plus their shared dimensions."""

    labnet: LabNet
    imgnet: ImgNet
    txtnet: TxtNet
    disc_img: Discriminator
    disc_txt: Discriminator

    @property
    def k(self) -> int:
        return self.labnet.k

    @property
    def c(self) -> int:
        return self.labnet.c

    @property
    def d_v(self) -> int:
        return self.imgnet.layers[0][0].shape[0]

    @property
    def d_t(self) -> int:
        return self.txtnet.layers[0][0].shape[0]

    def generator_params(self) -> List[Parameter]:
        return self.labnet.params() + self.imgnet.params() + self.txtnet.params()

    def all_params(self) -> List[Parameter]:
        return (
            self.generator_params() + self.disc_img.params() + self.disc_txt.params()
        )


def build_models(
    d_v: int, d_t: int, c: int, k: int, width_factor: float = 1.0, seed: int = 0
) -> Models:
    """Initialize all five networks from one seed, in a fixed order."""
    if k < 1:
        raise ContractError(f"code length k must be at least 1, got {k}")
    if c < 1 or d_v < 1 or d_t < 1:
        raise ContractError(f"dimensions must be positive, got c={c}, d_v={d_v}, d_t={d_t}")
    rng = np.random.default_rng(seed)
    return Models(
        labnet=LabNet.create(c, k, width_factor, rng),
        imgnet=ImgNet.create(d_v, c, k, rng),
        txtnet=TxtNet.create(d_t, c, k, width_factor, rng),
        disc_img=Discriminator.create(width_factor, rng, "dimg."),
        disc_txt=Discriminator.create(width_factor, rng, "dtxt."),
    )


def _layer_records(net) -> List[Tuple[np.ndarray, np.ndarray]]:
    records = []
    if isinstance(net, TxtNet):
        records.append((net.fusion.value, np.zeros(net.fusion.shape[1])))
    for w, b in net.layers:
        records.append((w.value, b.value.ravel()))
    return records


def _write_records(f: BinaryIO, records) -> None:
    f.write(struct.pack("<I", len(records)))
    for w, b in records:
        f.write(struct.pack("<II", w.shape[0], w.shape[1]))
        f.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def save_models(models: Models, path) -> None:
    """Write all five networks in the little-endian XMHM binary layout."""
    with open(path, "wb") as f:
        f.write(struct.pack("<4sI", MODEL_MAGIC, MODEL_VERSION))
        f.write(
            struct.pack(
                "<5I", models.k, models.c, models.d_v, models.d_t, SEMANTIC_WIDTH
            )
        )
        for net in (models.labnet, models.imgnet, models.txtnet, models.disc_img, models.disc_txt):
            _write_records(f, _layer_records(net))


def _read_exact(f: BinaryIO, count: int, what: str) -> bytes:
    data = f.read(count)
    if len(data) != count:
        raise FormatError(f"model file truncated while reading {what}")
    return data


def _read_records(f: BinaryIO, what: str) -> List[Tuple[np.ndarray, np.ndarray]]:
    (count,) = struct.unpack("<I", _read_exact(f, 4, f"{what} layer count"))
    if count < 1:
        raise FormatError(f"{what} has no layers")
    records = []
    for i in range(count):
        rows, cols = struct.unpack("<II", _read_exact(f, 8, f"{what} layer {i} shape"))
        if rows < 1 or cols < 1:
            raise FormatError(f"{what} layer {i} has invalid shape {rows}x{cols}")
        w = np.frombuffer(
            _read_exact(f, 8 * rows * cols, f"{what} layer {i} weights"), dtype="<f8"
        ).reshape(rows, cols)
        b = np.frombuffer(_read_exact(f, 8 * cols, f"{what} layer {i} bias"), dtype="<f8")
        records.append((w, b))
    return records


def _to_layers(records, what: str) -> List[Layer]:
    layers = []
    prev_cols = None
    for i, (w, b) in enumerate(records):
        if prev_cols is not None and w.shape[0] != prev_cols:
            raise FormatError(
                f"{what} layer {i} input {w.shape[0]} does not chain from previous "
                f"output {prev_cols}"
            )
        prev_cols = w.shape[1]
        layers.append((Parameter(w, f"{what}.w{i}"), Parameter(b.reshape(1, -1), f"{what}.b{i}")))
    return layers


def _check_dense(
    layers: List[Layer], what: str, first: int, last: int, semantic: int = 0
) -> None:
    if layers[0][0].shape[0] != first:
        raise FormatError(
            f"{what} input width {layers[0][0].shape[0]}, header says {first}"
        )
    if layers[-1][0].shape[1] != last:
        raise FormatError(
            f"{what} output width {layers[-1][0].shape[1]}, header says {last}"
        )
    # Generators must expose the semantic feature as their penultimate layer.
    if semantic and (len(layers) < 2 or layers[-2][0].shape[1] != semantic):
        found = layers[-2][0].shape[1] if len(layers) >= 2 else None
        raise FormatError(f"{what} penultimate width {found}, header says {semantic}")


def load_models(path) -> Models:
    """Read an XMHM file back into a validated Models bundle."""
    with open(path, "rb") as f:
        magic, version = struct.unpack("<4sI", _read_exact(f, 8, "header"))
        if magic != MODEL_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {MODEL_MAGIC!r}")
        if version != MODEL_VERSION:
            raise FormatError(f"unsupported model version {version}")
        k, c, d_v, d_t, s = struct.unpack("<5I", _read_exact(f, 20, "dimensions"))
        if k < 1 or c < 1 or d_v < 1 or d_t < 1 or s < 1:
            raise FormatError(
                f"invalid dimensions k={k}, c={c}, d_v={d_v}, d_t={d_t}, s={s}"
            )
        nets = {}
        for name in ("lab", "img", "txt", "disc_img", "disc_txt"):
            nets[name] = _read_records(f, name)
        if f.read(1):
            raise FormatError("trailing bytes after last network")

    lab_layers = _to_layers(nets["lab"], "lab")
    _check_dense(lab_layers, "lab", c, k + c, s)
    img_layers = _to_layers(nets["img"], "img")
    _check_dense(img_layers, "img", d_v, k + c, s)

    txt_records = nets["txt"]
    fusion_w, _fusion_b = txt_records[0]
    if fusion_w.shape != (1, len(MS_WINDOWS)):
        raise FormatError(
            f"txt fusion weights must be 1x{len(MS_WINDOWS)}, got {fusion_w.shape}"
        )
    txt_layers = _to_layers(txt_records[1:], "txt")
    if not txt_layers:
        raise FormatError("txt network has no dense layers after fusion weights")
    _check_dense(txt_layers, "txt", d_t, k + c, s)

    disc_img_layers = _to_layers(nets["disc_img"], "disc_img")
    _check_dense(disc_img_layers, "disc_img", s, 1)
    disc_txt_layers = _to_layers(nets["disc_txt"], "disc_txt")
    _check_dense(disc_txt_layers, "disc_txt", s, 1)

    return Models(
        labnet=LabNet(lab_layers, k, c),
        imgnet=ImgNet(img_layers, k, c),
        txtnet=TxtNet(Parameter(fusion_w, "txt.fusion"), txt_layers, k, c),
        disc_img=Discriminator(disc_img_layers),
        disc_txt=Discriminator(disc_txt_layers),
    )
