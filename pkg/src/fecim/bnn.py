"""Binary network inference on the simulated macro.

Activations and weights are bipolar (+1/-1). A layer's pre-activation is
the bipolar dot product ``s = 2M - N`` where ``M`` counts XNOR matches
among ``N`` inputs, and the binary output is ``+1`` when ``s >= alpha``
(``s <= alpha`` for channels whose batch-norm scale was negative).
The last layer has no threshold; its scores pick the label.
"""

from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .device import FeFetParams, VariationSpec, lognormal_scale
from .macroarray import C_M_DEFAULT, high_fraction
from .report import write_csv
from .rng import TAG_BNN_CAP, normal, stream_key

SIGMA_MODES = ("variance", "std")
_DRAW_R_ON = 1000
_DRAW_R_OFF = 1001


class DegenerateChannel(UserWarning):
    """A batch-norm channel with zero scale; its output is the constant sign(beta)."""


class ModelFormatError(ValueError):
    pass


# ---------------------------------------------------------------- folding


def fold_batchnorm(gamma, beta, mu, sigma, sigma_mode: str = "variance"):
    """Fold batch normalization followed by sign into ``(alpha, flipped)``.

    ``sigma_mode="variance"`` divides by ``sigma**2`` as in the usual
    binary-network formulation of the normalization; ``"std"`` divides by
    ``sigma``. Channels with ``gamma == 0`` become constant outputs, encoded
    as ``alpha = -inf`` (always +1) or ``+inf`` (always -1), and raise a
    :class:`DegenerateChannel` warning.
    """
    if sigma_mode not in SIGMA_MODES:
        raise ValueError(f"sigma_mode must be one of {SIGMA_MODES}")
    gamma, beta, mu, sigma = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (gamma, beta, mu, sigma))
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    scale = sigma**2 if sigma_mode == "variance" else sigma
    dead = gamma == 0
    alpha = mu - beta * scale / np.where(dead, 1.0, gamma)
    if dead.any():
        warnings.warn(f"{int(dead.sum())} channel(s) with gamma == 0 fold to constants", DegenerateChannel)
        const = np.where(np.broadcast_to(beta, alpha.shape) >= 0, -math.inf, math.inf)
        alpha = np.where(np.broadcast_to(dead, alpha.shape), const, alpha)
    return alpha, np.broadcast_to(gamma < 0, alpha.shape).copy()


def binary_activation(s, alpha, flipped) -> np.ndarray:
    """Sign activation against folded thresholds; ties give +1."""
    s = np.asarray(s)
    up = np.where(flipped, s <= alpha, s >= alpha)
    return np.where(up, 1, -1).astype(np.int8)


# ---------------------------------------------------------------- model


@dataclass
class BnnLayer:
    kind: str
    weights: np.ndarray
    alpha: np.ndarray | None = None
    flipped: np.ndarray | None = None
    in_shape: tuple | None = None
    kernel: int = 1
    stride: int = 1
    padding: int = 0
    pool: int = 1

    def __post_init__(self):
        if self.kind == "fc":
            self.kind = "fully_connected"
        if self.kind not in ("conv", "fully_connected"):
            raise ModelFormatError(f"unknown layer kind {self.kind!r}")
        self.weights = np.asarray(self.weights, dtype=np.int8)
        if self.weights.ndim != 2 or not np.isin(self.weights, (-1, 1)).all():
            raise ModelFormatError("weights must be a bipolar (+1/-1) matrix")
        if self.alpha is not None:
            self.alpha = np.asarray(self.alpha, dtype=float).reshape(self.cols)
            if self.flipped is None:
                self.flipped = np.zeros(self.cols, dtype=bool)
            self.flipped = np.asarray(self.flipped, dtype=bool).reshape(self.cols)
            finite = np.isfinite(self.alpha)
            if np.any(np.abs(self.alpha[finite]) > self.rows):
                raise ModelFormatError("|alpha| exceeds the row count")
        if self.kind == "conv":
            if self.in_shape is None:
                raise ModelFormatError("conv layer needs in_shape")
            self.in_shape = tuple(int(v) for v in self.in_shape)
            if self.in_shape[0] * self.kernel * self.kernel != self.rows:
                raise ModelFormatError("conv rows must equal C_in * kernel * kernel")

    @property
    def rows(self) -> int:
        return self.weights.shape[0]

    @property
    def cols(self) -> int:
        return self.weights.shape[1]

    @property
    def is_output(self) -> bool:
        return self.alpha is None

    def conv_out_hw(self) -> tuple[int, int]:
        _, h, w = self.in_shape
        ho = (h + 2 * self.padding - self.kernel) // self.stride + 1
        wo = (w + 2 * self.padding - self.kernel) // self.stride + 1
        return ho, wo

    def lower(self, a: np.ndarray) -> np.ndarray:
        """Bipolar input batch to matrix-form patches ``(B, positions, rows)``."""
        b = a.shape[0]
        if self.kind == "fully_connected":
            flat = a.reshape(b, -1)
            if flat.shape[1] != self.rows:
                raise ValueError(f"layer expects {self.rows} inputs, got {flat.shape[1]}")
            return flat[:, None, :]
        a = a.reshape((b,) + self.in_shape)
        k, st, pd = self.kernel, self.stride, self.padding
        if pd:
            # out-of-image taps read as -1
            a = np.pad(a, ((0, 0), (0, 0), (pd, pd), (pd, pd)), constant_values=-1)
        win = np.lib.stride_tricks.sliding_window_view(a, (k, k), axis=(2, 3))[:, :, ::st, ::st]
        ho, wo = self.conv_out_hw()
        win = win[:, :, :ho, :wo]
        return win.transpose(0, 2, 3, 1, 4, 5).reshape(b, ho * wo, self.rows)

    def raise_(self, bits: np.ndarray) -> np.ndarray:
        """Reshape per-position outputs back to a feature map and max-pool."""
        if self.kind == "fully_connected":
            return bits[:, 0, :]
        ho, wo = self.conv_out_hw()
        fmap = bits.reshape(bits.shape[0], ho, wo, self.cols).transpose(0, 3, 1, 2)
        if self.pool > 1:
            p = self.pool
            hp, wp = ho // p, wo // p
            fmap = fmap[:, :, : hp * p, : wp * p].reshape(fmap.shape[0], self.cols, hp, p, wp, p).max(axis=(3, 5))
        return fmap


@dataclass
class BnnModel:
    layers: list
    input_shape: tuple
    input_threshold: float = 0.0
    sigma_mode: str = "variance"

    def __post_init__(self):
        if not self.layers:
            raise ModelFormatError("model has no layers")
        for layer in self.layers[:-1]:
            if layer.is_output:
                raise ModelFormatError("only the last layer may omit thresholds")
        if not self.layers[-1].is_output or self.layers[-1].kind != "fully_connected":
            raise ModelFormatError("last layer must be a fully connected readout without thresholds")
        self.input_shape = tuple(int(v) for v in self.input_shape)

    def binarize(self, x) -> np.ndarray:
        """Raw inputs to bipolar activations; values at or above the threshold map to +1."""
        x = np.asarray(x)
        x = x.reshape((-1,) + self.input_shape)
        return np.where(x >= self.input_threshold, 1, -1).astype(np.int8)


@dataclass
class InferenceResult:
    labels: np.ndarray
    scores: np.ndarray
    pre_activations: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    analog: list = field(default_factory=list)


def reference_infer(model: BnnModel, x, bipolar: bool = False) -> InferenceResult:
    """Exact integer XNOR/popcount inference."""
    a = np.asarray(x, dtype=np.int8) if bipolar else model.binarize(x)
    if bipolar and a.shape == model.input_shape:
        a = a[None]
    pre, outs = [], []
    for layer in model.layers:
        patches = layer.lower(a).astype(np.int32)
        s = patches @ layer.weights.astype(np.int32)
        pre.append(s)
        if layer.is_output:
            scores = s[:, 0, :]
            return InferenceResult(np.argmax(scores, axis=1), scores, pre, outs)
        bits = binary_activation(s, layer.alpha, layer.flipped)
        outs.append(bits)
        a = layer.raise_(bits)
    raise AssertionError("unreachable")


# ---------------------------------------------------------------- tiling


@dataclass(frozen=True)
class Tile:
    row0: int
    row1: int
    col0: int
    col1: int
    macro: int


@dataclass(frozen=True)
class TilePlan:
    rows: int
    cols: int
    macro_rows: int
    macro_cols: int
    tiles: tuple

    @property
    def row_tiles(self) -> int:
        return len({t.row0 for t in self.tiles})

    @property
    def col_tiles(self) -> int:
        return len({t.col0 for t in self.tiles})

    @property
    def combine(self) -> str:
        """How row-tile partial results meet: in the analog comparator or summed digitally."""
        return "analog" if self.row_tiles == 1 else "digital"


def map_layer(layer: BnnLayer, macro_rows: int = 128, macro_cols: int = 128) -> TilePlan:
    """Split a layer's weight matrix into macro-sized tiles (one macro per tile)."""
    if macro_rows < 1 or macro_cols < 1:
        raise ValueError("macro dimensions must be >= 1")
    tiles = []
    k = 0
    for r0 in range(0, layer.rows, macro_rows):
        for c0 in range(0, layer.cols, macro_cols):
            tiles.append(Tile(r0, min(r0 + macro_rows, layer.rows), c0, min(c0 + macro_cols, layer.cols), k))
            k += 1
    return TilePlan(layer.rows, layer.cols, macro_rows, macro_cols, tuple(tiles))


# ---------------------------------------------------------------- macro path


@dataclass(frozen=True)
class MacroConfig:
    rows: int = 128
    cols: int = 128
    params: FeFetParams = field(default_factory=FeFetParams)
    c_nominal: float = C_M_DEFAULT
    c_parasitic: float = 0.0


def tile_devices(spec: VariationSpec, layer_index: int, tile: Tile, macro_rows: int, trial: int = 0):
    """Relative capacitances ``(macro_rows, tile cols)`` and high fractions ``(tile rows, tile cols)``.

    Keys are ``(seed, trial, layer, macro, row, col)``.
    """
    rows = np.arange(macro_rows)[:, None]
    cols = np.arange(tile.col1 - tile.col0)[None, :]
    key = stream_key(spec.seed, TAG_BNN_CAP, trial, layer_index, tile.macro, rows, cols)
    if spec.sigma_c >= 0.5:
        raise ValueError("sigma_c must be < 0.5")
    w = 1.0 + spec.sigma_c * normal(key, 0) if spec.sigma_c else np.ones(key.shape)
    draw = 1
    while np.any(w <= 0):
        w = np.where(w <= 0, 1.0 + spec.sigma_c * normal(key, draw), w)
        draw += 1
    nr = tile.row1 - tile.row0
    ratio = spec.on_off_ratio
    if ratio is None or math.isinf(ratio):
        h = np.ones((nr, w.shape[1]))
    else:
        s = lognormal_scale(spec.sigma_r)
        sub = key[:nr]
        f_on = np.exp(s * normal(sub, _DRAW_R_ON)) if s else 1.0
        f_off = np.exp(s * normal(sub, _DRAW_R_OFF)) if s else 1.0
        h = high_fraction(1.0 / f_on, 1.0 / (ratio * f_off)) * np.ones((nr, w.shape[1]))
    return w, h


def _tile_voltages(patches, weights, w, h, v_dd, c_par_rel):
    """Batched charge-shared ScL voltages for one tile; ``patches`` is ``(B, P, r)``.

    The input-dependent part is a float32 product of +/-1 patches; it is
    exact whenever the cell terms are integers, which keeps the
    zero-variation path bit-identical to integer arithmetic.
    """
    nr = weights.shape[0]
    area = (2.0 * h - 1.0) * w[:nr]
    base = ((1.0 - h) * w[:nr]).sum(axis=0)
    prod = (patches @ (weights * area).astype(np.float32)).astype(np.float64)
    num = base + 0.5 * (area.sum(axis=0) + prod)
    den = w.sum(axis=0) + c_par_rel
    return v_dd * num / den


def _analog_threshold(v, alpha, flipped, n_active, n_total, v_dd):
    """Comparator decisions against per-column references; out-of-range thresholds are constants."""
    a = np.clip(np.nan_to_num(alpha, posinf=n_active, neginf=-n_active), -n_active, n_active)
    vref = v_dd * (n_active + a) / (2 * n_total)
    polarity = np.where(flipped, -1.0, 1.0)
    up = (v - vref) * polarity >= 0
    always = np.where(flipped, alpha > n_active, alpha < -n_active)
    never = np.where(flipped, alpha < -n_active, alpha > n_active)
    if always.any() or never.any():
        up = (up | always) & ~never
    return np.where(up, 1, -1).astype(np.int8)


def macro_infer(model: BnnModel, x, config: MacroConfig | None = None,
                spec: VariationSpec | None = None, trial: int = 0, bipolar: bool = False,
                plans: Sequence[TilePlan] | None = None, keep_analog: bool = False,
                first_patches: np.ndarray | None = None) -> InferenceResult:
    """Inference with every layer's MACs evaluated by charge sharing on tiled macros.

    Single-row-tile layers threshold in the analog domain; layers split
    over several row tiles read each tile back as a rounded match count and
    add the counts before thresholding. The output layer is always read
    back as counts. ``first_patches`` lets callers reuse the lowered
    first-layer input across repeated runs on the same data.
    """
    config = config or MacroConfig()
    spec = spec or VariationSpec(on_off_ratio=math.inf)
    v_dd = config.params.v_dd
    c_par_rel = config.c_parasitic / config.c_nominal
    a = np.asarray(x, dtype=np.int8) if bipolar else model.binarize(x)
    if bipolar and a.shape == model.input_shape:
        a = a[None]
    pre, outs, traces = [], [], []
    for li, layer in enumerate(model.layers):
        plan = plans[li] if plans is not None else map_layer(layer, config.rows, config.cols)
        if li == 0 and first_patches is not None:
            patches = first_patches
        else:
            patches = layer.lower(a).astype(np.float32)
        n_total = plan.macro_rows + c_par_rel
        single = plan.row_tiles == 1 and not layer.is_output
        counts = np.zeros(patches.shape[:2] + (layer.cols,))
        bits = np.empty(patches.shape[:2] + (layer.cols,), dtype=np.int8) if single else None
        layer_trace = []
        for tile in plan.tiles:
            wt = layer.weights[tile.row0:tile.row1, tile.col0:tile.col1].astype(np.float64)
            w, h = tile_devices(spec, li, tile, plan.macro_rows, trial)
            sub = patches if plan.row_tiles == 1 else np.ascontiguousarray(patches[:, :, tile.row0:tile.row1])
            v = _tile_voltages(sub, wt, w, h, v_dd, c_par_rel)
            if keep_analog:
                layer_trace.append((tile, v))
            nr = tile.row1 - tile.row0
            cs = slice(tile.col0, tile.col1)
            if single:
                bits[:, :, cs] = _analog_threshold(v, layer.alpha[cs], layer.flipped[cs], nr, n_total, v_dd)
            else:
                counts[:, :, cs] += np.clip(np.rint(v * n_total / v_dd), 0, nr)
        traces.append(layer_trace)
        if single:
            pre.append(None)
        else:
            s = (2 * counts - layer.rows).astype(np.int32)
            pre.append(s)
            if layer.is_output:
                scores = s[:, 0, :]
                return InferenceResult(np.argmax(scores, axis=1), scores, pre, outs, traces)
            bits = binary_activation(s, layer.alpha, layer.flipped)
        outs.append(bits)
        a = layer.raise_(bits)
    raise AssertionError("unreachable")


# ---------------------------------------------------------------- accuracy


@dataclass
class AccuracyTable:
    rows: list
    reference_accuracy: float

    header = ("sigma_c", "seed", "accuracy")

    def summary(self) -> dict:
        out = {}
        for sigma, _, acc in self.rows:
            out.setdefault(sigma, []).append(acc)
        return {s: (float(np.mean(v)), float(np.std(v))) for s, v in out.items()}

    def write(self, path):
        return write_csv(path, self.header, self.rows)


def evaluate_accuracy(model: BnnModel, images, labels, sigma_grid: Sequence[float], trials: int,
                      base_spec: VariationSpec | None = None, config: MacroConfig | None = None,
                      threads: int = 1, batch: int = 1000) -> AccuracyTable:
    """Accuracy of the macro path over ``trials`` seeds per ``sigma_c``.

    Trial ``t`` uses seed ``base_spec.seed + t`` for every ``sigma_c``, so the
    sweep reuses the same normal draws scaled by ``sigma_c``.
    """
    base_spec = base_spec or VariationSpec(on_off_ratio=math.inf)
    labels = np.asarray(labels)
    a = model.binarize(images)
    ref = np.concatenate([reference_infer(model, a[i:i + batch], bipolar=True).labels
                          for i in range(0, len(a), batch)])
    ref_acc = float(np.mean(ref == labels))
    plans = [map_layer(layer, (config or MacroConfig()).rows, (config or MacroConfig()).cols)
             for layer in model.layers]

    chunks = [(a[i:i + batch], model.layers[0].lower(a[i:i + batch]).astype(np.float32))
              for i in range(0, len(a), batch)]

    def run(job):
        sigma, t = job
        spec = VariationSpec(sigma, base_spec.sigma_r, base_spec.on_off_ratio, base_spec.seed + t)
        pred = np.concatenate([
            macro_infer(model, chunk, config, spec, bipolar=True, plans=plans, first_patches=p0).labels
            for chunk, p0 in chunks
        ])
        return (sigma, spec.seed, float(np.mean(pred == labels)))

    jobs = [(float(s), t) for s in sigma_grid for t in range(trials)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run, jobs))
    else:
        rows = [run(j) for j in jobs]
    return AccuracyTable(rows, ref_acc)


# ---------------------------------------------------------------- files


def _pack(weights: np.ndarray) -> bytes:
    return np.packbits((weights.ravel() > 0).astype(np.uint8), bitorder="little").tobytes()


def _unpack(blob: bytes, rows: int, cols: int) -> np.ndarray:
    n = rows * cols
    need = (n + 7) // 8
    if len(blob) != need:
        raise ModelFormatError(f"weight blob has {len(blob)} bytes, expected {need} for {rows}x{cols}")
    bits = np.unpackbits(np.frombuffer(blob, dtype=np.uint8), count=n, bitorder="little")
    return np.where(bits.reshape(rows, cols) == 1, 1, -1).astype(np.int8)


def save_model(model: BnnModel, manifest_path) -> Path:
    """Write a JSON manifest plus one bit-packed ``.bin`` blob per layer beside it."""
    manifest_path = Path(manifest_path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    stem = manifest_path.stem
    layers = []
    for i, layer in enumerate(model.layers):
        ref = f"{stem}.layer{i}.bin"
        (manifest_path.parent / ref).write_bytes(_pack(layer.weights))
        entry = {
            "kind": layer.kind,
            "shape": [layer.rows, layer.cols],
            "alpha": None if layer.alpha is None else [_enc(v) for v in layer.alpha],
            "flipped": None if layer.flipped is None else [bool(v) for v in layer.flipped],
            "weights_ref": ref,
        }
        if layer.kind == "conv":
            entry.update(in_shape=list(layer.in_shape), kernel=layer.kernel, stride=layer.stride,
                         padding=layer.padding, pool=layer.pool)
        layers.append(entry)
    doc = {
        "input": {"shape": list(model.input_shape), "binarize": "threshold",
                  "threshold": model.input_threshold},
        "sigma_mode": model.sigma_mode,
        "layers": layers,
    }
    manifest_path.write_text(json.dumps(doc, indent=1) + "\n")
    return manifest_path


def _enc(v):
    v = float(v)
    return ("inf" if v > 0 else "-inf") if math.isinf(v) else v


def load_model(manifest_path) -> BnnModel:
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{manifest_path}: offset {exc.pos}: {exc.msg}") from None
    layers = []
    for i, entry in enumerate(doc.get("layers", [])):
        try:
            rows, cols = entry["shape"]
            blob = (manifest_path.parent / entry["weights_ref"]).read_bytes()
        except (KeyError, ValueError) as exc:
            raise ModelFormatError(f"{manifest_path}: layer {i}: {exc}") from None
        alpha = entry.get("alpha")
        if alpha is not None:
            alpha = [float(v) for v in alpha]
        try:
            weights = _unpack(blob, rows, cols)
        except ModelFormatError as exc:
            raise ModelFormatError(f"{entry['weights_ref']}: {exc}") from None
        kw = {}
        if entry["kind"] == "conv":
            kw = {k: entry[k] for k in ("in_shape", "kernel", "stride", "padding", "pool") if k in entry}
        layers.append(BnnLayer(entry["kind"], weights, alpha, entry.get("flipped"), **kw))
    inp = doc.get("input", {})
    return BnnModel(layers, tuple(inp["shape"]), float(inp.get("threshold", 0.0)),
                    doc.get("sigma_mode", "variance"))
