"""The full classification network.

One uniform shuffle at the input makes every later downsampling step a
prefix truncation, so row i means the same physical point at every scale.
Each pyramid layer searches spatial neighbors among its full input set
but evaluates the convolution only at the points that survive truncation
(the layer's output size). The top layer searches neighbors in feature
space for a global receptive field, every scale's features are gathered
at the final prefix and fused by a pointwise convolution, and a global
max feeds the classifier head.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DataError, NumericError
from .layers import (PAIR_WIDTH, ConvWeights, HeadWeights, all_finite,
                     classifier_head, global_maxpool, init_conv_weights,
                     init_head_weights, neighbor_conv_batch, pointwise_conv_batch)
from .neighbors import knn_feature, knn_spatial
from .pointcloud import PointCloud, shuffle_truncate

VARIANTS = ("edge", "local_edge", "vertex", "edge_vertex")

# Default pyramid: variant, input size, output size, features, dilation, neighbors
_DEFAULT_LAYERS = (
    ("local_edge", 32768, 16384, 32, 1, 16),
    ("edge_vertex", 16384, 8192, 32, 1, 16),
    ("vertex", 8192, 4096, 64, 2, 16),
    ("vertex", 4096, 2048, 64, 2, 16),
    ("vertex", 2048, 1024, 64, 1, 16),
)
DEFAULT_TOP_NEIGHBORS = 16
DEFAULT_TOP_FEATURES = 128
DEFAULT_FUSION_WIDTH = 512
DEFAULT_HEAD_HIDDEN = (512, 256)


@dataclass(frozen=True)
class LayerSpec:
    variant: str
    input_size: int
    output_size: int
    features: int
    dilation: int
    neighbors: int

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown conv variant {self.variant!r}")
        if self.output_size * 2 != self.input_size:
            raise ConfigError(f"layer must halve its points: {self.input_size} -> {self.output_size}")
        if self.features < 1:
            raise ConfigError("layer feature width must be positive")
        if self.dilation < 1 or self.neighbors < 1:
            raise ConfigError("dilation and neighbor count must be >= 1")
        if self.neighbors * self.dilation >= self.output_size:
            raise ConfigError(f"neighbors*dilation={self.neighbors * self.dilation} "
                              f"must be < output size {self.output_size}")


@dataclass(frozen=True)
class TopSpec:
    neighbors: int = DEFAULT_TOP_NEIGHBORS
    features: int = DEFAULT_TOP_FEATURES


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple
    top: TopSpec | None = None
    fusion_width: int | None = DEFAULT_FUSION_WIDTH
    num_classes: int = 2
    input_points: int = 32768
    use_normals: bool = True
    use_dilation: bool = True
    head_hidden: tuple = DEFAULT_HEAD_HIDDEN

    def validate(self):
        if not self.layers:
            raise ConfigError("network needs at least one layer")
        for layer in self.layers:
            layer.validate()
        if self.layers[0].input_size != self.input_points:
            raise ConfigError(f"first layer input {self.layers[0].input_size} "
                              f"must equal input_points {self.input_points}")
        for a, b in zip(self.layers, self.layers[1:]):
            if b.input_size != a.output_size:
                raise ConfigError(f"layer sizes must chain: {a.output_size} then {b.input_size}")
        if self.num_classes < 2:
            raise ConfigError("need at least two classes")
        top_count = self.layers[-1].output_size
        if self.top is not None and self.top.neighbors >= top_count:
            raise ConfigError("top layer neighbor count must be below its point count")

    @property
    def top_count(self) -> int:
        return self.layers[-1].output_size

    @property
    def concat_width(self) -> int:
        width = sum(layer.features for layer in self.layers)
        if self.top is not None:
            width += self.top.features
        return width

    def effective_dilation(self, layer: LayerSpec) -> int:
        return layer.dilation if self.use_dilation else 1

    def to_dict(self) -> dict:
        return {
            "layers": [
                {"variant": l.variant, "input_size": l.input_size,
                 "output_size": l.output_size, "features": l.features,
                 "dilation": l.dilation, "neighbors": l.neighbors}
                for l in self.layers
            ],
            "top_edgeconv": None if self.top is None else
                {"neighbors": self.top.neighbors, "features": self.top.features},
            "fusion_width": self.fusion_width,
            "num_classes": self.num_classes,
            "input_points": self.input_points,
            "use_normals": self.use_normals,
            "use_dilation": self.use_dilation,
            "head_hidden": list(self.head_hidden),
        }

    @staticmethod
    def from_dict(d: dict) -> "NetworkSpec":
        allowed = {"layers", "top_edgeconv", "fusion_width", "num_classes",
                   "input_points", "use_normals", "use_dilation", "head_hidden"}
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown network keys: {sorted(unknown)}")
        layer_keys = {"variant", "input_size", "output_size", "features", "dilation", "neighbors"}
        layers = []
        for ld in d.get("layers", []):
            extra = set(ld) - layer_keys
            if extra:
                raise ConfigError(f"unknown layer keys: {sorted(extra)}")
            layers.append(LayerSpec(**ld))
        top = d.get("top_edgeconv")
        if top is not None:
            extra = set(top) - {"neighbors", "features"}
            if extra:
                raise ConfigError(f"unknown top_edgeconv keys: {sorted(extra)}")
            top = TopSpec(**top)
        spec = NetworkSpec(
            layers=tuple(layers),
            top=top,
            fusion_width=d.get("fusion_width", DEFAULT_FUSION_WIDTH),
            num_classes=d.get("num_classes", 2),
            input_points=d.get("input_points", layers[0].input_size if layers else 32768),
            use_normals=d.get("use_normals", True),
            use_dilation=d.get("use_dilation", True),
            head_hidden=tuple(d.get("head_hidden", DEFAULT_HEAD_HIDDEN)),
        )
        spec.validate()
        return spec


def default_spec(num_classes: int, input_points: int = 32768) -> NetworkSpec:
    """The standard pyramid, optionally rescaled to a different input size.

    All layer point counts scale proportionally with the input; feature
    widths, neighbor counts, and dilations are untouched.
    """
    if input_points % 32 != 0:
        raise ConfigError(f"input_points must be divisible by 32, got {input_points}")
    scale = input_points / 32768
    layers = []
    for variant, insize, outsize, feats, dil, nbrs in _DEFAULT_LAYERS:
        layers.append(LayerSpec(variant, int(insize * scale), int(outsize * scale),
                                feats, dil, nbrs))
    spec = NetworkSpec(
        layers=tuple(layers),
        top=TopSpec(),
        fusion_width=DEFAULT_FUSION_WIDTH,
        num_classes=num_classes,
        input_points=input_points,
        use_normals=True,
        use_dilation=True,
    )
    spec.validate()
    return spec


def tiny_spec(num_classes: int, input_points: int = 64) -> NetworkSpec:
    """A two-layer miniature of the architecture for fast tests."""
    layers = (
        LayerSpec("local_edge", input_points, input_points // 2, 8, 1, 4),
        LayerSpec("edge_vertex", input_points // 2, input_points // 4, 16, 1, 4),
    )
    spec = NetworkSpec(layers=layers, top=TopSpec(neighbors=4, features=16),
                       fusion_width=32, num_classes=num_classes,
                       input_points=input_points, head_hidden=(32, 16))
    spec.validate()
    return spec


def compact_spec(num_classes: int, input_points: int = 256, neighbors: int = 8) -> NetworkSpec:
    """A small trainable pyramid for desk-scale datasets.

    The full architecture relies on averaging over thousands of points to
    tame the randomness of prefix truncation; below a few hundred points
    that noise rivals the class signal, so this is about as small as a
    trainable configuration gets.
    """
    layers = (
        LayerSpec("local_edge", input_points, input_points // 2, 16, 1, neighbors),
        LayerSpec("edge_vertex", input_points // 2, input_points // 4, 32, 1, neighbors),
    )
    spec = NetworkSpec(layers=layers, top=TopSpec(neighbors=neighbors, features=32),
                       fusion_width=64, num_classes=num_classes,
                       input_points=input_points, head_hidden=(64, 32))
    spec.validate()
    return spec


OMISSIONS = ("none", "dilation", "normals", "vertex_conv", "fusion_conv", "top_edgeconv")


def apply_omission(spec: NetworkSpec, omit: str) -> NetworkSpec:
    """Ablation variants: drop one architectural component."""
    if omit not in OMISSIONS:
        raise ConfigError(f"unknown omission {omit!r}; choose from {OMISSIONS}")
    if omit == "none":
        return spec
    if omit == "dilation":
        layers = tuple(replace(l, dilation=1) for l in spec.layers)
        return replace(spec, layers=layers, use_dilation=False)
    if omit == "normals":
        return replace(spec, use_normals=False)
    if omit == "vertex_conv":
        layers = tuple(replace(l, variant="edge_vertex") if l.variant == "vertex" else l
                       for l in spec.layers)
        return replace(spec, layers=layers)
    if omit == "fusion_conv":
        return replace(spec, fusion_width=None)
    return replace(spec, top=None)


@dataclass
class Model:
    spec: NetworkSpec
    layer_weights: list
    top_weights: ConvWeights | None
    fusion_weights: ConvWeights | None
    head: HeadWeights
    dtype: np.dtype = np.dtype(np.float32)

    def params(self):
        """Ordered (name, tensor) pairs of every learnable parameter."""
        out = []
        for i, w in enumerate(self.layer_weights):
            out.extend(_named(f"layer{i}", w))
        if self.top_weights is not None:
            out.extend(_named("top", self.top_weights))
        if self.fusion_weights is not None:
            out.extend(_named("fusion", self.fusion_weights))
        out.extend(_named("head.stage1", self.head.stage1))
        out.extend(_named("head.stage2", self.head.stage2))
        out.append(("head.out_kernel", self.head.out_kernel))
        out.append(("head.out_bias", self.head.out_bias))
        return out

    def running_stats(self):
        """Ordered (name, array) pairs of normalization running statistics."""
        out = []
        blocks = [(f"layer{i}", w) for i, w in enumerate(self.layer_weights)]
        if self.top_weights is not None:
            blocks.append(("top", self.top_weights))
        if self.fusion_weights is not None:
            blocks.append(("fusion", self.fusion_weights))
        blocks.extend([("head.stage1", self.head.stage1), ("head.stage2", self.head.stage2)])
        for prefix, w in blocks:
            out.append((f"{prefix}.run_mean", w.run_mean))
            out.append((f"{prefix}.run_var", w.run_var))
        return out

    def zero_grad(self):
        for _, p in self.params():
            p.grad = None


def _named(prefix, w: ConvWeights):
    return [(f"{prefix}.kernel", w.kernel), (f"{prefix}.bias", w.bias),
            (f"{prefix}.gamma", w.gamma), (f"{prefix}.beta", w.beta)]


def build_network(spec: NetworkSpec, rng: np.random.Generator,
                  dtype=np.float32) -> Model:
    """Allocate and initialize all parameters for a spec. Deterministic
    for a given rng stream."""
    spec.validate()
    dtype = np.dtype(dtype)
    layer_weights = []
    f_in = 3  # normals or positions, three channels either way
    for layer in spec.layers:
        width_in = PAIR_WIDTH[layer.variant](f_in)
        layer_weights.append(init_conv_weights(rng, width_in, layer.features, dtype))
        f_in = layer.features
    top_weights = None
    if spec.top is not None:
        top_weights = init_conv_weights(rng, PAIR_WIDTH["edge"](f_in), spec.top.features, dtype)
    fusion_weights = None
    if spec.fusion_width is not None:
        fusion_weights = init_conv_weights(rng, spec.concat_width, spec.fusion_width, dtype)
    head_in = spec.fusion_width if spec.fusion_width is not None else spec.concat_width
    head = init_head_weights(rng, head_in, spec.head_hidden[0], spec.head_hidden[1],
                             spec.num_classes, dtype)
    return Model(spec, layer_weights, top_weights, fusion_weights, head, dtype)


def gather_prefix(features, m: int):
    """First m rows of a feature map. Because downsampling is prefix
    truncation of one global shuffle, row i refers to the same physical
    point at every scale."""
    n = features.data.shape[0] if isinstance(features, Tensor) else len(features)
    if not 1 <= m <= n:
        raise DataError(f"cannot take a {m}-row prefix of {n} rows")
    if isinstance(features, Tensor):
        return ad.prefix_rows(features, m)
    return features[:m]


def forward_batch(model: Model, clouds, mode: str = "eval",
                  rng: np.random.Generator | None = None,
                  dropout: float = 0.6) -> Tensor:
    """Run the network on a batch of clouds; returns logits (B, C).

    Geometry (shuffle, neighbor search, per-point maxima) is handled per
    cloud; the learned blocks are applied to all clouds jointly so
    train-mode normalization statistics pool over the whole batch. The
    rng drives input shuffles and, in train mode, head dropout.
    """
    spec = model.spec
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    if rng is None:
        raise DataError("forward needs an rng for the input shuffle")
    if not clouds:
        raise DataError("empty batch")

    xs = []
    positions = []
    for pc in clouds:
        if pc.size < spec.input_points:
            raise DataError(f"cloud has {pc.size} points, spec needs {spec.input_points}")
        cloud = shuffle_truncate(pc, rng, m=spec.input_points)
        positions.append(np.ascontiguousarray(cloud.positions))  # float64 for exact k-NN
        source = cloud.normals if spec.use_normals else cloud.positions
        xs.append(Tensor(np.ascontiguousarray(source, dtype=model.dtype)))

    scales = [[] for _ in clouds]
    for i, layer in enumerate(spec.layers):
        items = []
        for b in range(len(clouds)):
            nbrs = knn_spatial(positions[b], layer.neighbors,
                               spec.effective_dilation(layer),
                               n_queries=layer.output_size)
            items.append((xs[b], nbrs, positions[b]))
        xs = neighbor_conv_batch(layer.variant, items, model.layer_weights[i], mode=mode)
        for b, x in enumerate(xs):
            if not all_finite(x.data):
                raise NumericError(f"non-finite features after pyramid layer {i}")
            positions[b] = positions[b][:layer.output_size]
            scales[b].append(x)

    if spec.top is not None:
        items = []
        for b in range(len(clouds)):
            nbrs = knn_feature(np.ascontiguousarray(xs[b].data, dtype=np.float64),
                               spec.top.neighbors)
            items.append((xs[b], nbrs, None))
        tops = neighbor_conv_batch("edge", items, model.top_weights, mode=mode)
        for b, top in enumerate(tops):
            if not all_finite(top.data):
                raise NumericError("non-finite features after the top layer")
            scales[b].append(top)

    fused = [ad.concat_cols([gather_prefix(t, spec.top_count) for t in per_cloud])
             for per_cloud in scales]
    if model.fusion_weights is not None:
        fused = pointwise_conv_batch(fused, model.fusion_weights, mode=mode)
    pooled = ad.concat_rows([global_maxpool(f) for f in fused])  # (B, F)
    logits = classifier_head(pooled, model.head, mode, rng, dropout_p=dropout)
    if not np.isfinite(logits.data).all():
        raise NumericError("non-finite logits")
    return logits


def forward(model: Model, pc: PointCloud, mode: str = "eval",
            rng: np.random.Generator | None = None, dropout: float = 0.6) -> Tensor:
    """Run the network on one cloud; returns logits of shape (1, C)."""
    return forward_batch(model, [pc], mode=mode, rng=rng, dropout=dropout)
