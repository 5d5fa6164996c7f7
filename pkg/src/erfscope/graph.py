"""Network graphs: encoders, dilated-pyramid heads, and stacked-dilation heads.

A graph is a topologically ordered list of layer nodes bound to a fixed
input size at assembly time. Forward evaluation and reverse-mode input
gradients reuse the pure ops in :mod:`erfscope.ops`; weights are random at
construction (He-style uniform, seeded) and never change, since input
gradients are all that receptive-field analysis needs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .tensor import Kernel, Tensor

LAYER_KINDS = ("input", "conv", "relu", "maxpool", "bilinear_resize",
               "global_avgpool", "concat", "add")


class GraphBuildError(ValueError):
    """Raised when fragments cannot be stitched into a consistent graph."""


@dataclass(frozen=True)
class LayerNode:
    """One graph node. ``preds`` are indices of earlier nodes.

    ``size_ref`` (bilinear_resize only) names the node whose spatial size
    the resize output matches; it contributes shape, not values, so no
    gradient flows to it.
    """

    kind: str
    preds: tuple[int, ...]
    kernel: Kernel | None = None
    spec: ops.ConvSpec | None = None
    size_ref: int | None = None


@dataclass(frozen=True)
class Fragment:
    """A reusable chain of nodes; pred index -1 stands for the fragment input."""

    nodes: tuple[LayerNode, ...]
    in_channels: int | None   # None: accepts any channel count (identity)
    out_channels: int | None


def _child_seed(base_seed: int, index: int) -> int:
    """Deterministic per-kernel seed stream (PCG-independent of draw order)."""
    ss = np.random.SeedSequence(int(base_seed) & 0xFFFFFFFFFFFFFFFF,
                                spawn_key=(index,))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _he_kernel(kh: int, kw: int, cin: int, cout: int, seed: int) -> Kernel:
    fan_in = kh * kw * cin
    return Kernel.random(kh, kw, cin, cout, seed, float(np.sqrt(2.0 / fan_in)))


DEFAULT_ENCODER_CHANNELS = (8, 16, 32, 64, 128)


def build_encoder(target_stride: int, channels: tuple[int, ...] | None = None,
                  seed: int = 0, in_channels: int = 3) -> Fragment:
    """Minimal downsampling stack: per stage [3x3 conv (same) -> ReLU -> 2x2 maxpool].

    ``target_stride`` must be a power of two in {1, 2, 4, 8, 16, 32};
    log2(target_stride) stages are produced, so the fragment's output is
    downsampled by exactly that factor. ``target_stride=1`` is the empty
    (identity) fragment.
    """
    s = int(target_stride)
    if s < 1 or s > 32 or (s & (s - 1)) != 0:
        raise ValueError(f"target stride must be a power of two in [1, 32], got {target_stride}")
    stages = s.bit_length() - 1
    if stages == 0:
        return Fragment((), None, None)
    if channels is None:
        channels = DEFAULT_ENCODER_CHANNELS[:stages]
    if len(channels) != stages:
        raise ValueError(f"need {stages} channel widths for stride {s}, got {len(channels)}")
    nodes: list[LayerNode] = []
    cin = in_channels
    prev = -1
    for stage, cout in enumerate(channels):
        k = _he_kernel(3, 3, cin, cout, _child_seed(seed, stage))
        nodes.append(LayerNode("conv", (prev,), kernel=k,
                               spec=ops.ConvSpec(1, 1, ops.same_padding(3, 1))))
        nodes.append(LayerNode("relu", (len(nodes) - 1,)))
        nodes.append(LayerNode("maxpool", (len(nodes) - 1,)))
        prev = len(nodes) - 1
        cin = cout
    return Fragment(tuple(nodes), in_channels, channels[-1])


@dataclass(frozen=True)
class AsppSpec:
    """Pyramid-head parameters; the three dilated branches use rates {r, 2r, 3r}."""

    base_rate: int
    branch_channels: int = 32
    in_channels: int = 64

    def __post_init__(self):
        if self.base_rate < 1:
            raise ValueError(f"base rate must be >= 1, got {self.base_rate}")

    @property
    def rates(self) -> tuple[int, int, int]:
        r = self.base_rate
        return (r, 2 * r, 3 * r)


def build_aspp_head(spec: AsppSpec, n_classes: int, image_pool: bool = True,
                    seed: int = 100) -> Fragment:
    """Five parallel branches over the feature map, concatenated then merged.

    Branches: 1x1 conv; (optional) global average pool -> 1x1 conv ->
    bilinear resize back to feature size; three 3x3 convs at dilations
    {r, 2r, 3r}, each "same"-padded. A single 1x1 merge conv maps the
    concatenation to ``n_classes`` channels. ``image_pool=False`` drops the
    pooling branch, which carries uniform (geometry-free) gradient support.
    """
    cin, cb = spec.in_channels, spec.branch_channels
    nodes: list[LayerNode] = []
    branch_exits: list[int] = []
    kseed = 0

    def next_kernel(kh, kw, ci, co):
        nonlocal kseed
        k = _he_kernel(kh, kw, ci, co, _child_seed(seed, kseed))
        kseed += 1
        return k

    nodes.append(LayerNode("conv", (-1,), kernel=next_kernel(1, 1, cin, cb),
                           spec=ops.ConvSpec()))
    branch_exits.append(len(nodes) - 1)

    if image_pool:
        nodes.append(LayerNode("global_avgpool", (-1,)))
        nodes.append(LayerNode("conv", (len(nodes) - 1,),
                               kernel=next_kernel(1, 1, cin, cb), spec=ops.ConvSpec()))
        nodes.append(LayerNode("bilinear_resize", (len(nodes) - 1,), size_ref=-1))
        branch_exits.append(len(nodes) - 1)

    for rate in spec.rates:
        nodes.append(LayerNode("conv", (-1,), kernel=next_kernel(3, 3, cin, cb),
                               spec=ops.ConvSpec(1, rate, ops.same_padding(3, rate))))
        branch_exits.append(len(nodes) - 1)

    nodes.append(LayerNode("concat", tuple(branch_exits)))
    nodes.append(LayerNode("conv", (len(nodes) - 1,),
                           kernel=next_kernel(1, 1, cb * len(branch_exits), n_classes),
                           spec=ops.ConvSpec()))
    return Fragment(tuple(nodes), cin, n_classes)


def build_fcn_d6_head(rate: int, n_classes: int, in_channels: int = 64,
                      channels: int = 32, relu: bool = True,
                      seed: int = 200) -> Fragment:
    """Stacked-dilation head: two 3x3 convs at the same rate with a ReLU
    between them, then a 1x1 conv to ``n_classes``.

    With ``relu=False`` the head is linear everywhere, which makes its
    gradient support independent of the input (used for exact tap-set
    checks).
    """
    if rate < 1:
        raise ValueError(f"rate must be >= 1, got {rate}")
    cspec = ops.ConvSpec(1, rate, ops.same_padding(3, rate))
    nodes: list[LayerNode] = [
        LayerNode("conv", (-1,), kernel=_he_kernel(3, 3, in_channels, channels,
                                                   _child_seed(seed, 0)), spec=cspec),
    ]
    if relu:
        nodes.append(LayerNode("relu", (len(nodes) - 1,)))
    nodes.append(LayerNode("conv", (len(nodes) - 1,),
                           kernel=_he_kernel(3, 3, channels, channels, _child_seed(seed, 1)),
                           spec=cspec))
    nodes.append(LayerNode("conv", (len(nodes) - 1,),
                           kernel=_he_kernel(1, 1, channels, n_classes, _child_seed(seed, 2)),
                           spec=ops.ConvSpec()))
    return Fragment(tuple(nodes), in_channels, n_classes)


@dataclass(frozen=True)
class NetworkGraph:
    """Assembled, shape-validated graph bound to one input size.

    Immutable after assembly; concurrent forward/grad evaluations on
    distinct images are safe.
    """

    nodes: tuple[LayerNode, ...]
    shapes: tuple[tuple[int, int, int], ...]
    input_shape: tuple[int, int, int]
    n_classes: int
    output_stride: int
    encoder_exit: int = 0

    @property
    def output_shape(self) -> tuple[int, int, int]:
        return self.shapes[-1]

    def forward(self, image: Tensor) -> Tensor:
        """Evaluate the graph; output keeps the input's spatial size."""
        outputs, _ = self._evaluate(image)
        return outputs[-1]

    def grad_wrt_input(self, image: Tensor, seed: Tensor) -> Tensor:
        """d(sum(seed * forward(image)))/d(image) by reverse traversal."""
        if seed.shape != self.output_shape:
            raise ValueError(
                f"seed shape {seed.shape} does not match output {self.output_shape}")
        outputs, contexts = self._evaluate(image)
        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[-1] = np.asarray(seed.data)

        def send(node_id: int, g: np.ndarray) -> None:
            if grads[node_id] is None:
                grads[node_id] = g.copy()
            else:
                grads[node_id] = grads[node_id] + g

        for nid in range(len(self.nodes) - 1, 0, -1):
            if grads[nid] is None:
                continue
            node = self.nodes[nid]
            g = Tensor(grads[nid])
            if node.kind == "conv":
                gx = ops.conv2d_input_grad(g, node.kernel, node.spec,
                                           self.shapes[node.preds[0]])
                send(node.preds[0], gx.data)
            elif node.kind == "relu":
                send(node.preds[0], ops.relu_input_grad(g, contexts[nid]).data)
            elif node.kind == "maxpool":
                send(node.preds[0], ops.maxpool_input_grad(g, contexts[nid]).data)
            elif node.kind == "bilinear_resize":
                gx = ops.bilinear_upsample_input_grad(g, self.shapes[node.preds[0]])
                send(node.preds[0], gx.data)
            elif node.kind == "global_avgpool":
                gx = ops.global_avgpool_input_grad(g, self.shapes[node.preds[0]])
                send(node.preds[0], gx.data)
            elif node.kind == "concat":
                offset = 0
                for pid in node.preds:
                    c = self.shapes[pid][2]
                    send(pid, grads[nid][:, :, offset:offset + c])
                    offset += c
            elif node.kind == "add":
                for pid in node.preds:
                    send(pid, grads[nid])
        if grads[0] is None:
            return Tensor(np.zeros(self.input_shape))
        return Tensor(grads[0])

    def _evaluate(self, image: Tensor):
        if image.shape != self.input_shape:
            raise ValueError(
                f"image shape {image.shape} does not match graph input {self.input_shape}")
        outputs: list[Tensor] = []
        contexts: dict[int, object] = {}
        for nid, node in enumerate(self.nodes):
            if node.kind == "input":
                outputs.append(image)
            elif node.kind == "conv":
                outputs.append(ops.conv2d_forward(outputs[node.preds[0]],
                                                  node.kernel, node.spec))
            elif node.kind == "relu":
                y, ctx = ops.relu_forward(outputs[node.preds[0]])
                outputs.append(y)
                contexts[nid] = ctx
            elif node.kind == "maxpool":
                y, ctx = ops.maxpool_forward(outputs[node.preds[0]])
                outputs.append(y)
                contexts[nid] = ctx
            elif node.kind == "bilinear_resize":
                th, tw, _ = self.shapes[node.size_ref]
                outputs.append(ops.bilinear_upsample_forward(
                    outputs[node.preds[0]], th, tw))
            elif node.kind == "global_avgpool":
                outputs.append(ops.global_avgpool_forward(outputs[node.preds[0]]))
            elif node.kind == "concat":
                outputs.append(Tensor(np.concatenate(
                    [outputs[p].data for p in node.preds], axis=2)))
            elif node.kind == "add":
                acc = outputs[node.preds[0]].data.copy()
                for pid in node.preds[1:]:
                    acc += outputs[pid].data
                outputs.append(Tensor(acc))
            else:
                raise GraphBuildError(f"unknown node kind {node.kind!r}")
        return outputs, contexts


def _splice(nodes: list[LayerNode], fragment: Fragment, entry: int) -> int:
    """Append fragment nodes, remapping -1 preds to ``entry``; returns exit id."""
    offset = len(nodes)

    def remap(idx: int) -> int:
        return entry if idx == -1 else offset + idx

    for fnode in fragment.nodes:
        nodes.append(LayerNode(
            fnode.kind,
            tuple(remap(p) for p in fnode.preds),
            kernel=fnode.kernel,
            spec=fnode.spec,
            size_ref=None if fnode.size_ref is None else remap(fnode.size_ref),
        ))
    return entry if not fragment.nodes else len(nodes) - 1


def _infer_shapes(nodes: list[LayerNode],
                  input_shape: tuple[int, int, int]) -> list[tuple[int, int, int]]:
    shapes: list[tuple[int, int, int]] = []
    for node in nodes:
        if node.kind == "input":
            shapes.append(input_shape)
            continue
        ph, pw, pc = shapes[node.preds[0]]
        if node.kind == "conv":
            if pc != node.kernel.in_channels:
                raise GraphBuildError(
                    f"conv expects {node.kernel.in_channels} channels, gets {pc}")
            shapes.append((ops.conv_output_size(ph, node.kernel.kh, node.spec),
                           ops.conv_output_size(pw, node.kernel.kw, node.spec),
                           node.kernel.out_channels))
        elif node.kind == "relu":
            shapes.append((ph, pw, pc))
        elif node.kind == "maxpool":
            if ph % 2 or pw % 2:
                raise GraphBuildError(f"maxpool needs even dims, got {ph}x{pw}")
            shapes.append((ph // 2, pw // 2, pc))
        elif node.kind == "bilinear_resize":
            th, tw, _ = shapes[node.size_ref]
            if th < ph or tw < pw:
                raise GraphBuildError(
                    f"resize target {th}x{tw} smaller than source {ph}x{pw}")
            shapes.append((th, tw, pc))
        elif node.kind == "global_avgpool":
            shapes.append((1, 1, pc))
        elif node.kind == "concat":
            for pid in node.preds[1:]:
                qh, qw, _ = shapes[pid]
                if (qh, qw) != (ph, pw):
                    raise GraphBuildError(
                        f"concat spatial mismatch: {(ph, pw)} vs {(qh, qw)}")
            shapes.append((ph, pw, sum(shapes[p][2] for p in node.preds)))
        elif node.kind == "add":
            for pid in node.preds[1:]:
                if shapes[pid] != (ph, pw, pc):
                    raise GraphBuildError(
                        f"add shape mismatch: {(ph, pw, pc)} vs {shapes[pid]}")
            shapes.append((ph, pw, pc))
        else:
            raise GraphBuildError(f"unknown node kind {node.kind!r}")
    return shapes


def _derive_stride(input_shape, feat_shape) -> int:
    ih, iw, _ = input_shape
    fh, fw, _ = feat_shape
    if ih % fh or iw % fw or ih // fh != iw // fw:
        raise GraphBuildError(
            f"non-uniform stride path: input {ih}x{iw}, features {fh}x{fw}")
    return ih // fh


def assemble(encoder: Fragment, head: Fragment, input_h: int, input_w: int,
             input_channels: int | None = None) -> NetworkGraph:
    """Stitch input -> encoder -> head -> bilinear resize back to input size.

    Channel counts are validated across the fragment boundary; the head's
    internal resize (if any) targets the encoder output, the final resize
    targets the input node, so the output spatial size always equals the
    input's.
    """
    if encoder.out_channels is not None and head.in_channels is not None \
            and encoder.out_channels != head.in_channels:
        raise GraphBuildError(
            f"encoder yields {encoder.out_channels} channels, "
            f"head expects {head.in_channels}")
    cin = input_channels
    if cin is None:
        cin = encoder.in_channels if encoder.in_channels is not None else head.in_channels
    if cin is None:
        cin = 1
    if encoder.in_channels is not None and cin != encoder.in_channels:
        raise GraphBuildError(
            f"input has {cin} channels, encoder expects {encoder.in_channels}")
    if encoder.in_channels is None and head.in_channels is not None \
            and cin != head.in_channels:
        raise GraphBuildError(
            f"input has {cin} channels, head expects {head.in_channels}")

    nodes: list[LayerNode] = [LayerNode("input", ())]
    enc_exit = _splice(nodes, encoder, 0)
    head_exit = _splice(nodes, head, enc_exit)
    nodes.append(LayerNode("bilinear_resize", (head_exit,), size_ref=0))

    input_shape = (int(input_h), int(input_w), int(cin))
    shapes = _infer_shapes(nodes, input_shape)
    stride = _derive_stride(input_shape, shapes[enc_exit])
    n_classes = shapes[-1][2]
    return NetworkGraph(tuple(nodes), tuple(shapes), input_shape, n_classes,
                        stride, encoder_exit=enc_exit)


def fragment_graph(fragment: Fragment, input_h: int, input_w: int,
                   input_channels: int | None = None) -> NetworkGraph:
    """Wrap a single fragment as a graph with no final resize.

    Used to probe a head in isolation at feature resolution: the graph's
    input plays the role of the encoder feature map.
    """
    cin = input_channels if input_channels is not None else fragment.in_channels
    if cin is None:
        cin = 1
    if fragment.in_channels is not None and cin != fragment.in_channels:
        raise GraphBuildError(
            f"input has {cin} channels, fragment expects {fragment.in_channels}")
    nodes: list[LayerNode] = [LayerNode("input", ())]
    _splice(nodes, fragment, 0)
    input_shape = (int(input_h), int(input_w), int(cin))
    shapes = _infer_shapes(nodes, input_shape)
    return NetworkGraph(tuple(nodes), tuple(shapes), input_shape, shapes[-1][2],
                        _derive_stride(input_shape, shapes[0]), encoder_exit=0)


def infer_output_stride(net: NetworkGraph) -> int:
    """Downsampling ratio from the input to the encoder output (head input)."""
    return net.output_stride
