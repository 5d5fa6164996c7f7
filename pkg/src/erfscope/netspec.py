"""Line-oriented network description files.

Grammar (one directive per line, `#` starts a comment):

    encoder stride=16 channels=8,16,32,64
    head aspp rate=6 branches=32 image_pool=on
    head fcn_d6 rate=6 channels=32
    classes 19
    seed 42

`encoder` and `head` are required, each at most once. `stride` must be a
power of two in [1, 32]; `channels` (optional) must list exactly log2(stride)
widths. `head aspp` takes `rate` (required), `branches` (default 32) and
`image_pool` on|off (default on); `head fcn_d6` takes `rate` (required) and
`channels` (default 32). `classes` defaults to 2 with a warning; `seed`
defaults to 0. Parsing collects every problem before failing, so one bad
file surfaces all of its line-numbered errors at once.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .graph import (AsppSpec, Fragment, NetworkGraph, _child_seed, assemble,
                    build_aspp_head, build_encoder, build_fcn_d6_head)

VALID_STRIDES = (1, 2, 4, 8, 16, 32)


class NetworkConfigError(ValueError):
    """All parse problems for one file, each message prefixed `line N:`."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


@dataclass(frozen=True)
class NetworkPlan:
    """Validated build plan; graph construction is deferred to the caller."""

    stride: int
    head: str                              # "aspp" | "fcn_d6"
    rate: int
    channels: tuple[int, ...] | None = None
    branches: int = 32
    image_pool: bool = True
    classes: int = 2
    seed: int = 0
    warnings: tuple[str, ...] = field(default=())


def _parse_int(value: str, key: str, line_no: int, errors: list[str],
               minimum: int = 1) -> int | None:
    try:
        n = int(value)
    except ValueError:
        errors.append(f"line {line_no}: {key} expects an integer, got {value!r}")
        return None
    if n < minimum:
        errors.append(f"line {line_no}: {key} must be >= {minimum}, got {n}")
        return None
    return n


def _parse_kv(tokens: list[str], line_no: int, errors: list[str]) -> dict[str, str]:
    out: dict[str, str] = {}
    for tok in tokens:
        if "=" not in tok:
            errors.append(f"line {line_no}: expected key=value, got {tok!r}")
            continue
        key, _, value = tok.partition("=")
        if key in out:
            errors.append(f"line {line_no}: duplicate key {key!r}")
            continue
        out[key] = value
    return out


def parse_network_text(text: str) -> NetworkPlan:
    """Parse config text into a plan, or raise NetworkConfigError with
    every line-numbered problem found."""
    errors: list[str] = []
    warnings: list[str] = []
    seen: dict[str, int] = {}
    stride = None
    channels = None
    head = None
    rate = None
    branches = 32
    image_pool = True
    classes = None
    seed = 0

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        directive = tokens[0]

        if directive in seen:
            what = "heads" if directive == "head" else f"{directive} directives"
            errors.append(f"line {line_no}: conflicting {what} "
                          f"(already set on line {seen[directive]})")
            continue
        seen[directive] = line_no

        if directive == "encoder":
            kv = _parse_kv(tokens[1:], line_no, errors)
            for key in kv:
                if key not in ("stride", "channels"):
                    errors.append(f"line {line_no}: unknown encoder key {key!r}")
            if "stride" not in kv:
                errors.append(f"line {line_no}: encoder needs stride=")
            else:
                stride = _parse_int(kv["stride"], "stride", line_no, errors)
                if stride is not None and stride not in VALID_STRIDES:
                    errors.append(f"line {line_no}: stride must be a power of two "
                                  f"in {list(VALID_STRIDES)}, got {stride}")
                    stride = None
            if "channels" in kv:
                widths = [_parse_int(v, "channels", line_no, errors)
                          for v in kv["channels"].split(",")]
                if all(w is not None for w in widths):
                    channels = tuple(widths)

        elif directive == "head":
            if len(tokens) < 2 or "=" in tokens[1]:
                errors.append(f"line {line_no}: head needs a kind (aspp | fcn_d6)")
                continue
            head = tokens[1]
            kv = _parse_kv(tokens[2:], line_no, errors)
            if head == "aspp":
                allowed = ("rate", "branches", "image_pool")
            elif head == "fcn_d6":
                allowed = ("rate", "channels")
            else:
                errors.append(f"line {line_no}: unknown head kind {head!r}")
                head = None
                continue
            for key in kv:
                if key not in allowed:
                    errors.append(f"line {line_no}: unknown {head} key {key!r}")
            if "rate" not in kv:
                errors.append(f"line {line_no}: head needs rate=")
            else:
                rate = _parse_int(kv["rate"], "rate", line_no, errors)
            if "branches" in kv:
                branches = _parse_int(kv["branches"], "branches", line_no, errors) or branches
            if "channels" in kv:
                branches = _parse_int(kv["channels"], "channels", line_no, errors) or branches
            if "image_pool" in kv:
                if kv["image_pool"] not in ("on", "off"):
                    errors.append(f"line {line_no}: image_pool expects on|off, "
                                  f"got {kv['image_pool']!r}")
                else:
                    image_pool = kv["image_pool"] == "on"

        elif directive == "classes":
            if len(tokens) != 2:
                errors.append(f"line {line_no}: classes expects one integer")
            else:
                classes = _parse_int(tokens[1], "classes", line_no, errors)

        elif directive == "seed":
            if len(tokens) != 2:
                errors.append(f"line {line_no}: seed expects one integer")
            else:
                seed = _parse_int(tokens[1], "seed", line_no, errors, minimum=0)

        else:
            errors.append(f"line {line_no}: unknown directive {directive!r}")

    if "encoder" not in seen:
        errors.append("line 0: missing encoder directive")
    if "head" not in seen:
        errors.append("line 0: missing head directive")
    if stride is not None and channels is not None:
        stages = stride.bit_length() - 1
        if len(channels) != stages:
            errors.append(f"line {seen['encoder']}: stride {stride} needs exactly "
                          f"{stages} channel widths, got {len(channels)}")
    if classes is None:
        classes = 2
        warnings.append("classes not specified; defaulting to 2")

    if errors:
        raise NetworkConfigError(errors)
    return NetworkPlan(stride=stride, head=head, rate=rate, channels=channels,
                       branches=branches, image_pool=image_pool, classes=classes,
                       seed=seed or 0, warnings=tuple(warnings))


def parse_network_config(path: str | Path) -> NetworkPlan:
    return parse_network_text(Path(path).read_text())


def config_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def plan_encoder(plan: NetworkPlan, input_channels: int = 3) -> Fragment:
    return build_encoder(plan.stride, plan.channels, seed=_child_seed(plan.seed, 0),
                         in_channels=input_channels)


def plan_to_graph(plan: NetworkPlan, input_h: int, input_w: int,
                  input_channels: int = 3) -> NetworkGraph:
    """Materialize the plan at a concrete input size.

    Weight seeds derive deterministically from the plan seed, so two runs
    of the same config file build bit-identical weights.
    """
    encoder = plan_encoder(plan, input_channels)
    feat_channels = encoder.out_channels if encoder.out_channels is not None \
        else input_channels
    head_seed = _child_seed(plan.seed, 1)
    if plan.head == "aspp":
        head = build_aspp_head(
            AsppSpec(plan.rate, plan.branches, feat_channels),
            plan.classes, image_pool=plan.image_pool, seed=head_seed)
    else:
        head = build_fcn_d6_head(plan.rate, plan.classes, in_channels=feat_channels,
                                 channels=plan.branches, seed=head_seed)
    return assemble(encoder, head, input_h, input_w,
                    input_channels=input_channels if encoder.in_channels is None else None)
