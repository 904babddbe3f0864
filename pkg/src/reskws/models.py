"""The res8 / res15 / res26 families (wide n=45, narrow n=19) and their footprints.

A model is described by an ``ArchSpec``; ``layer_plan`` expands it into a flat
list of ops, which is the single source for building the network, counting
parameters and multiplies, and computing the receptive field.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn

N_CLASSES = 12
INPUT_DIMS = (98, 40)


@dataclass(frozen=True)
class ArchSpec:
    name: str
    n_feature_maps: int
    n_res_blocks: int
    front_pool: tuple | None = None
    dilation_enabled: bool = False
    n_classes: int = N_CLASSES


VARIANTS = {
    "res15": ArchSpec("res15", 45, 6, None, True),
    "res15-narrow": ArchSpec("res15-narrow", 19, 6, None, True),
    "res26": ArchSpec("res26", 45, 12, (2, 2), False),
    "res26-narrow": ArchSpec("res26-narrow", 19, 12, (2, 2), False),
    "res8": ArchSpec("res8", 45, 3, (4, 3), False),
    "res8-narrow": ArchSpec("res8-narrow", 19, 3, (4, 3), False),
}


def get_spec(name) -> ArchSpec:
    if isinstance(name, ArchSpec):
        return name
    try:
        return VARIANTS[name]
    except KeyError:
        raise ValueError(f"unknown architecture {name!r}; valid names: {', '.join(VARIANTS)}") from None


def dilation_at(i: int) -> int:
    """Dilation of the i-th conv inside the residual chain of res15: 2**(i // 3)."""
    return 2 ** (i // 3)


# final non-residual conv of the dilated variants
FINAL_DILATION = 16


@dataclass(frozen=True)
class Op:
    kind: str  # conv | relu | bn | pool | res | gap | softmax
    n_in: int = 0
    n_out: int = 0
    dilation: tuple = (1, 1)  # (d_h, d_w); for res, the two convs' dilations
    window: tuple = ()


def layer_plan(spec) -> list[Op]:
    spec = get_spec(spec)
    n = spec.n_feature_maps
    plan = [Op("conv", 1, n, (1, 1)), Op("relu", n, n)]
    if spec.front_pool:
        plan.append(Op("pool", n, n, window=tuple(spec.front_pool)))
    for k in range(spec.n_res_blocks):
        if spec.dilation_enabled:
            d1, d2 = dilation_at(2 * k), dilation_at(2 * k + 1)
        else:
            d1 = d2 = 1
        plan.append(Op("res", n, n, (d1, d2)))
    if spec.dilation_enabled:
        plan += [Op("conv", n, n, (FINAL_DILATION, FINAL_DILATION)), Op("relu", n, n), Op("bn", n, n)]
    plan += [Op("gap", n, n), Op("softmax", n, spec.n_classes)]
    return plan


class KWSModel:
    """A built network: feature stack, global average pool, bias-free softmax layer."""

    def __init__(self, spec, rng=None):
        self.spec = get_spec(spec)
        rng = np.random.default_rng(0) if rng is None else rng
        layers, n_conv, n_res = [], 0, 0
        for op in layer_plan(self.spec):
            if op.kind == "conv":
                name = "stem" if n_conv == 0 else "final"
                layers.append(nn.Conv2d(op.n_in, op.n_out, op.dilation, rng, name))
                n_conv += 1
            elif op.kind == "relu":
                layers.append(nn.ReLU())
            elif op.kind == "bn":
                layers.append(nn.BatchNorm2d(op.n_out, name="final.bn"))
            elif op.kind == "pool":
                layers.append(nn.AvgPool2d(op.window))
            elif op.kind == "res":
                layers.append(nn.ResidualBlock(op.n_in, op.dilation, rng, f"res{n_res}"))
                n_res += 1
            elif op.kind == "gap":
                layers.append(nn.GlobalAvgPool())
            elif op.kind == "softmax":
                self.classifier = nn.Linear(op.n_in, op.n_out, rng, "fc")
        self.features = nn.Sequential(layers)

    @property
    def name(self):
        return self.spec.name

    def forward(self, x, train=False):
        """Logits for a batch of feature matrices, shape (N, T, F) or (N, 1, T, F)."""
        x = np.asarray(x)
        if x.ndim == 3:
            x = x[:, None]
        return self.classifier.forward(self.features.forward(x, train), train)

    def backward(self, grad_logits):
        return self.features.backward(self.classifier.backward(grad_logits))

    def parameters(self):
        return self.features.parameters() + self.classifier.parameters()

    def buffers(self):
        return self.features.buffers()

    def state_tensors(self):
        """Parameters and batch-norm buffers keyed by layer name."""
        return {t.name: t for t in self.parameters() + self.buffers()}

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def predict_proba(self, x, batch_size=64):
        x = np.asarray(x)
        out = [nn.softmax(self.forward(x[i : i + batch_size]).astype(np.float64)) for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, self.spec.n_classes))

    def n_params(self):
        return sum(p.data.size for p in self.parameters())


def build(spec, rng=None) -> KWSModel:
    return KWSModel(spec, rng)


@dataclass
class FootprintRow:
    type: str
    m: int | None
    r: int | None
    n: int
    d_w: list | None
    d_h: list | None
    params: int
    multiplies: int
    positions: int | None = None  # spatial positions a conv is applied at
    count: int = 1


@dataclass
class Footprint:
    arch: str
    input_dims: tuple
    rows: list = field(default_factory=list)  # residual convs merged into one row per model
    layers: list = field(default_factory=list)  # one row per conv / pool / bn / fc

    @property
    def n_params(self):
        return sum(r.params for r in self.rows)

    @property
    def n_multiplies(self):
        return sum(r.multiplies for r in self.rows)

    def to_dict(self):
        return {
            "arch": self.arch,
            "input_dims": list(self.input_dims),
            "n_params": self.n_params,
            "n_multiplies": self.n_multiplies,
            "rows": [asdict(r) for r in self.rows],
            "layers": [asdict(r) for r in self.layers],
        }

    def to_text(self):
        head = f"{'type':>10} {'m':>3} {'r':>3} {'n':>3} {'d_w':>12} {'d_h':>12} {'Par.':>10} {'Mult.':>14}"
        lines = [f"{self.arch} @ T={self.input_dims[0]}, F={self.input_dims[1]}", head, "-" * len(head)]

        def fmt(v):
            if v is None:
                return "-"
            if isinstance(v, list):
                return ",".join(str(x) for x in sorted(set(v)))
            return str(v)

        for r in self.rows:
            label = r.type if r.count == 1 else f"{r.type} x {r.count}"
            lines.append(
                f"{label:>10} {fmt(r.m):>3} {fmt(r.r):>3} {r.n:>3} {fmt(r.d_w):>12} {fmt(r.d_h):>12} "
                f"{f'{r.params:,}' if r.params else '-':>10} {r.multiplies:>14,}"
            )
        lines.append("-" * len(head))
        lines.append(f"{'Total':>10} {'':>3} {'':>3} {'':>3} {'':>12} {'':>12} {self.n_params:>10,} {self.n_multiplies:>14,}")
        return "\n".join(lines)


def footprint(spec, input_dims=INPUT_DIMS) -> Footprint:
    """Parameter and multiply counts of one inference pass.

    Conv: weights x spatial positions. Front pooling: one per output element.
    Standalone bn: one per element. Global pooling: one per feature map.
    Softmax layer: its weight count. Batch norm inside residual blocks is not
    counted; a residual row carries only its conv costs.
    """
    spec = get_spec(spec)
    h, w = input_dims
    if h < 1 or w < 1:
        raise ValueError("input dims must be positive")
    fp = Footprint(spec.name, (h, w))
    res_rows = []
    for op in layer_plan(spec):
        if op.kind == "conv":
            p = 9 * op.n_in * op.n_out
            row = FootprintRow("conv", 3, 3, op.n_out, [op.dilation[1]], [op.dilation[0]], p, p * h * w, h * w)
            fp.layers.append(row)
            _flush_res(fp, res_rows)
            fp.rows.append(row)
        elif op.kind == "pool":
            ph, pw = op.window
            h, w = h // ph, w // pw
            row = FootprintRow("avg-pool", pw, ph, op.n_out, None, None, 0, op.n_out * h * w, h * w)
            fp.layers.append(row)
            fp.rows.append(row)
        elif op.kind == "res":
            p = 9 * op.n_in * op.n_out
            for d in op.dilation:
                row = FootprintRow("conv", 3, 3, op.n_out, [d], [d], p, p * h * w, h * w)
                fp.layers.append(row)
                res_rows.append(row)
        elif op.kind == "bn":
            row = FootprintRow("bn", None, None, op.n_out, None, None, 0, op.n_out * h * w, h * w)
            fp.layers.append(row)
            _flush_res(fp, res_rows)
            fp.rows.append(row)
        elif op.kind == "gap":
            _flush_res(fp, res_rows)
            row = FootprintRow("avg-pool", None, None, op.n_out, None, None, 0, op.n_out)
            fp.layers.append(row)
            fp.rows.append(row)
        elif op.kind == "softmax":
            p = op.n_in * op.n_out
            row = FootprintRow("softmax", None, None, op.n_out, None, None, p, p)
            fp.layers.append(row)
            fp.rows.append(row)
    return fp


def _flush_res(fp, res_rows):
    # group the residual convs into one "res x k" row
    if not res_rows:
        return
    merged = FootprintRow(
        "res",
        3,
        3,
        res_rows[0].n,
        [r.d_w[0] for r in res_rows],
        [r.d_h[0] for r in res_rows],
        sum(r.params for r in res_rows),
        sum(r.multiplies for r in res_rows),
        res_rows[0].positions,
        count=len(res_rows) // 2,
    )
    fp.rows.append(merged)
    res_rows.clear()


def receptive_field(spec) -> tuple[int, int]:
    """(rf_h, rf_w) of one output unit before global pooling, in input frames and coefficients.

    Each 3x3 conv with dilation d adds 2*d*jump; a pooling window p adds
    (p - 1)*jump and multiplies the jump by p.
    """
    rf = [1, 1]
    jump = [1, 1]

    def conv(d):
        for a in range(2):
            rf[a] += 2 * d[a] * jump[a]

    for op in layer_plan(spec):
        if op.kind == "conv":
            conv(op.dilation)
        elif op.kind == "res":
            for d in op.dilation:
                conv((d, d))
        elif op.kind == "pool":
            for a in range(2):
                rf[a] += (op.window[a] - 1) * jump[a]
                jump[a] *= op.window[a]
    return rf[0], rf[1]
