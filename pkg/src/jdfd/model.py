"""Two-branch convolutional autoencoder with a shared encoder.

The encoder compresses an RGB image into a latent vector; that single latent
feeds both a mirrored deconvolution decoder (reconstruction branch) and a
shallow two-layer classifier (real/fake branch). The backward pass is
hand-composed from the layer primitives in :mod:`jdfd.ops` and accumulates
gradients of both branches into the shared encoder.

Architecture (image sizes must be divisible by 16):

* encoder: 4 x [conv 3x3 stride 2 pad 1, batchnorm, ReLU] with channels
  3 -> 16 -> 32 -> 64 -> 128, flatten, linear to the latent dimension.
* decoder: linear to 128 * (h/16) * (w/16), reshape, 4 x [deconv 2x2
  stride 2, batchnorm, ReLU] with channels 128 -> 64 -> 32 -> 16 -> 16,
  conv 3x3 pad 1 down to 3 channels (no activation), bilinear resize to the
  input size.
* classifier: linear z -> 64, ReLU, linear 64 -> 2 (no activation after the
  last layer); class probabilities are a per-sample softmax over the two
  logits.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import ops
from .config import TrainConfig
from .ops import BatchNormState, ShapeError
from .rng import Rng
from .tensor import Tensor

ENC_CHANNELS = (3, 16, 32, 64, 128)
ENC_KERNEL, ENC_STRIDE, ENC_PAD = 3, 2, 1
DEC_CHANNELS = (128, 64, 32, 16, 16)
DEC_KERNEL, DEC_STRIDE = 2, 2
OUT_KERNEL, OUT_PAD = 3, 1
CLS_HIDDEN = 64

CHECKPOINT_MAGIC = b"JDFD1"


@dataclass
class ConvBlock:
    # No conv bias: the block's batchnorm shift would cancel it exactly,
    # which would leave a permanently zero-gradient parameter.
    weight: Tensor
    bn: BatchNormState


@dataclass
class LinearLayer:
    weight: Tensor
    bias: Tensor


@dataclass
class JdfdParams:
    """All learnable parameters, partitioned into the three branch groups."""

    image_size: tuple[int, int]
    latent_dim: int
    encoder_blocks: list[ConvBlock]
    encoder_fc: LinearLayer
    decoder_fc: LinearLayer | None
    decoder_blocks: list[ConvBlock] | None
    decoder_out: LinearLayer | None
    classifier_fc1: LinearLayer
    classifier_fc2: LinearLayer

    @property
    def has_decoder(self) -> bool:
        return self.decoder_fc is not None

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        """Learnable tensors with stable, group-prefixed names."""
        for i, blk in enumerate(self.encoder_blocks):
            yield f"encoder.block{i}.conv.weight", blk.weight
            yield f"encoder.block{i}.bn.gamma", blk.bn.gamma
            yield f"encoder.block{i}.bn.beta", blk.bn.beta
        yield "encoder.fc.weight", self.encoder_fc.weight
        yield "encoder.fc.bias", self.encoder_fc.bias
        if self.has_decoder:
            yield "decoder.fc.weight", self.decoder_fc.weight
            yield "decoder.fc.bias", self.decoder_fc.bias
            for i, blk in enumerate(self.decoder_blocks):
                yield f"decoder.block{i}.deconv.weight", blk.weight
                yield f"decoder.block{i}.bn.gamma", blk.bn.gamma
                yield f"decoder.block{i}.bn.beta", blk.bn.beta
            yield "decoder.out.weight", self.decoder_out.weight
            yield "decoder.out.bias", self.decoder_out.bias
        yield "classifier.fc1.weight", self.classifier_fc1.weight
        yield "classifier.fc1.bias", self.classifier_fc1.bias
        yield "classifier.fc2.weight", self.classifier_fc2.weight
        yield "classifier.fc2.bias", self.classifier_fc2.bias

    def named_buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        """Batchnorm running statistics (not learnable, but checkpointed)."""
        groups = [("encoder", self.encoder_blocks)]
        if self.has_decoder:
            groups.append(("decoder", self.decoder_blocks))
        for prefix, blocks in groups:
            for i, blk in enumerate(blocks):
                yield f"{prefix}.block{i}.bn.running_mean", blk.bn.running_mean
                yield f"{prefix}.block{i}.bn.running_var", blk.bn.running_var

    def group_of(self, name: str) -> str:
        return name.split(".", 1)[0]

    def zero_grads(self) -> None:
        for _, tensor in self.named_parameters():
            tensor.zero_grad()


def init_params(config: TrainConfig, rng: Rng, with_decoder: bool = True) -> JdfdParams:
    """He-initialized parameters for the configured architecture.

    Weights draw from Gaussian(0, sqrt(2 / fan_in)); biases start at zero,
    batchnorm at gamma 1 / beta 0. Each branch draws from its own sub-stream,
    so encoder and classifier values do not depend on whether the decoder is
    built (the decoder-free baseline stays comparable parameter-for-parameter).
    """
    h = w = int(config.image_size)
    if h % 16 != 0 or h < 16:
        raise ShapeError(f"image size {h} is not divisible by 16")
    z = int(config.latent_dim)
    if z < 1:
        raise ShapeError(f"latent dimension must be >= 1, got {z}")
    dtype = config.dtype
    enc_rng = Rng(rng.next_u64())
    dec_rng = Rng(rng.next_u64())
    cls_rng = Rng(rng.next_u64())

    def he_weight(r: Rng, shape: tuple[int, ...], fan_in: int) -> Tensor:
        std = np.sqrt(2.0 / fan_in)
        data = (r.gaussian(int(np.prod(shape))) * std).reshape(shape).astype(dtype)
        return Tensor(data, requires_grad=True)

    def zeros(n: int) -> Tensor:
        return Tensor(np.zeros(n, dtype=dtype), requires_grad=True)

    def conv_block(r: Rng, c_in: int, c_out: int, k: int) -> ConvBlock:
        return ConvBlock(
            weight=he_weight(r, (c_out, c_in, k, k), c_in * k * k),
            bn=BatchNormState.create(c_out, dtype=dtype),
        )

    def deconv_block(r: Rng, c_in: int, c_out: int, k: int) -> ConvBlock:
        return ConvBlock(
            weight=he_weight(r, (c_in, c_out, k, k), c_in * k * k),
            bn=BatchNormState.create(c_out, dtype=dtype),
        )

    def linear_layer(r: Rng, d_in: int, d_out: int) -> LinearLayer:
        return LinearLayer(weight=he_weight(r, (d_out, d_in), d_in), bias=zeros(d_out))

    h16, w16 = h // 16, w // 16
    flat_dim = ENC_CHANNELS[-1] * h16 * w16

    encoder_blocks = [
        conv_block(enc_rng, ENC_CHANNELS[i], ENC_CHANNELS[i + 1], ENC_KERNEL)
        for i in range(4)
    ]
    encoder_fc = linear_layer(enc_rng, flat_dim, z)

    decoder_fc = decoder_blocks = decoder_out = None
    if with_decoder:
        decoder_fc = linear_layer(dec_rng, z, flat_dim)
        decoder_blocks = [
            deconv_block(dec_rng, DEC_CHANNELS[i], DEC_CHANNELS[i + 1], DEC_KERNEL)
            for i in range(4)
        ]
        decoder_out = LinearLayer(
            weight=he_weight(
                dec_rng,
                (3, DEC_CHANNELS[-1], OUT_KERNEL, OUT_KERNEL),
                DEC_CHANNELS[-1] * OUT_KERNEL * OUT_KERNEL,
            ),
            bias=zeros(3),
        )

    classifier_fc1 = linear_layer(cls_rng, z, CLS_HIDDEN)
    classifier_fc2 = linear_layer(cls_rng, CLS_HIDDEN, 2)

    return JdfdParams(
        image_size=(h, w),
        latent_dim=z,
        encoder_blocks=encoder_blocks,
        encoder_fc=encoder_fc,
        decoder_fc=decoder_fc,
        decoder_blocks=decoder_blocks,
        decoder_out=decoder_out,
        classifier_fc1=classifier_fc1,
        classifier_fc2=classifier_fc2,
    )


def softmax2(logits: np.ndarray) -> np.ndarray:
    """Numerically stable per-sample softmax over the two class logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# Forward passes and their hand-composed backwards
# ---------------------------------------------------------------------------

@dataclass
class EncodeCache:
    convs: list[ops.Conv2dCache]
    bns: list[ops.BnCache]
    relus: list[ops.ReluCache]
    feat_shape: tuple[int, ...]
    fc: ops.LinearCache


@dataclass
class DecodeCache:
    fc: ops.LinearCache
    pre_shape: tuple[int, ...]
    deconvs: list[ops.ConvT2dCache]
    bns: list[ops.BnCache]
    relus: list[ops.ReluCache]
    out_conv: ops.Conv2dCache
    resize: ops.ResizeCache


@dataclass
class ClassifyCache:
    fc1: ops.LinearCache
    relu: ops.ReluCache
    fc2: ops.LinearCache


@dataclass
class ModelOutput:
    latent: np.ndarray
    reconstruction: np.ndarray | None
    logits: np.ndarray
    probabilities: np.ndarray


def _check_input(x: np.ndarray, params: JdfdParams) -> None:
    h, w = params.image_size
    if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != h or x.shape[3] != w:
        raise ShapeError(
            f"expected input of shape (n, 3, {h}, {w}), got {tuple(x.shape)}"
        )


def encode(x: np.ndarray, params: JdfdParams, train: bool) -> tuple[np.ndarray, EncodeCache]:
    """Shared encoder: image batch to latent matrix (n, z)."""
    _check_input(x, params)
    convs, bns, relus = [], [], []
    h = x
    for blk in params.encoder_blocks:
        h, cc = ops.conv2d(h, blk.weight.data, None, stride=ENC_STRIDE, pad=ENC_PAD)
        convs.append(cc)
        h, bc = ops.batchnorm2d(h, blk.bn, train)
        bns.append(bc)
        h, rc = ops.relu(h)
        relus.append(rc)
    feat_shape = h.shape
    flat = h.reshape(h.shape[0], -1)
    v, fc = ops.linear(flat, params.encoder_fc.weight.data, params.encoder_fc.bias.data)
    return v, EncodeCache(convs, bns, relus, feat_shape, fc)


def encode_backward(dv: np.ndarray, cache: EncodeCache, params: JdfdParams) -> np.ndarray:
    """Accumulate encoder gradients; returns the input-image gradient."""
    g, gw, gb = ops.linear_backward(dv, cache.fc)
    params.encoder_fc.weight.ensure_grad()[...] += gw
    params.encoder_fc.bias.ensure_grad()[...] += gb
    g = g.reshape(cache.feat_shape)
    for i in range(len(params.encoder_blocks) - 1, -1, -1):
        blk = params.encoder_blocks[i]
        g = ops.relu_backward(g, cache.relus[i])
        g, ggamma, gbeta = ops.batchnorm2d_backward(g, cache.bns[i])
        blk.bn.gamma.ensure_grad()[...] += ggamma
        blk.bn.beta.ensure_grad()[...] += gbeta
        g, gw, _ = ops.conv2d_backward(g, cache.convs[i])
        blk.weight.ensure_grad()[...] += gw
    return g


def decode(v: np.ndarray, params: JdfdParams, train: bool) -> tuple[np.ndarray, DecodeCache]:
    """Decoder: latent matrix back to an (n, 3, h, w) reconstruction."""
    if not params.has_decoder:
        raise ShapeError("this parameter set was built without a decoder")
    if v.ndim != 2 or v.shape[1] != params.latent_dim:
        raise ShapeError(
            f"expected latent of shape (n, {params.latent_dim}), got {tuple(v.shape)}"
        )
    h_img, w_img = params.image_size
    h16, w16 = h_img // 16, w_img // 16
    g, fc = ops.linear(v, params.decoder_fc.weight.data, params.decoder_fc.bias.data)
    pre_shape = g.shape
    h = g.reshape(v.shape[0], DEC_CHANNELS[0], h16, w16)
    deconvs, bns, relus = [], [], []
    for blk in params.decoder_blocks:
        h, dc = ops.conv_transpose2d(h, blk.weight.data, None, stride=DEC_STRIDE, pad=0)
        deconvs.append(dc)
        h, bc = ops.batchnorm2d(h, blk.bn, train)
        bns.append(bc)
        h, rc = ops.relu(h)
        relus.append(rc)
    h, oc = ops.conv2d(h, params.decoder_out.weight.data, params.decoder_out.bias.data, stride=1, pad=OUT_PAD)
    xhat, rz = ops.bilinear_resize(h, h_img, w_img)
    return xhat, DecodeCache(fc, pre_shape, deconvs, bns, relus, oc, rz)


def decode_backward(dxhat: np.ndarray, cache: DecodeCache, params: JdfdParams) -> np.ndarray:
    """Accumulate decoder gradients; returns the latent gradient."""
    g = ops.bilinear_resize_backward(dxhat, cache.resize)
    g, gw, gb = ops.conv2d_backward(g, cache.out_conv)
    params.decoder_out.weight.ensure_grad()[...] += gw
    params.decoder_out.bias.ensure_grad()[...] += gb
    for i in range(len(params.decoder_blocks) - 1, -1, -1):
        blk = params.decoder_blocks[i]
        g = ops.relu_backward(g, cache.relus[i])
        g, ggamma, gbeta = ops.batchnorm2d_backward(g, cache.bns[i])
        blk.bn.gamma.ensure_grad()[...] += ggamma
        blk.bn.beta.ensure_grad()[...] += gbeta
        g, gw, _ = ops.conv_transpose2d_backward(g, cache.deconvs[i])
        blk.weight.ensure_grad()[...] += gw
    g = g.reshape(cache.pre_shape)
    dv, gw, gb = ops.linear_backward(g, cache.fc)
    params.decoder_fc.weight.ensure_grad()[...] += gw
    params.decoder_fc.bias.ensure_grad()[...] += gb
    return dv


def classify(v: np.ndarray, params: JdfdParams) -> tuple[np.ndarray, np.ndarray, ClassifyCache]:
    """Classifier: latent matrix to (logits, probabilities), both (n, 2)."""
    a, fc1 = ops.linear(v, params.classifier_fc1.weight.data, params.classifier_fc1.bias.data)
    a, rc = ops.relu(a)
    logits, fc2 = ops.linear(a, params.classifier_fc2.weight.data, params.classifier_fc2.bias.data)
    return logits, softmax2(logits), ClassifyCache(fc1, rc, fc2)


def classify_backward(dlogits: np.ndarray, cache: ClassifyCache, params: JdfdParams) -> np.ndarray:
    """Accumulate classifier gradients; returns the latent gradient."""
    g, gw, gb = ops.linear_backward(dlogits, cache.fc2)
    params.classifier_fc2.weight.ensure_grad()[...] += gw
    params.classifier_fc2.bias.ensure_grad()[...] += gb
    g = ops.relu_backward(g, cache.relu)
    dv, gw, gb = ops.linear_backward(g, cache.fc1)
    params.classifier_fc1.weight.ensure_grad()[...] += gw
    params.classifier_fc1.bias.ensure_grad()[...] += gb
    return dv


@dataclass
class JointCache:
    enc: EncodeCache
    dec: DecodeCache | None
    cls: ClassifyCache
    params: JdfdParams

    def backward(
        self,
        params: JdfdParams,
        dlogits: np.ndarray | None,
        dxhat: np.ndarray | None,
    ) -> np.ndarray:
        """Push loss gradients through both branches into the shared encoder.

        Either gradient may be None, in which case that branch contributes
        nothing (and its parameters keep exactly the gradients they had).
        Returns the gradient with respect to the input batch.
        """
        n = self.enc.fc.x.shape[0]
        dv = np.zeros((n, params.latent_dim), dtype=self.enc.fc.x.dtype)
        if dlogits is not None:
            dv += classify_backward(dlogits, self.cls, params)
        if dxhat is not None:
            if self.dec is None:
                raise ShapeError("reconstruction gradient given but no decoder was run")
            dv += decode_backward(dxhat, self.dec, params)
        return encode_backward(dv, self.enc, params)


def forward_joint(x: np.ndarray, params: JdfdParams, train: bool) -> tuple[ModelOutput, JointCache]:
    """One shared encode, then decode and classify from the same latents."""
    if x.shape[0] == 0:
        raise ShapeError("forward_joint: empty batch")
    v, enc = encode(x, params, train)
    dec_cache = None
    reconstruction = None
    if params.has_decoder:
        reconstruction, dec_cache = decode(v, params, train)
    logits, probs, cls = classify(v, params)
    out = ModelOutput(latent=v, reconstruction=reconstruction, logits=logits, probabilities=probs)
    return out, JointCache(enc=enc, dec=dec_cache, cls=cls, params=params)


# ---------------------------------------------------------------------------
# Checkpoint container
# ---------------------------------------------------------------------------

def _checkpoint_entries(params: JdfdParams) -> list[tuple[str, np.ndarray]]:
    h, w = params.image_size
    entries: list[tuple[str, np.ndarray]] = [
        ("meta.image_size", np.array([h, w], dtype=np.float64)),
        ("meta.latent_dim", np.array([params.latent_dim], dtype=np.float64)),
        ("meta.has_decoder", np.array([1.0 if params.has_decoder else 0.0])),
    ]
    entries.extend((name, t.data) for name, t in params.named_parameters())
    entries.extend(params.named_buffers())
    return entries


def save_params(params: JdfdParams, path: str) -> None:
    """Write the flat binary checkpoint (magic, then name/rank/dims/f64 data)."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        for name, arr in _checkpoint_entries(params):
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ValueError(f"checkpoint truncated: wanted {n} bytes, got {len(buf)}")
    return buf


def load_params(path: str, dtype=np.float64) -> JdfdParams:
    """Read a checkpoint back into a parameter set (bit-exact at float64)."""
    arrays: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a JDFD checkpoint: bad magic {magic!r}")
        while True:
            head = fh.read(4)
            if not head:
                break
            (name_len,) = struct.unpack("<I", head)
            name = _read_exact(fh, name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4))
            dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank))
            count = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(_read_exact(fh, 8 * count), dtype="<f8").reshape(dims)
            arrays[name] = data

    h, w = (int(v) for v in arrays.pop("meta.image_size"))
    latent_dim = int(arrays.pop("meta.latent_dim")[0])
    has_decoder = bool(arrays.pop("meta.has_decoder")[0])

    config = TrainConfig(image_size=h, latent_dim=latent_dim,
                         precision="double" if dtype == np.float64 else "single")
    params = init_params(config, Rng(0), with_decoder=has_decoder)
    expected = {name for name, _ in params.named_parameters()}
    expected |= {name for name, _ in params.named_buffers()}
    missing = expected - arrays.keys()
    extra = arrays.keys() - expected
    if missing or extra:
        raise ValueError(f"checkpoint mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
    for name, tensor in params.named_parameters():
        tensor.data = arrays[name].astype(dtype).copy()
        tensor.grad = np.zeros_like(tensor.data)
    buffers = dict(params.named_buffers())
    groups = [("encoder", params.encoder_blocks)]
    if has_decoder:
        groups.append(("decoder", params.decoder_blocks))
    for prefix, blocks in groups:
        for i, blk in enumerate(blocks):
            blk.bn.running_mean = arrays[f"{prefix}.block{i}.bn.running_mean"].astype(dtype).copy()
            blk.bn.running_var = arrays[f"{prefix}.block{i}.bn.running_var"].astype(dtype).copy()
    return params
