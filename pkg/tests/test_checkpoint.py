import struct

import numpy as np
import pytest

from legaussians.checkpoint import (
    MAGIC,
    BadMagicError,
    SceneCheckpoint,
    TruncatedSectionError,
    UnsupportedVersionError,
    load_checkpoint,
    save_checkpoint,
)
from legaussians.heads import init_decoder, init_smoothing_mlp
from legaussians.quantizer import Codebook
from legaussians.scene import GaussianCloud

from oracles import random_cloud


def _ckpt():
    rng = np.random.default_rng(0)
    cloud = random_cloud(rng, 7).astype(np.float32)
    cloud.labels[:] = rng.integers(-1, 4, 7)
    return SceneCheckpoint(
        gaussians=cloud,
        codebook=Codebook(rng.normal(size=(5, 6)).astype(np.float32), 4, 2, 0.5),
        decoder=init_decoder(5, rng),
        smooth_mlp=init_smoothing_mlp(rng, pe_frequencies=2),
        meta={"step": 3, "note": "x"},
    )


def test_roundtrip_is_bit_identical(tmp_path):
    ck = _ckpt()
    save_checkpoint(tmp_path / "a.leg3d", ck)
    back = load_checkpoint(tmp_path / "a.leg3d")
    for name in GaussianCloud.PARAMS + ("labels",):
        assert np.array_equal(getattr(back.gaussians, name), getattr(ck.gaussians, name)), name
    assert np.array_equal(back.codebook.entries, ck.codebook.entries)
    assert back.codebook.lambda_dino == 0.5
    for a, b in zip(back.decoder.params() + back.smooth_mlp.params(), ck.decoder.params() + ck.smooth_mlp.params()):
        assert np.array_equal(a, b)
    assert back.smooth_mlp.pe_frequencies == 2 and back.decoder.pe_frequencies is None
    assert back.meta == ck.meta


def test_partial_checkpoint(tmp_path):
    save_checkpoint(tmp_path / "c.leg3d", SceneCheckpoint(codebook=_ckpt().codebook))
    back = load_checkpoint(tmp_path / "c.leg3d")
    assert back.gaussians is None and back.codebook.n == 5


def test_bad_magic(tmp_path):
    p = tmp_path / "a.leg3d"
    save_checkpoint(p, _ckpt())
    data = bytearray(p.read_bytes())
    data[0] ^= 0xFF
    p.write_bytes(bytes(data))
    with pytest.raises(BadMagicError, match="bad magic"):
        load_checkpoint(p)


def test_unsupported_version(tmp_path):
    p = tmp_path / "a.leg3d"
    save_checkpoint(p, _ckpt())
    data = bytearray(p.read_bytes())
    data[len(MAGIC):len(MAGIC) + 4] = struct.pack("<I", 99)
    p.write_bytes(bytes(data))
    with pytest.raises(UnsupportedVersionError):
        load_checkpoint(p)


def test_truncation_names_the_section(tmp_path):
    p = tmp_path / "a.leg3d"
    save_checkpoint(p, _ckpt())
    data = p.read_bytes()
    # the decoder section starts after GAUSS and CODEBOOK; cut inside it
    cut = data.index(b"DECODER") + 16 + 8 + 40
    p.write_bytes(data[:cut])
    with pytest.raises(TruncatedSectionError, match="DECODER") as e:
        load_checkpoint(p)
    assert e.value.section == "DECODER"
