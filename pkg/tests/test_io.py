import os

import numpy as np
import pytest

from dured import io as dio
from dured.errors import FormatError
from dured.sampling import SamplingPDF, draw_mask
from dured.unrolled import DuredConfig, DuredParams, make_training_sample, train
from dured.phantoms import shepp_logan

from conftest import random_image


def test_image_round_trip_bit_exact(tmp_path, rng):
    x = random_image(rng, (7, 5))
    x[0, 0] = -0.0 + 1e-300j
    dio.write_image(tmp_path / "a.cimg", x)
    back = dio.read_image(tmp_path / "a.cimg")
    assert back.tobytes() == x.tobytes()


def test_image_layout(tmp_path):
    x = np.array([[1 + 2j, 3 - 4j]])
    dio.write_image(tmp_path / "a.cimg", x)
    blob = (tmp_path / "a.cimg").read_bytes()
    header, payload = blob.split(b"\n", 1)
    assert header.startswith(b"CIMG1 ")
    assert b'"dtype": "c64le"' in header and b'"height": 1' in header and b'"width": 2' in header
    assert len(payload) == 16 * 2
    np.testing.assert_array_equal(np.frombuffer(payload, "<f8"), [1, 2, 3, -4])


def test_image_magic_mismatch(tmp_path):
    draw = draw_mask(SamplingPDF(0.3, 1.0, 8, 8), 0)
    dio.write_mask(tmp_path / "m.mask", draw)
    with pytest.raises(FormatError, match="magic"):
        dio.read_image(tmp_path / "m.mask")


def test_image_truncated_payload(tmp_path, rng):
    dio.write_image(tmp_path / "a.cimg", random_image(rng, (4, 4)))
    blob = (tmp_path / "a.cimg").read_bytes()
    (tmp_path / "a.cimg").write_bytes(blob[:-3])
    with pytest.raises(FormatError):
        dio.read_image(tmp_path / "a.cimg")


def test_image_corrupt_header(tmp_path):
    (tmp_path / "a.cimg").write_bytes(b"CIMG1 {not json\n")
    with pytest.raises(FormatError):
        dio.read_image(tmp_path / "a.cimg")


@pytest.mark.parametrize("mode", ["full-2D", "rows-only-1D"])
def test_mask_round_trip_and_regeneration(tmp_path, mode):
    draw = draw_mask(SamplingPDF(0.21, 1.7, 12, 10, mode), 2**40 + 3)
    dio.write_mask(tmp_path / "m.mask", draw)
    back = dio.read_mask(tmp_path / "m.mask")
    assert np.array_equal(back.mask, draw.mask)
    assert back.weights.tobytes() == draw.weights.tobytes()
    assert back.pdf == draw.pdf and back.seed == draw.seed
    regenerated = draw_mask(back.pdf, back.seed)
    assert regenerated.weights.tobytes() == draw.weights.tobytes()


def test_mask_tampering_detected(tmp_path):
    draw = draw_mask(SamplingPDF(0.3, 1.0, 8, 8), 1)
    dio.write_mask(tmp_path / "m.mask", draw)
    blob = bytearray((tmp_path / "m.mask").read_bytes())
    blob[-1] ^= 1
    (tmp_path / "m.mask").write_bytes(bytes(blob))
    with pytest.raises(FormatError):
        dio.read_mask(tmp_path / "m.mask")
    assert dio.read_mask(tmp_path / "m.mask", verify=False).weights.shape == (8, 8)


def test_weights_round_trip_bit_exact(tmp_path):
    cfg = DuredConfig(depth=3, hidden=4, shared_denoiser=False)
    params = DuredParams.initialize(cfg, 5)
    params.lam.value = np.array(np.pi)
    dio.write_weights(tmp_path / "w.dnet", params, cfg, epoch=3)
    back, cfg2, header = dio.read_weights(tmp_path / "w.dnet")
    assert cfg2 == cfg and header["epoch"] == 3
    assert len(back.nets) == 2
    for a, b in zip(back.parameters(), params.parameters()):
        assert a.value.tobytes() == b.value.tobytes()
        assert a.step_count == 0


def test_weights_with_optimizer_state(tmp_path):
    x = shepp_logan(8, phase_mode="smooth")
    cfg = DuredConfig(depth=2, hidden=3, epochs=2)
    result = train([make_training_sample(x, SamplingPDF(0.3, 1.0, 8, 8), 1, 2)], cfg, 0)
    dio.write_weights(tmp_path / "w.dnet", result.params, cfg, epoch=2, optimizer=True)
    back, _, header = dio.read_weights(tmp_path / "w.dnet")
    assert header["optimizer"] is True
    for a, b in zip(back.parameters(), result.params.parameters()):
        assert a.value.tobytes() == b.value.tobytes()
        assert a.adam_m.tobytes() == b.adam_m.tobytes() and a.adam_v.tobytes() == b.adam_v.tobytes()
        assert a.step_count == b.step_count == 2


def test_weights_wrong_length(tmp_path):
    params = DuredParams.initialize(DuredConfig(depth=2, hidden=3))
    dio.write_weights(tmp_path / "w.dnet", params)
    blob = (tmp_path / "w.dnet").read_bytes()
    (tmp_path / "w.dnet").write_bytes(blob + b"\0" * 8)
    with pytest.raises(FormatError):
        dio.read_weights(tmp_path / "w.dnet")


def test_csv_format(tmp_path):
    dio.write_csv(tmp_path / "r.csv", ["a", "b"], [(1, 0.1), (2, 1 / 3)])
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines == ["a,b", "1,0.1", f"2,{1 / 3!r}"]
    assert float(lines[2].split(",")[1]) == 1 / 3


def test_config_parsing(tmp_path):
    (tmp_path / "c.cfg").write_text("# comment\nmu = 0.25\ndim-mode=1d  # trailing\n\nseed=7\n")
    assert dio.read_config(tmp_path / "c.cfg") == {"mu": "0.25", "dim_mode": "1d", "seed": "7"}
    (tmp_path / "bad.cfg").write_text("just words\n")
    with pytest.raises(FormatError):
        dio.read_config(tmp_path / "bad.cfg")


class TestViewable:
    def test_constant_image(self, tmp_path):
        dio.write_image(tmp_path / "c.cimg", np.full((4, 6), 2 - 1j))
        dio.export_viewable(tmp_path / "c.cimg", tmp_path / "c.pgm")
        gray = dio.read_pgm(tmp_path / "c.pgm")
        assert gray.shape == (4, 6) and np.all(gray == 255)

    def test_zero_image(self, tmp_path):
        dio.write_image(tmp_path / "z.cimg", np.zeros((5, 5)))
        dio.export_viewable(tmp_path / "z.cimg", tmp_path / "z.pgm")
        assert not dio.read_pgm(tmp_path / "z.pgm").any()

    def test_scaling_oracle(self, tmp_path, rng):
        x = random_image(rng, (9, 7))
        dio.write_image(tmp_path / "x.cimg", x)
        dio.export_viewable(tmp_path / "x.cimg", tmp_path / "x.pgm")
        gray = dio.read_pgm(tmp_path / "x.pgm").astype(float)
        oracle = abs(x) / abs(x).max() * 255
        assert np.max(abs(gray - oracle)) <= 1

    def test_pgm_header(self, tmp_path):
        dio.write_pgm(tmp_path / "g.pgm", np.arange(6, dtype=np.uint8).reshape(2, 3))
        assert (tmp_path / "g.pgm").read_bytes() == b"P5\n3 2\n255\n" + bytes(range(6))

    def test_pgm_with_comment(self, tmp_path):
        (tmp_path / "g.pgm").write_bytes(b"P5\n# made by hand\n2 1\n255\n\x07\x09")
        np.testing.assert_array_equal(dio.read_pgm(tmp_path / "g.pgm"), [[7, 9]])


def test_atomic_write_leaves_no_temp_files(tmp_path, rng):
    for _ in range(3):
        dio.write_image(tmp_path / "a.cimg", random_image(rng, (3, 3)))
    assert os.listdir(tmp_path) == ["a.cimg"]


def test_failed_write_keeps_old_file(tmp_path, rng):
    x = random_image(rng, (3, 3))
    dio.write_image(tmp_path / "a.cimg", x)
    with pytest.raises(ValueError):
        dio.write_image(tmp_path / "a.cimg", np.zeros(4))
    assert dio.read_image(tmp_path / "a.cimg").tobytes() == x.tobytes()
    assert os.listdir(tmp_path) == ["a.cimg"]
