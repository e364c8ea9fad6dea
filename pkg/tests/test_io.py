import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leafroi import io
from leafroi.data import GenConfig, gen_dataset
from leafroi.errors import ConfigurationError, FormatError
from leafroi.networks import build_classifier, build_roi_subnet, fuse
from leafroi.training import MetricsReport, TrainConfig


def test_mask_round_trip_and_payload_size(tmp_path):
    m = np.array([[0, 1], [2, 0]], dtype=np.uint8)
    p = tmp_path / "m.pgm"
    io.write_mask(p, m)
    raw = p.read_bytes()
    assert raw.startswith(b"P5")
    assert raw.endswith(bytes([0, 1, 2, 0]))
    assert len(raw) == len(b"P5\n2 2\n255\n") + 4
    assert np.array_equal(io.read_mask(p), m)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.integers(0, 2 ** 31))
def test_mask_round_trip_is_exact(tmp_path_factory, h, w, seed):
    m = np.random.default_rng(seed).integers(0, 3, (h, w)).astype(np.uint8)
    p = tmp_path_factory.mktemp("m") / "m.pgm"
    io.write_mask(p, m)
    assert np.array_equal(io.read_mask(p), m)


def test_image_quantization(tmp_path):
    img = np.zeros((3, 2, 3))
    img[0, 0, 0] = 1.0
    img[1, 1, 2] = 0.5
    p = tmp_path / "i.ppm"
    io.write_image(p, img)
    back = io.read_image(p)
    assert back[0, 0, 0] == 1.0
    assert back[1, 1, 2] == 128 / 255
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12
    io.write_image(p, back)
    assert np.array_equal(io.read_image(p), back)


def test_mask_label_out_of_range_on_read(tmp_path):
    p = tmp_path / "bad.pgm"
    p.write_bytes(b"P5\n2 1\n255\n\x00\x03")
    with pytest.raises(FormatError, match="out of range"):
        io.read_mask(p)


def test_truncated_and_malformed_headers(tmp_path):
    p = tmp_path / "t.pgm"
    p.write_bytes(b"P5\n4 4\n255\n\x00\x01")
    with pytest.raises(FormatError, match="truncated at byte"):
        io.read_mask(p)
    p.write_bytes(b"P5\n4 x\n255\n")
    with pytest.raises(FormatError, match="byte 5"):
        io.read_mask(p)
    p.write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
    with pytest.raises(FormatError, match="expected P5"):
        io.read_mask(p)


def test_header_comments_are_skipped(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# a comment\n1 2\n255\n\x01\x02")
    assert io.read_mask(p).tolist() == [[1], [2]]


def test_write_rejects_bad_values(tmp_path):
    with pytest.raises(FormatError):
        io.write_mask(tmp_path / "x.pgm", np.array([[3]]))
    with pytest.raises(FormatError):
        io.write_image(tmp_path / "x.ppm", np.zeros((1, 2, 2)))


# ---------------------------------------------------------------------------
# checkpoints


@pytest.mark.parametrize("kind", ["roi", "cls", "fused"])
def test_checkpoint_round_trip_is_bit_exact(tmp_path, kind):
    roi = build_roi_subnet(32, seed=1)
    cls = build_classifier(6, input_size=32, seed=2)
    net = {"roi": roi, "cls": cls, "fused": fuse(roi, cls)}[kind]
    p = tmp_path / "n.ckpt"
    io.save_checkpoint(net, p)
    back = io.load_checkpoint(p)
    assert back.spec.to_text() == net.spec.to_text()
    for k in net.params:
        assert back.params[k].data.tobytes() == net.params[k].data.tobytes()
    x = np.random.default_rng(0).uniform(-0.5, 0.5, (2, 6 if kind == "cls" else 3, 32, 32))
    assert net.forward(x).data.tobytes() == back.forward(x).data.tobytes()


def test_checkpoint_layout(tmp_path):
    net = build_classifier(3, input_size=16, seed=0, widths=(1, 1, 1, 1), hidden=2)
    p = tmp_path / "n.ckpt"
    io.save_checkpoint(net, p)
    raw = p.read_bytes()
    assert raw[:4] == b"RSC1"
    assert int.from_bytes(raw[4:8], "little") == 1
    n_spec = int.from_bytes(raw[8:12], "little")
    assert raw[12:12 + n_spec].decode() == net.spec.to_text()
    n_values = sum(t.size for t in net.parameters())
    assert len(raw) > 8 * n_values


def test_checkpoint_rejects_bad_magic_version_and_truncation(tmp_path):
    net = build_classifier(3, input_size=16, seed=0, widths=(1, 1, 1, 1), hidden=2)
    p = tmp_path / "n.ckpt"
    io.save_checkpoint(net, p)
    raw = p.read_bytes()
    q = tmp_path / "bad.ckpt"
    q.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError, match="magic"):
        io.load_checkpoint(q)
    q.write_bytes(raw[:4] + (2).to_bytes(4, "little") + raw[8:])
    with pytest.raises(FormatError, match="version"):
        io.load_checkpoint(q)
    q.write_bytes(raw[:-3])
    with pytest.raises(FormatError, match="truncated"):
        io.load_checkpoint(q)
    with pytest.raises(FormatError):
        io.load_checkpoint(tmp_path / "missing.ckpt")


def test_checkpoint_shape_disagreement_names_parameter(tmp_path):
    small = build_classifier(3, input_size=16, seed=0, widths=(1, 1, 1, 1), hidden=2)
    wide = build_classifier(3, input_size=16, seed=0, widths=(2, 1, 1, 1), hidden=2)
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    io.save_checkpoint(small, a)
    io.save_checkpoint(wide, b)
    ra, rb = a.read_bytes(), b.read_bytes()
    na, nb = (int.from_bytes(r[8:12], "little") for r in (ra, rb))
    # spec of the wide net with the parameters of the small one
    b.write_bytes(rb[:12 + nb] + ra[12 + na:])
    with pytest.raises(FormatError, match="conv1_1.weight"):
        io.load_checkpoint(b)


# ---------------------------------------------------------------------------
# configuration


def test_config_defaults_and_overrides():
    cfg = io.parse_config("train.epochs_roi = 3\n# comment\ndata.counts = 1, 2, 3\nbaseline.tap_layer = pool2\n")
    assert cfg.train.epochs_roi == 3
    assert cfg.train.lr_roi == TrainConfig().lr_roi
    assert cfg.data.counts == (1, 2, 3)
    assert cfg.baseline.tap_layer == "pool2"


def test_config_text_round_trip():
    cfg = io.RunConfig().with_seed(5)
    back = io.parse_config(cfg.to_text())
    assert back == cfg
    assert set(io.RunConfig.documented_keys()) == {line.split(" = ")[0] for line in cfg.to_text().splitlines()}


@pytest.mark.parametrize("text", ["train.nope = 1", "nope.seed = 1", "train.epochs_roi", "train.lr_roi = fast",
                                  "data.size = 90"])
def test_config_errors(text):
    with pytest.raises(ConfigurationError):
        io.parse_config(text)


# ---------------------------------------------------------------------------
# datasets and metrics


def test_dataset_round_trip(tmp_path):
    cfg = GenConfig(counts=(1, 2, 1), size=32)
    ds = gen_dataset(cfg)
    io.save_dataset(ds, tmp_path, cfg)
    back = io.load_dataset(tmp_path)
    assert back.names == ds.names
    assert np.array_equal(back.labels, ds.labels)
    assert np.array_equal(back.seeds, ds.seeds)
    assert np.array_equal(back.masks, ds.masks)
    assert np.abs(back.images - ds.images).max() <= 0.5 / 255 + 1e-12


def test_metrics_csv_append_and_parse(tmp_path):
    p = tmp_path / "m.csv"
    cls = MetricsReport(method="a", seed=1, n_test=4, accuracy=0.75)
    seg = MetricsReport(method="b", seed=1, n_test=4, mean_pixel_acc=0.123456, mean_iou=2 / 3)
    io.write_metrics_csv([cls], p)
    io.write_metrics_csv([seg], p)
    lines = p.read_text().splitlines()
    assert lines[0] == "method,seed,accuracy,mean_pixel_acc,mean_iou,n_test"
    assert lines[1] == "a,1,0.7500,,,4"
    assert lines[2] == "b,1,,0.1235,0.6667,4"
    rows = io.read_metrics_csv(p)
    assert rows[0]["accuracy"] == 0.75 and rows[0]["mean_iou"] is None
    assert rows[1]["mean_iou"] == round(2 / 3, 4)
    assert "0.7500" in io.format_table(rows)
