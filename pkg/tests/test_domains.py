import dataclasses
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from puppetgan import domains as dm
from puppetgan.errors import (
    ConfigError,
    ContractError,
    DegenerateRenderError,
    IdxFormatError,
    RangeError,
    StateError,
)
from puppetgan.metrics.moments import measure_rotation, rotation_batch

UPRIGHT_ONE = dm.AttributeVector(1, 0.0, 1.0, 2.0, (0.0, 0.0))


def collapsed(spec, keep):
    """Spec whose ranges other than ``keep`` are single points."""
    ranges = {k: (v[0], v[0]) if k not in keep else v for k, v in spec.attribute_ranges.items()}
    return dataclasses.replace(spec, attribute_ranges=ranges)


# -------------------------------------------------------------- rendering

def test_upright_one_measures_zero(specs):
    _, syn = specs
    assert abs(measure_rotation(dm.render_glyph(UPRIGHT_ONE, syn).pixels)) <= 3.0


def test_rotation_difference_tracks_parameter(specs):
    _, syn = specs
    tilted = dataclasses.replace(UPRIGHT_ONE, rotation_deg=30.0)
    d = measure_rotation(dm.render_glyph(tilted, syn).pixels) - measure_rotation(
        dm.render_glyph(UPRIGHT_ONE, syn).pixels)
    assert d == pytest.approx(30.0, abs=3.0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), style=st.sampled_from([dm.SYNTHETIC, dm.REAL_PROXY]))
def test_render_is_pure_and_in_range(seed, style):
    spec = dm.DomainSpec("d", style)
    params = dm.sample_params(np.random.default_rng(seed), spec)
    a = dm.render_glyph(params, spec, seed=seed).pixels
    b = dm.render_glyph(params, spec, seed=seed).pixels
    assert np.array_equal(a, b)
    assert a.dtype == np.float32 and a.shape == (32, 32)
    assert a.min() >= -1.0 and a.max() <= 1.0
    assert np.mean(a > -0.9) >= 0.01


def test_out_of_range_params_rejected(specs):
    _, syn = specs
    with pytest.raises(RangeError):
        dm.render_glyph(dataclasses.replace(UPRIGHT_ONE, rotation_deg=60.0), syn)


def test_tiny_glyph_is_degenerate():
    spec = dm.DomainSpec("tiny", dm.SYNTHETIC, {"size_scale": (0.01, 1.0), "stroke_width": (0.05, 2.5)})
    with pytest.raises(DegenerateRenderError):
        dm.render_glyph(dm.AttributeVector(1, 0.0, 0.01, 0.05), spec)


def test_non_finite_attribute_rejected():
    with pytest.raises(RangeError):
        dm.AttributeVector(1, float("nan"), 1.0, 2.0)


def test_domain_spec_validation():
    with pytest.raises(ConfigError):
        dm.DomainSpec("x", dm.SYNTHETIC, image_size=8)
    with pytest.raises(ConfigError):
        dm.DomainSpec("x", dm.SYNTHETIC, {"rotation_deg": (5.0, -5.0)})
    with pytest.raises(ConfigError):
        dm.DomainSpec("x", dm.SYNTHETIC, {"colour": (0, 1)})
    with pytest.raises(ConfigError):
        dm.DomainSpec("x", "cursive")


# --------------------------------------------------------------- triplets

@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), aoi=st.sampled_from(["rotation", "size_scale", "class_id",
                                                            "stroke_width", "offset_xy"]))
def test_triplet_contract_holds(seed, aoi):
    _, syn = dm.domain_pair()
    t = dm.sample_triplet(seed, syn, aoi)
    dm.check_triplet(t)
    name = dm.canonical_aoi(aoi)
    assert t.b1.source_params.get(name) == t.b3.source_params.get(name)


def test_collapsed_non_aoi_ranges_make_b2_equal_b3(specs):
    _, syn = specs
    spec = collapsed(syn, keep={"rotation_deg"})
    t = dm.sample_triplet(3, spec, "rotation_deg")
    assert t.b1.source_params.rotation_deg == t.b3.source_params.rotation_deg
    spec = collapsed(syn, keep={"size_scale"})
    t = dm.sample_triplet(3, spec, "rotation_deg")
    assert np.array_equal(t.b2.pixels, t.b3.pixels)


def test_check_triplet_catches_violations(specs):
    _, syn = specs
    t = dm.sample_triplet(0, syn, "rotation_deg")
    bad = dataclasses.replace(t, b3=t.b2)
    if t.b1.source_params.rotation_deg != t.b2.source_params.rotation_deg:
        with pytest.raises(ContractError):
            dm.check_triplet(bad)
    with pytest.raises(ContractError):
        dm.check_triplet(dataclasses.replace(t, b2=dm.GlyphImage(t.b2.pixels, None)))


def test_unknown_aoi_is_config_error(specs):
    _, syn = specs
    with pytest.raises(ConfigError):
        dm.sample_triplet(0, syn, "colour")


def test_triplets_need_synthetic_style(specs):
    real, _ = specs
    with pytest.raises(ConfigError):
        dm.sample_triplet(0, real, "rotation_deg")


def test_b1_b2_rotations_uncorrelated(specs):
    _, syn = specs
    rng = np.random.default_rng(0)
    pairs = np.array([[p1.rotation_deg, p2.rotation_deg]
                      for p1, p2, _ in (dm.sample_triplet_params(rng, syn, "rotation_deg")
                                        for _ in range(10_000))])
    assert abs(np.corrcoef(pairs.T)[0, 1]) < 0.05


# ------------------------------------------------------------------- real

def test_zero_perturbation_real_matches_render(specs):
    real, syn = specs
    clean = dataclasses.replace(real, perturbation=dm.Perturbation.zero())
    g = dm.sample_real(11, clean)
    assert np.array_equal(g.pixels, dm.render_glyph(g.source_params, syn).pixels)


def test_real_proxy_is_perturbed(specs):
    real, syn = specs
    g = dm.sample_real(11, real)
    assert not np.array_equal(g.pixels, dm.render_glyph(g.source_params, syn).pixels)


def test_real_proxy_rotation_span(specs):
    real, _ = specs
    imgs, _ = dm.sample_real_batch(np.random.default_rng(5), real, 1000)
    theta = rotation_batch(imgs)
    theta = theta[np.isfinite(theta)]
    assert theta.max() - theta.min() > 60.0


def test_external_without_archive_is_state_error():
    spec = dm.DomainSpec("ext", dm.EXTERNAL)
    with pytest.raises(StateError):
        dm.sample_real(0, spec)


def test_external_index_uniform():
    n = 20
    images = np.stack([np.full((32, 32), i / n * 2 - 1, np.float32) for i in range(n)])
    spec = dm.DomainSpec("ext", dm.EXTERNAL).with_archive(dm.LabeledImages(images, np.arange(n)))
    rng = np.random.default_rng(0)
    draws = [int(round((dm._sample_real(rng, spec).pixels[0, 0] + 1) / 2 * n)) for _ in range(10_000)]
    counts = np.bincount(draws, minlength=n)
    assert chisquare(counts).pvalue > 0.01
    assert dm.sample_real(1, spec).source_params is None


def test_smaller_synth_below_real_range():
    real, syn = dm.domain_pair("smaller_synth")
    assert syn.attribute_ranges["size_scale"][1] < real.attribute_ranges["size_scale"][0]
    with pytest.raises(ConfigError):
        dm.domain_pair("bigger_synth")


# -------------------------------------------------------------------- IDX

def _idx(magic, dims, payload):
    return struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in dims) + bytes(payload)


def test_minimal_idx_image(tmp_path):
    p = tmp_path / "one.idx"
    p.write_bytes(_idx(0x803, (1, 4, 4), range(0, 256, 16)))
    imgs = dm.read_idx_images(p)
    assert imgs.shape == (1, 4, 4) and imgs.dtype == np.uint8
    assert imgs[0, 0, 1] == 16


def test_byte_endpoints():
    assert dm.from_bytes(np.array([0, 255], np.uint8)).tolist() == [-1.0, 1.0]
    assert dm.to_bytes(np.array([-1.0, 1.0])).tolist() == [0, 255]


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 255), min_size=16, max_size=16))
def test_byte_round_trip(values):
    raw = np.array(values, np.uint8)
    assert np.array_equal(dm.to_bytes(dm.from_bytes(raw)), raw)


def test_bad_magic_names_file_and_offset(tmp_path):
    p = tmp_path / "bad.idx"
    p.write_bytes(_idx(0x801, (1, 4, 4), [0] * 16))
    with pytest.raises(IdxFormatError) as exc:
        dm.read_idx_images(p)
    assert "bad.idx" in str(exc.value) and exc.value.offset == 0


def test_truncated_payload(tmp_path):
    p = tmp_path / "short.idx"
    p.write_bytes(_idx(0x803, (2, 4, 4), [0] * 20))
    with pytest.raises(IdxFormatError):
        dm.read_idx_images(p)


def test_label_count_mismatch(tmp_path):
    imgs, labs = tmp_path / "i.idx", tmp_path / "l.idx"
    imgs.write_bytes(_idx(0x803, (2, 4, 4), [0] * 32))
    labs.write_bytes(_idx(0x801, (3,), [1, 2, 3]))
    with pytest.raises(IdxFormatError) as exc:
        dm.load_idx(imgs, labs)
    assert "l.idx" in str(exc.value) or "i.idx" in str(exc.value)


def test_idx_write_read_round_trip_and_resize(tmp_path):
    rng = np.random.default_rng(0)
    raw = rng.integers(0, 256, size=(5, 28, 28), dtype=np.uint8)
    dm.write_idx_images(tmp_path / "i.idx", raw)
    dm.write_idx_labels(tmp_path / "l.idx", np.arange(5))
    assert np.array_equal(dm.read_idx_images(tmp_path / "i.idx"), raw)
    data = dm.load_idx(tmp_path / "i.idx", tmp_path / "l.idx", image_size=32)
    assert data.images.shape == (5, 32, 32)
    assert data.images.min() >= -1.0 and data.images.max() <= 1.0
    assert data.labels.tolist() == [0, 1, 2, 3, 4]
