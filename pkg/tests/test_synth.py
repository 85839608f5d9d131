"""Clean scene generation, degradation and dataset assembly."""

import json
import math

import numpy as np
import pytest

from src.core.errors import ConfigError, InputError
from src.services.images import ImageBuffer, read_ppm
from src.services.synth import (
    MANIFEST_NAME,
    PARAMS_NAME,
    DatasetManifest,
    DegradationParams,
    DegradationPolicy,
    degrade,
    depth_field,
    gen_clean,
    make_dataset,
)

WATER = dict(beta=(0.7, 0.3, 0.1), backscatter=(0.2, 0.5, 0.6))


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class TestGenClean:
    def test_deterministic(self):
        assert np.array_equal(gen_clean(3, 32, 16).pixels, gen_clean(3, 32, 16).pixels)

    def test_seeds_differ(self):
        assert not np.array_equal(gen_clean(1, 32, 32).pixels, gen_clean(2, 32, 32).pixels)

    @pytest.mark.parametrize("seed", [0, 1, 42])
    def test_textured_in_every_channel(self, seed):
        pixels = gen_clean(seed, 64, 64).pixels
        assert pixels.min() >= 0.0 and pixels.max() <= 1.0
        assert pixels.shape == (64, 64, 3)
        assert np.all(pixels.reshape(-1, 3).var(axis=0) > 1e-3)

    @pytest.mark.parametrize("size", [(15, 16), (16, 17), (8, 8)])
    def test_bad_extents(self, size):
        with pytest.raises(InputError):
            gen_clean(0, *size)


class TestDegrade:
    def test_zero_depth_is_identity(self, rng):
        clean = ImageBuffer(rng.uniform(size=(4, 4, 3)))
        degraded = degrade(clean, DegradationParams(depth=0.0, **WATER))
        assert np.allclose(degraded.pixels, clean.pixels)

    def test_scalar_red_channel(self):
        clean = ImageBuffer(np.ones((2, 2, 3)))
        degraded = degrade(clean, DegradationParams(depth=1.0, **WATER))
        expected = math.exp(-0.7) + 0.2 * (1 - math.exp(-0.7))
        assert expected == pytest.approx(0.5973, abs=1e-4)
        assert degraded.pixels[0, 0, 0] == pytest.approx(expected, rel=1e-6)

    def test_deep_water_is_backscatter(self, rng):
        clean = ImageBuffer(rng.uniform(size=(3, 3, 3)))
        degraded = degrade(clean, DegradationParams(depth=500.0, **WATER))
        assert np.allclose(degraded.pixels, np.broadcast_to(WATER["backscatter"], (3, 3, 3)), atol=1e-6)

    def test_monotone_in_depth(self, rng):
        clean = ImageBuffer(rng.uniform(size=(6, 6, 3)))
        backscatter = np.asarray(WATER["backscatter"])
        gaps = [np.abs(degrade(clean, DegradationParams(depth=d, **WATER)).pixels - backscatter)
                for d in (0.5, 1.0, 2.0, 4.0)]
        for shallow, deep in zip(gaps, gaps[1:]):
            assert np.all(deep <= shallow + 1e-6)

    def test_spatial_depth_field(self, rng):
        clean = ImageBuffer(np.ones((16, 16, 3)))
        depth = depth_field(rng, 16, 16, (0.5, 3.0))
        assert depth.min() == pytest.approx(0.5)
        assert depth.max() == pytest.approx(3.0)
        degraded = degrade(clean, DegradationParams(depth=depth, **WATER))
        red = degraded.pixels[..., 0]
        assert red[np.unravel_index(depth.argmin(), depth.shape)] > red[np.unravel_index(depth.argmax(), depth.shape)]

    def test_depth_field_shape_mismatch(self, rng):
        clean = ImageBuffer(np.ones((4, 4, 3)))
        with pytest.raises(InputError):
            degrade(clean, DegradationParams(depth=np.ones((4, 5)), **WATER))

    def test_noise_is_seeded(self, rng):
        clean = ImageBuffer(np.full((8, 8, 3), 0.5))
        params = DegradationParams(depth=1.0, noise_std=0.05, **WATER)
        assert np.array_equal(degrade(clean, params, seed=3).pixels, degrade(clean, params, seed=3).pixels)
        assert not np.array_equal(degrade(clean, params, seed=3).pixels, degrade(clean, params, seed=4).pixels)

    @pytest.mark.parametrize("overrides", [
        {"beta": (0.0, 0.3, 0.1)},
        {"backscatter": (0.2, 1.5, 0.6)},
        {"depth": -1.0},
        {"noise_std": -0.1},
    ])
    def test_invalid_params(self, overrides):
        values = {**WATER, "depth": 1.0, **overrides}
        with pytest.raises(InputError):
            DegradationParams(**values)


class TestPolicy:
    def test_default_ranges(self):
        policy = DegradationPolicy()
        assert policy.beta_red == (0.6, 0.8)

    def test_inverted_range(self):
        with pytest.raises(ConfigError):
            DegradationPolicy(depth=(3.0, 0.5))

    def test_backscatter_outside_unit(self):
        with pytest.raises(ConfigError):
            DegradationPolicy(backscatter_blue=(0.5, 1.2))

    def test_sample_within_ranges(self):
        policy = DegradationPolicy()
        params = policy.sample(np.random.default_rng(0), 16, 16)
        assert 0.6 <= params.beta[0] <= 0.8
        assert 0.5 - 1e-12 <= params.depth.min() and params.depth.max() <= 3.0 + 1e-12

    def test_dict_round_trip(self):
        policy = DegradationPolicy(noise_std=(0.0, 0.0))
        assert DegradationPolicy.from_dict(policy.to_dict()) == policy

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            DegradationPolicy.from_dict({"turbidity": [0, 1]})


class TestMakeDataset:
    def test_layout(self, small_dataset):
        manifest = small_dataset
        assert len(manifest.train) == 4 and len(manifest.test) == 2
        images = list(manifest.root.rglob("*.ppm"))
        assert len(images) == 12
        assert (manifest.root / MANIFEST_NAME).is_file()
        params = json.loads((manifest.root / PARAMS_NAME).read_text())
        assert params["seed"] == 7
        assert [record["seed"] for record in params["images"]] == [7 ^ i for i in range(6)]

    def test_degraded_differs_from_clean(self, small_dataset):
        for pair in small_dataset.pairs:
            clean, degraded = read_ppm(pair.clean), read_ppm(pair.degraded)
            assert np.mean((clean.pixels - degraded.pixels) ** 2) > 0

    def test_regeneration_is_byte_identical(self, tmp_path):
        first = make_dataset(2, 1, seed=11, policy=DegradationPolicy(), out_dir=tmp_path / "a", size=(16, 16))
        second = make_dataset(2, 1, seed=11, policy=DegradationPolicy(), out_dir=tmp_path / "b", size=(16, 16))
        assert tree_bytes(first.root) == tree_bytes(second.root)

    def test_independent_of_worker_count(self, tmp_path):
        serial = make_dataset(3, 2, seed=5, policy=DegradationPolicy(), out_dir=tmp_path / "one",
                              size=(16, 16), workers=1)
        parallel = make_dataset(3, 2, seed=5, policy=DegradationPolicy(), out_dir=tmp_path / "four",
                                size=(16, 16), workers=4)
        assert tree_bytes(serial.root) == tree_bytes(parallel.root)

    def test_empty_dataset(self, tmp_path):
        with pytest.raises(InputError):
            make_dataset(0, 0, seed=0, policy=DegradationPolicy(), out_dir=tmp_path)

    def test_negative_seed(self, tmp_path):
        with pytest.raises(InputError, match="seed"):
            make_dataset(1, 0, seed=-1, policy=DegradationPolicy(), out_dir=tmp_path)

    def test_odd_size(self, tmp_path):
        with pytest.raises(InputError):
            make_dataset(1, 0, seed=0, policy=DegradationPolicy(), out_dir=tmp_path, size=(17, 16))


class TestManifest:
    def test_load_from_directory(self, small_dataset):
        loaded = DatasetManifest.load(small_dataset.root)
        assert loaded.pairs == small_dataset.pairs
        assert loaded.seed == 7

    def test_unknown_split(self, small_dataset):
        with pytest.raises(InputError):
            small_dataset.split("val")

    def test_missing_image(self, small_dataset):
        small_dataset.test[0].clean.unlink()
        with pytest.raises(FileNotFoundError):
            DatasetManifest.load(small_dataset.path)

    def test_malformed_line(self, tmp_path):
        (tmp_path / MANIFEST_NAME).write_text("train\tonly-one-path\n")
        with pytest.raises(InputError):
            DatasetManifest.load(tmp_path)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            DatasetManifest.load(tmp_path / "nowhere.tsv")
