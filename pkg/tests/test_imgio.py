import json

import numpy as np
import pytest

from mpstack import imgio
from mpstack.edit import render
from mpstack.errors import LoadError
from mpstack.synth import write_scene_record

from conftest import make_scene


class TestQuantization:
    def test_u16_grid_round_trips_exactly(self):
        grid = np.arange(0, 65536, 257, dtype=np.uint16)
        values = imgio.dequantize_u16(grid)
        assert np.array_equal(imgio.quantize_u16(values), grid)

    def test_u8_grid_round_trips_exactly(self):
        grid = np.arange(256, dtype=np.uint8)
        values = imgio.dequantize_u8(grid)
        assert np.array_equal(imgio.quantize_u8(values), grid)

    def test_quantize_clips_out_of_range(self):
        assert imgio.quantize_u16(np.array([-0.5, 1.5]))[0] == 0
        assert imgio.quantize_u16(np.array([-0.5, 1.5]))[1] == 65535


class TestPngRoundTrips:
    def test_gray16_file_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        values = imgio.dequantize_u16(rng.integers(0, 65536, size=(9, 7), dtype=np.uint16))
        path = tmp_path / "a.png"
        imgio.save_gray16(path, values)
        assert np.array_equal(imgio.load_gray16(path), values)

    def test_rgb8_file_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        values = imgio.dequantize_u8(rng.integers(0, 256, size=(5, 6, 3), dtype=np.uint8))
        path = tmp_path / "c.png"
        imgio.save_rgb8(path, values)
        assert np.array_equal(imgio.load_rgb8(path), values)

    def test_depth16_round_trip_within_quantization(self, tmp_path):
        rng = np.random.default_rng(2)
        depth = rng.uniform(2.0, 11.0, size=(8, 8))
        path = tmp_path / "d.png"
        dmin, dmax = imgio.save_depth16(path, depth)
        back = imgio.load_depth16(path, dmin, dmax)
        assert np.abs(back - depth).max() <= (dmax - dmin) / 65535.0

    def test_constant_depth_round_trips(self, tmp_path):
        depth = np.full((4, 4), 3.5)
        path = tmp_path / "d.png"
        dmin, dmax = imgio.save_depth16(path, depth)
        assert np.array_equal(imgio.load_depth16(path, dmin, dmax), depth)

    def test_missing_file_raises_load_error(self, tmp_path):
        with pytest.raises(LoadError, match="missing file"):
            imgio.load_gray16(tmp_path / "nope.png")

    def test_encoding_is_deterministic(self):
        rng = np.random.default_rng(3)
        values = rng.uniform(size=(6, 6))
        assert imgio.encode_gray16(values) == imgio.encode_gray16(values)


class TestSceneBundles:
    def test_round_trip_preserves_structure(self, tmp_path):
        record = make_scene(seed=77, n_instances=3)
        manifest_path = write_scene_record(record, tmp_path / "scene")
        manifest = imgio.load_manifest(manifest_path)
        stack = imgio.load_stack(manifest)
        assert [p.plane_id for p in stack.planes] == [p.plane_id for p in record.stack.planes]
        assert [p.mean_depth for p in stack.planes] == [p.mean_depth for p in record.stack.planes]
        assert manifest.reorder_pair == record.reorder_pair
        assert manifest.seed == record.seed

    def test_loaded_render_matches_stored_composite_after_quantization(self, tmp_path):
        record = make_scene(seed=78, n_instances=3)
        manifest_path = write_scene_record(record, tmp_path / "scene")
        manifest = imgio.load_manifest(manifest_path)
        stack = imgio.load_stack(manifest)
        composite = imgio.load_rgb8(manifest.resolve(manifest.composite))
        # both sides quantized: they may differ by at most one 8-bit level
        rendered = imgio.dequantize_u8(imgio.quantize_u8(render(stack)))
        assert np.abs(rendered - composite).max() <= 1.0 / 255.0 + 1e-12

    def test_full_alphas_recoverable(self, tmp_path):
        record = make_scene(seed=79, n_instances=2)
        manifest = imgio.load_manifest(write_scene_record(record, tmp_path / "scene"))
        fulls = imgio.load_full_alphas(manifest)
        assert set(fulls) == {"i0", "i1"}
        stored = imgio.dequantize_u16(imgio.quantize_u16(record.ordered_layers[0].full_alpha))
        assert np.array_equal(fulls["i0"], stored)

    def test_bundle_write_is_deterministic(self, tmp_path):
        record = make_scene(seed=80, n_instances=2)
        a = write_scene_record(record, tmp_path / "a")
        b = write_scene_record(record, tmp_path / "b")
        assert a.read_bytes() == b.read_bytes()
        for name in sorted(p.name for p in a.parent.iterdir()):
            assert (a.parent / name).read_bytes() == (b.parent / name).read_bytes()


class TestManifestValidation:
    def _write_valid(self, tmp_path):
        record = make_scene(seed=81, n_instances=2)
        return write_scene_record(record, tmp_path / "scene")

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(LoadError, match="not found"):
            imgio.load_manifest(tmp_path / "manifest.json")

    def test_corrupt_json(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text("{nope")
        with pytest.raises(LoadError, match="not valid JSON"):
            imgio.load_manifest(path)

    def test_wrong_schema(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps({"schema": "other/9"}))
        with pytest.raises(LoadError, match="schema"):
            imgio.load_manifest(path)

    def test_missing_field_named(self, tmp_path):
        manifest_path = self._write_valid(tmp_path)
        doc = json.loads(manifest_path.read_text())
        del doc["layers"][0]["footprint"]
        manifest_path.write_text(json.dumps(doc))
        with pytest.raises(LoadError) as err:
            imgio.load_manifest(manifest_path)
        assert "footprint" in str(err.value)

    def test_bad_z_permutation(self, tmp_path):
        manifest_path = self._write_valid(tmp_path)
        doc = json.loads(manifest_path.read_text())
        doc["layers"][0]["z_index"] = 5
        manifest_path.write_text(json.dumps(doc))
        with pytest.raises(LoadError, match="permutation"):
            imgio.load_manifest(manifest_path)

    def test_missing_layer_file_named_on_load(self, tmp_path):
        manifest_path = self._write_valid(tmp_path)
        manifest = imgio.load_manifest(manifest_path)
        (manifest.resolve("i1_alpha.png")).unlink()
        with pytest.raises(LoadError, match="i1_alpha.png"):
            imgio.load_stack(manifest)

    def test_resolution_mismatch_detected(self, tmp_path):
        manifest_path = self._write_valid(tmp_path)
        manifest = imgio.load_manifest(manifest_path)
        imgio.save_gray16(manifest.resolve("i0_alpha.png"), np.zeros((4, 4)))
        with pytest.raises(LoadError, match="resolution"):
            imgio.load_stack(manifest)
