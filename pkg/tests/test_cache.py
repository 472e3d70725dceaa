"""
Tests for the constants cache.
"""
import json

from carnotlip.cache import CacheManager


class TestCacheManager:
    """Test cache storage and retrieval."""

    def test_missing_constant(self, tmp_path):
        """Test a missing key returns None."""
        cache = CacheManager(str(tmp_path / "cache"))
        assert cache.get_constant("diameter:heisenberg-1") is None

    def test_save_and_reload(self, tmp_path):
        """Test a saved constant is visible to a new manager."""
        CacheManager(str(tmp_path / "cache")).save_constant("grushin_axis:budget4", 2.5,
                                                            {'budget': 4})
        assert CacheManager(str(tmp_path / "cache")).get_constant("grushin_axis:budget4") == 2.5

    def test_file_name_sanitized(self, tmp_path):
        """Test keys with separators map to safe file names."""
        cache = CacheManager(str(tmp_path / "cache"))
        cache.save_constant("diameter:heisenberg-1:seed0", 1.25)
        files = list((tmp_path / "cache" / "constants").iterdir())
        assert [f.name for f in files] == ["diameter_heisenberg-1_seed0.json"]
        record = json.loads(files[0].read_text())
        assert record['key'] == "diameter:heisenberg-1:seed0"

    def test_corrupt_file(self, tmp_path):
        """Test an unreadable record is treated as missing."""
        cache = CacheManager(str(tmp_path / "cache"))
        (tmp_path / "cache" / "constants" / "bad.json").write_text("{not json")
        assert cache.get_constant("bad") is None

    def test_clear_cache(self, tmp_path):
        """Test clearing removes stored constants."""
        cache = CacheManager(str(tmp_path / "cache"))
        cache.save_constant("k", 1.0)
        cache.clear_cache()
        assert cache.get_constant("k") is None
        assert (tmp_path / "cache" / "constants").exists()
