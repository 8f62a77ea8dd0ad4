"""
Tests for verify_results: checksum manifests for result CSVs.
"""

import verify_results


def _results(tmp_path):
    (tmp_path / 'se_vs_power.csv').write_text("schema_version,se\n1,2.5\n", encoding='utf-8')
    (tmp_path / 'se_vs_power.timing.csv').write_text("wall_time_s\n0.1\n", encoding='utf-8')
    return tmp_path


def test_timing_files_are_skipped(tmp_path):
    names = [p.name for p in verify_results.result_files(_results(tmp_path))]
    assert names == ['se_vs_power.csv']


def test_generate_then_verify(tmp_path):
    results = _results(tmp_path)
    manifest = tmp_path / 'checksums.json'
    verify_results.save_checksums(verify_results.generate_checksums(results), manifest)
    assert verify_results.verify_checksums(manifest, results)

    (results / 'se_vs_power.timing.csv').write_text("wall_time_s\n9.9\n", encoding='utf-8')
    assert verify_results.verify_checksums(manifest, results)


def test_modified_file_fails(tmp_path):
    results = _results(tmp_path)
    manifest = tmp_path / 'checksums.json'
    verify_results.save_checksums(verify_results.generate_checksums(results), manifest)
    (results / 'se_vs_power.csv').write_text("schema_version,se\n1,2.6\n", encoding='utf-8')
    assert not verify_results.verify_checksums(manifest, results)


def test_cli_exit_codes(tmp_path):
    results = _results(tmp_path)
    assert verify_results.main(['verify', '--results', str(results)]) == 1
    assert verify_results.main(['generate', '--results', str(results)]) == 0
    assert verify_results.main(['verify', '--results', str(results)]) == 0
