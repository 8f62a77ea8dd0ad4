"""
verify_results.py

Computes and verifies SHA-256 checksums for result CSVs, so that a
re-run with the same configuration and seeds can be checked byte for
byte against a previous one. Timing files are skipped since wall-clock
times differ between runs.

Usage:
  python scripts/verify_results.py [generate|verify] [--results DIR] [--manifest PATH]

Project: EM-Exposure-Aware Uplink Optimization
"""

import argparse
import hashlib
import json
import logging
import sys
from datetime import datetime
from pathlib import Path

sys.path.append(str(Path(__file__).resolve().parents[1]))
import config  # noqa: E402

logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)


def compute_sha256(filepath):
    """Compute SHA-256 checksum of a file."""
    sha256_hash = hashlib.sha256()
    with open(filepath, "rb") as f:
        for byte_block in iter(lambda: f.read(4096), b""):
            sha256_hash.update(byte_block)
    return sha256_hash.hexdigest()


def result_files(results_dir):
    """Result CSVs under results_dir, sorted, timing files excluded."""
    return sorted(p for p in Path(results_dir).glob("*.csv") if not p.name.endswith(".timing.csv"))


def generate_checksums(results_dir=config.RESULTS_DIR):
    logger.info("Generating checksums...")
    logger.info("="*60)

    checksums = {'generated_at': datetime.now().isoformat(), 'files': {}}
    for path in result_files(results_dir):
        digest = compute_sha256(path)
        checksums['files'][path.name] = {'sha256': digest, 'size_bytes': path.stat().st_size}
        logger.info(f"  {path.name}: {digest}")

    if not checksums['files']:
        logger.warning(f"No result CSVs found in {results_dir}")
    return checksums


def verify_checksums(manifest, results_dir=config.RESULTS_DIR):
    """Return True when every recorded file exists and matches."""
    logger.info("Verifying checksums...")
    logger.info("="*60)

    manifest = Path(manifest)
    if not manifest.exists():
        logger.error(f"Checksum file not found: {manifest}")
        return False

    stored = json.loads(manifest.read_text(encoding='utf-8'))
    all_valid = True
    for name, info in stored['files'].items():
        path = Path(results_dir) / name
        if not path.exists():
            logger.error(f"MISSING: {name}")
            all_valid = False
            continue
        current = compute_sha256(path)
        if current == info['sha256']:
            logger.info(f"  OK - {name}")
        else:
            logger.error(f"  MISMATCH - {name}")
            logger.error(f"    Expected: {info['sha256']}")
            logger.error(f"    Got: {current}")
            all_valid = False

    if all_valid:
        logger.info("All result files verified successfully!")
    else:
        logger.error("Verification failed - some result files are missing or modified")
    return all_valid


def save_checksums(checksums, output_file):
    Path(output_file).parent.mkdir(parents=True, exist_ok=True)
    Path(output_file).write_text(json.dumps(checksums, indent=2), encoding='utf-8')
    logger.info(f"Checksums saved to: {output_file}")


def main(argv=None):
    parser = argparse.ArgumentParser(description="Checksum result CSVs")
    parser.add_argument('mode', nargs='?', choices=('generate', 'verify'), default='generate')
    parser.add_argument('--results', default=str(config.RESULTS_DIR))
    parser.add_argument('--manifest', default=None)
    args = parser.parse_args(argv)
    manifest = args.manifest or str(Path(args.results) / "checksums.json")

    if args.mode == 'verify':
        return 0 if verify_checksums(manifest, args.results) else 1

    save_checksums(generate_checksums(args.results), manifest)
    logger.info("To verify a later run:")
    logger.info("  python scripts/verify_results.py verify")
    return 0


if __name__ == "__main__":
    sys.exit(main())
