"""
config.py

Project settings and simulation defaults for the EM-exposure-aware uplink
experiments (RIS + dynamic metasurface antenna receiver).
Experiment files (config.yaml and friends) override these per run.

Environment overrides:
1. EMSE_OUTPUT_DIR - where result CSVs are written
2. EMSE_JOBS       - default joblib worker count
"""

import os
from pathlib import Path

# System dimensions
NUM_USERS = 4
USER_ANTENNAS = 4
RIS_ELEMENTS = 16
MICROSTRIPS = 8
ELEMENTS_PER_MICROSTRIP = 8

# Link budget
NOISE_DBM = -96.0
PATHLOSS_DB = 120.0
HOP1_DB = 60.0  # RIS -> BS share of PATHLOSS_DB, the rest goes to user -> RIS
OMEGA_DECAY = 0.3

# EM exposure
SAR_BUDGET = 0.8  # W/kg
SAR_FIRST_ROW = [8.0, -6.0j, -2.1, 0.0]  # kg^-1, Toeplitz Hermitian

# Sweeps
PMAX_DBM_GRID = [-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0]
SAR_BUDGET_GRID = [0.4, 0.8]
NUM_SEEDS = 10

# Stopping thresholds
EPS_BCD = 1e-6      # RIS outer loop
EPS_MM = 1e-6       # RIS inner loop
EPS_DMA = 1e-8      # DMA weight fitting
EPS_DE = 1e-10      # deterministic-equivalent fixed point
EPS_INNER = 1e-6    # water-filling / DE refresh loop
EPS_AO = 1e-5       # overall alternating optimization
MU_FLOOR = 1e-12
DMA_DELTA = 1e-6

MAX_OUTER = 50
MC_SAMPLES = 10000
MC_CHUNK = 256

# File paths - dynamically computed for portability
PROJECT_ROOT = str(Path(__file__).resolve().parent)
RESULTS_DIR = os.getenv('EMSE_OUTPUT_DIR', f"{PROJECT_ROOT}/results")
DEFAULT_CONFIG = f"{PROJECT_ROOT}/config.yaml"

DEFAULT_JOBS = int(os.getenv('EMSE_JOBS', '1'))


def validate_defaults():
    """
    Check the module-level defaults for obvious mistakes.

    Returns:
        list: human-readable problems, empty when everything is consistent
    """
    problems = []
    counts = {
        'NUM_USERS': NUM_USERS,
        'USER_ANTENNAS': USER_ANTENNAS,
        'RIS_ELEMENTS': RIS_ELEMENTS,
        'MICROSTRIPS': MICROSTRIPS,
        'ELEMENTS_PER_MICROSTRIP': ELEMENTS_PER_MICROSTRIP,
    }
    for name, value in counts.items():
        if value < 1:
            problems.append(f"{name} must be >= 1 (got {value})")

    if not 0 < HOP1_DB < PATHLOSS_DB:
        problems.append(f"HOP1_DB must lie inside (0, {PATHLOSS_DB})")
    if SAR_BUDGET <= 0 or any(d <= 0 for d in SAR_BUDGET_GRID):
        problems.append("SAR budgets must be positive")
    if DEFAULT_JOBS == 0:
        problems.append("EMSE_JOBS must be nonzero")

    return problems


def print_config_status():
    """
    Print configuration status for debugging.
    """
    problems = validate_defaults()

    print("="*60)
    print("Configuration Status")
    print("="*60)
    print(f"Users x antennas:  {NUM_USERS} x {USER_ANTENNAS}")
    print(f"RIS elements:      {RIS_ELEMENTS}")
    print(f"DMA:               {MICROSTRIPS} microstrips x {ELEMENTS_PER_MICROSTRIP} elements")
    print(f"Noise:             {NOISE_DBM} dBm")
    print(f"Path loss:         {PATHLOSS_DB} dB ({HOP1_DB} dB on RIS -> BS)")
    print(f"SAR budget:        {SAR_BUDGET} W/kg")
    print(f"Results dir:       {RESULTS_DIR}")
    print(f"Workers:           {DEFAULT_JOBS}")
    print("="*60)

    for problem in problems:
        print(f"\n{problem}")

    print()


if __name__ == "__main__":
    print_config_status()
