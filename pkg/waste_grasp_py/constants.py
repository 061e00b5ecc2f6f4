from pathlib import Path

import numpy as np

GLOBAL_CONFIG_DIR = Path.home() / ".waste-grasp-py"
GLOBAL_CONFIG_FILE = GLOBAL_CONFIG_DIR / "config.json"
CONFIG_ENV_VAR = "WASTE_GRASP_CONFIG"

DEFAULT_IMAGE_WIDTH = 640
DEFAULT_IMAGE_HEIGHT = 480
DEFAULT_DEPTH_SCALE = 0.001

# COCO protocol
IOU_THRESHOLDS = np.arange(50, 100, 5) / 100.0
RECALL_THRESHOLDS = np.arange(101) / 100.0
SMALL_AREA_LIMIT = 32 ** 2
LARGE_AREA_LIMIT = 96 ** 2

# relative eigenvalue gap below which the closed-form eigenvectors lose 1e-8 accuracy
EIGEN_GAP_TOLERANCE = 1e-3
NORMAL_UNIT_TOLERANCE = 1e-6
