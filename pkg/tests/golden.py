"""Published per-class increment tables (PSNR gain in dB of columns 1..4, classes 1..6)."""
import numpy as np

TRAIN_TABLE = np.array([
    [11.134, 0.642, 0.351, 0.178],
    [10.959, 0.406, 0.211, 0.100],
    [9.184, 0.214, 0.105, 0.047],
    [6.215, 0.121, 0.050, 0.021],
    [3.468, 0.079, 0.024, 0.011],
    [2.380, 0.047, 0.016, 0.009],
])

TEST_TABLE = np.array([
    [10.275, 0.653, 0.383, 0.170],
    [9.622, 0.355, 0.208, 0.093],
    [8.097, 0.191, 0.100, 0.045],
    [5.397, 0.103, 0.050, 0.021],
    [2.859, 0.073, 0.014, 0.010],
    [1.510, 0.022, 0.006, 0.004],
])

# exit columns per class as printed alongside the classifier results
PUBLISHED_EXITS_TAU_005 = (4, 4, 3, 2, 1, 1)
PUBLISHED_EXITS_TAU_010 = (4, 3, 2, 2, 1, 1)

GOLDEN_EXITS_TAU_005 = (4, 4, 3, 3, 2, 1)
