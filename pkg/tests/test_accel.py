import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from bumpercar._accel import USE_NUMBA
from helpers import kernel_outputs

HERE = Path(__file__).parent


@pytest.mark.skipif(not USE_NUMBA, reason="numba not active; nothing to compare against")
def test_numpy_fallback_matches_compiled(tmp_path):
    target = tmp_path / "fallback.npz"
    code = f"import numpy as np, helpers; np.savez({str(target)!r}, **helpers.kernel_outputs())"
    env = {**os.environ, "BUMPERCAR_NO_NUMBA": "1", "PYTHONPATH": os.pathsep.join([str(HERE), *sys.path])}
    subprocess.run([sys.executable, "-c", code], check=True, env=env, cwd=HERE, timeout=600)
    fast = kernel_outputs()
    with np.load(target) as slow:
        assert str(slow["backend"]) == "numpy" and str(fast["backend"]) == "numba"
        for key, value in fast.items():
            if key == "backend":
                continue
            # libm and LLVM may differ in the last bit of a transcendental
            assert np.allclose(slow[key], value, rtol=1e-9, atol=1e-11, equal_nan=True), key
