"""Backend selection for the hash-chain kernels.

The compiled extension is used when it imports cleanly. Setting
``TBRD_PURE_PYTHON=1`` forces the pure-Python fallback.
"""

import os

from . import _chain_py

if os.environ.get("TBRD_PURE_PYTHON", "") not in ("", "0"):
    _impl = _chain_py
    BACKEND = "python"
else:
    try:
        from . import _chain as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = _chain_py
        BACKEND = "python"

hash_forward = _impl.hash_forward
hash_chain = _impl.hash_chain

# both implementations, for tests and the benchmark
python_kernels = _chain_py
try:
    from . import _chain as compiled_kernels
except ImportError:
    compiled_kernels = None

__all__ = ["BACKEND", "hash_chain", "hash_forward", "python_kernels", "compiled_kernels"]
