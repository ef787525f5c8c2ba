"""Row-selection kernels behind top-K sparse attention.

The compiled extension is used when it was built and imports cleanly;
otherwise the numpy fallback is selected.  Set ``SPARSETT_PURE_PYTHON=1``
to force the fallback.
"""

import os

from . import _pykernels as pure

compiled = None
if os.environ.get("SPARSETT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as compiled
    except ImportError:
        compiled = None

active = compiled if compiled is not None else pure
BACKEND = active.BACKEND

topk_indices = active.topk_indices
scatter_rows = active.scatter_rows
gather_rows = active.gather_rows
