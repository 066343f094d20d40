"""Kernel backend selection.

The compiled extension (``_core``) is preferred when built; otherwise the
NumPy fallback is used. Override with GENAUG_KERNELS=c|py. The two backends
implement identical math (see benchmarks/bench_kernels.py for a comparison).
"""

import os

from . import fallback

_choice = os.environ.get("GENAUG_KERNELS", "auto").lower()

if _choice not in ("auto", "c", "py"):
    raise ValueError(f"GENAUG_KERNELS must be 'auto', 'c' or 'py', got {_choice!r}")

impl = None
if _choice in ("auto", "c"):
    try:
        from . import _core as impl  # type: ignore[no-redef]
    except ImportError:
        if _choice == "c":
            raise ImportError(
                "GENAUG_KERNELS=c but the compiled kernel extension is not built"
            )
if impl is None:
    impl = fallback

BACKEND = "c" if impl is not fallback else "py"

softmax_fwd = impl.softmax_fwd
softmax_bwd = impl.softmax_bwd
log_softmax_fwd = impl.log_softmax_fwd
log_softmax_bwd = impl.log_softmax_bwd
layernorm_fwd = impl.layernorm_fwd
layernorm_bwd = impl.layernorm_bwd
attn_fwd = impl.attn_fwd
attn_bwd = impl.attn_bwd
