"""Federated dynamic sparse training simulator bindings."""

try:
    from ._fedsgc import *  # noqa: F401,F403  (installed package layout)
except ImportError:  # pragma: no cover - in-tree builds put the module on sys.path
    from _fedsgc import *  # noqa: F401,F403
