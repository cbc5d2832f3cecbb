"""NodeDrop: dead-node margins, regularizers, liveness scans and compaction.

Submodules are imported explicitly (``src.nodedrop.scan``, ...) to keep this
package importable from ``models.network`` without cycles.
"""
