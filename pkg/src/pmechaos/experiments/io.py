"""Re-export of :mod:`pmechaos.io` for the experiment layer."""

from ..io import CSV_FIELDS, read_csv, save_array, sha256_file, write_csv, write_json

__all__ = ["CSV_FIELDS", "read_csv", "save_array", "sha256_file", "write_csv", "write_json"]
