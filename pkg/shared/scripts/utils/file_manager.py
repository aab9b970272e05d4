"""
File management utilities.
"""

import csv
import hashlib
import json
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, Sequence


class FileManager:
    """
    Utilities for the files a workbench run reads and writes.

    All writers produce byte-stable output for identical inputs: JSON is
    written with sorted keys and fixed separators, CSV with ``\\n`` line
    endings.
    """

    @staticmethod
    def ensure_directory(path) -> Path:
        """
        Ensure a directory exists, creating it if necessary.

        Args:
            path: Directory path

        Returns:
            Path object for the directory
        """
        dir_path = Path(path)
        dir_path.mkdir(parents=True, exist_ok=True)
        return dir_path

    @staticmethod
    def canonical_json(data: Any) -> str:
        """Serialize to the canonical single-line JSON used for hashing."""
        return json.dumps(data, sort_keys=True, separators=(",", ":"))

    @staticmethod
    def content_hash(data: Any, length: int = 16) -> str:
        """
        Hash a JSON-serializable value.

        Args:
            data: Value to hash
            length: Number of hex characters to keep

        Returns:
            Truncated SHA-256 hex digest of the canonical JSON
        """
        digest = hashlib.sha256(FileManager.canonical_json(data).encode("utf-8"))
        return digest.hexdigest()[:length]

    @staticmethod
    def write_json(path, data: Any) -> Path:
        """Write a pretty-printed JSON document with sorted keys."""
        file_path = Path(path)
        file_path.parent.mkdir(parents=True, exist_ok=True)
        with open(file_path, "w", newline="\n") as f:
            json.dump(data, f, indent=2, sort_keys=True)
            f.write("\n")
        return file_path

    @staticmethod
    def read_json(path) -> Any:
        with open(path, "r") as f:
            return json.load(f)

    @staticmethod
    def write_jsonl(path, records: Iterable[Dict[str, Any]]) -> int:
        """
        Write one canonical JSON object per line.

        Returns:
            Number of records written
        """
        file_path = Path(path)
        file_path.parent.mkdir(parents=True, exist_ok=True)
        count = 0
        with open(file_path, "w", newline="\n") as f:
            for record in records:
                f.write(FileManager.canonical_json(record))
                f.write("\n")
                count += 1
        return count

    @staticmethod
    def read_jsonl(path) -> Iterator[Dict[str, Any]]:
        with open(path, "r") as f:
            for line in f:
                line = line.strip()
                if line:
                    yield json.loads(line)

    @staticmethod
    def write_csv(path, columns: Sequence[str], rows: Iterable[Dict[str, Any]]) -> Path:
        """
        Write rows as CSV with a header line.

        Args:
            path: Output file
            columns: Column order; extra keys in a row are an error
            rows: Row dictionaries
        """
        file_path = Path(path)
        file_path.parent.mkdir(parents=True, exist_ok=True)
        with open(file_path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=list(columns), lineterminator="\n")
            writer.writeheader()
            for row in rows:
                writer.writerow(row)
        return file_path

    @staticmethod
    def merge_csv(parts: Sequence[Path], output) -> Path:
        """
        Concatenate CSV files that share one header, in the given order.

        Args:
            parts: Per-job CSV files
            output: Merged file path

        Returns:
            Path of the merged file
        """
        out_path = Path(output)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        header_written = False
        with open(out_path, "w", newline="\n") as out:
            for part in parts:
                with open(part, "r") as f:
                    lines = f.read().splitlines()
                if not lines:
                    continue
                if not header_written:
                    out.write(lines[0] + "\n")
                    header_written = True
                for line in lines[1:]:
                    out.write(line + "\n")
        return out_path

