import hashlib
import json
import os
from typing import Dict, Iterable, List, Union

import pandas as pd


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def write_json(path: str, data) -> str:
    """Deterministic JSON (sorted keys, trailing newline)."""
    with open(path, 'w') as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write('\n')
    return path


def read_json(path: str):
    with open(path) as f:
        return json.load(f)


def write_csv(path: str, rows: Union[pd.DataFrame, Iterable[Dict]], columns: List[str] = None) -> str:
    frame = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows), columns=columns)
    frame.to_csv(path, index=False, float_format='%.10g')
    return path


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for block in iter(lambda: f.read(1 << 20), b''):
            digest.update(block)
    return digest.hexdigest()


def write_manifest(out_dir: str, files: List[str]) -> str:
    """
    manifest.json lists every emitted artifact (relative to out_dir) with its
    SHA-256. The manifest itself is not listed.
    """
    entries = {}
    for path in sorted(set(files)):
        rel = os.path.relpath(path, out_dir)
        entries[rel] = sha256_file(path)
    return write_json(os.path.join(out_dir, 'manifest.json'), {'files': entries})


def verify_manifest(out_dir: str) -> Dict[str, bool]:
    manifest = read_json(os.path.join(out_dir, 'manifest.json'))
    result = {}
    for rel, digest in manifest['files'].items():
        path = os.path.join(out_dir, rel)
        result[rel] = os.path.exists(path) and sha256_file(path) == digest
    return result
