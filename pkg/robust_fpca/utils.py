import os
import json
import hashlib
import tempfile
import logging
from contextlib import contextmanager
from typing import Iterator, TextIO

import yaml

from .errors import DataFileError


def get_yaml_config(yaml_file):
    # Load the configuration from the YAML file
    try:
        with open(yaml_file, 'r', encoding='utf-8') as file:
            config = yaml.safe_load(file)
    except OSError as e:
        raise DataFileError(f"cannot read configuration: {e}", path=yaml_file) from e
    except yaml.YAMLError as e:
        mark = getattr(e, 'problem_mark', None)
        line = mark.line + 1 if mark is not None else None
        raise DataFileError(f"invalid YAML: {e}", path=yaml_file, line=line) from e
    if config is not None and not isinstance(config, dict):
        raise DataFileError("configuration root must be a mapping", path=yaml_file)
    return config


def load_json_file(file_path) -> dict:
    try:
        with open(file_path, 'r', encoding='utf-8') as json_file:
            return json.load(json_file)
    except OSError as e:
        raise DataFileError(f"cannot read: {e}", path=file_path) from e
    except json.JSONDecodeError as e:
        raise DataFileError(f"invalid JSON: {e.msg}", path=file_path, line=e.lineno) from e


def create_folder(path):
    if path and not os.path.exists(path):
        os.makedirs(path)


def file_digest(file_path) -> str:
    sha = hashlib.sha256()
    with open(file_path, 'rb') as file:
        for block in iter(lambda: file.read(1 << 16), b''):
            sha.update(block)
    return sha.hexdigest()


@contextmanager
def atomic_write(file_path) -> Iterator[TextIO]:
    """Write to a temporary file next to the target and rename it into place."""
    directory = os.path.dirname(os.path.abspath(file_path))
    create_folder(directory)
    fd, tmp_path = tempfile.mkstemp(prefix='.tmp_', dir=directory)
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='') as handle:
            yield handle
        os.replace(tmp_path, file_path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def write_json_file(file_path, payload: dict) -> str:
    try:
        with atomic_write(file_path) as handle:
            json.dump(payload, handle, indent=2, sort_keys=True)
            handle.write('\n')
    except OSError as e:
        raise DataFileError(f"cannot write: {e}", path=file_path) from e
    logging.getLogger().debug(f"wrote {file_path}")
    return file_path
