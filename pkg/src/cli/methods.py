"""External denoisers: any executable run as ``<exe> <in.mrc> <out.mrc>``."""

import logging
import shlex
import subprocess
import tempfile
from pathlib import Path
from typing import Optional

from ..errors import ExternalMethodError
from ..ingestion.load_data import load_stack
from ..ingestion.mrc_io import write_mrc
from ..ingestion.schemas import ImageStack

logger = logging.getLogger(__name__)


def run_external(command: str, stack: ImageStack, timeout: Optional[float] = None) -> ImageStack:
    """
    Write the stack to a scratch MRC file, run the command on it, and read
    back its output. The output must hold as many images of the same shape.
    Metadata of the input stack is carried over.
    """
    argv = shlex.split(command)
    if not argv:
        raise ValueError("External method command is empty")

    with tempfile.TemporaryDirectory(prefix="denoise-adapter-") as scratch:
        in_path = Path(scratch) / "in.mrc"
        out_path = Path(scratch) / "out.mrc"
        write_mrc(stack, in_path)
        logger.info("Running external method: %s", " ".join(argv))
        try:
            completed = subprocess.run(
                [*argv, str(in_path), str(out_path)],
                capture_output=True, text=True, timeout=timeout, check=False,
            )
        except (FileNotFoundError, subprocess.TimeoutExpired) as exc:
            raise ExternalMethodError(f"{argv[0]}: {exc}") from exc
        if completed.returncode != 0:
            raise ExternalMethodError(
                f"{argv[0]} exited with status {completed.returncode}: {completed.stderr.strip()[-500:]}"
            )
        if not out_path.exists():
            raise ExternalMethodError(f"{argv[0]} did not write {out_path.name}")
        result = load_stack(out_path)

    if len(result) != len(stack) or result.image_shape != stack.image_shape:
        raise ExternalMethodError(
            f"{argv[0]} returned {len(result)} images of {result.image_shape}, "
            f"expected {len(stack)} of {stack.image_shape}"
        )
    return ImageStack(images=result.images, pixel_size=stack.pixel_size, metadata=stack.metadata)
