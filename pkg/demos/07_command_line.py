"""
The ``priofuse`` command
========================

Drive the four subcommands from Python.  The same calls work from a
shell as ``priofuse enhance ...`` and so on.
"""

# %%
import json
import os
import tempfile

import numpy as np

from priofuse import Prng
from priofuse.cli import main
from priofuse.imageio import write_image
from priofuse.tensor import write_tensor

work = tempfile.mkdtemp()
image = os.path.join(work, "dark.ppm")
write_image(image, Prng(5).uniform((1, 3, 32, 40), 0, 0.2))

# %%
# Enhance an image; the report and tensor land next to the PPM output.
main(["enhance", image, "--out", os.path.join(work, "enh"), "--seed", "7"])
print(sorted(os.listdir(os.path.join(work, "enh"))))

# %%
# Fuse two feature tensors stored in the binary tensor format.
for name, seed in (("rgb", 8), ("ir", 9)):
    with open(os.path.join(work, f"{name}.depf"), "wb") as fh:
        fh.write(write_tensor(Prng(seed).uniform((1, 4, 8, 8), -1, 1).astype(np.float32)))
main(["fuse", os.path.join(work, "rgb.depf"), os.path.join(work, "ir.depf"),
      "--variant", "d", "--out", os.path.join(work, "fuse")])
with open(os.path.join(work, "fuse", "fused.json")) as fh:
    print({k: v for k, v in json.load(fh).items() if k in ("variant", "shape", "perms_equal")})

# %%
# A verification suite; exit code 0 means every check passed.
rc = main(["verify", "ssm", "--out", work])
print("exit code", rc)
